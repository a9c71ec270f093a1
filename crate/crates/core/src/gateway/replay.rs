use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, BackendKind, Completion, GatewayError, GenerationRecord, GenerationRequest};
use crate::io::write_json;

/// Content-addressed response store. Each cache key holds the responses
/// observed for it, in call order; the n-th request with a key replays the
/// n-th response.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayStore {
    entries: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct StoreEntry {
    cache_key: String,
    responses: Vec<String>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a GenerationRecord>) -> Self {
        let mut store = Self::new();
        store.import_records(records);
        store
    }

    pub fn import_records<'a>(&mut self, records: impl IntoIterator<Item = &'a GenerationRecord>) {
        let mut sorted: Vec<&GenerationRecord> = records.into_iter().collect();
        sorted.sort_by_key(|r| r.call_index);
        for r in sorted {
            self.push(&r.cache_key, r.response_text.clone());
        }
    }

    pub fn push(&mut self, key: &str, response: String) {
        self.entries.entry(key.to_string()).or_default().push(response);
    }

    pub fn responses(&self, key: &str) -> Option<&[String]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads every `<key>.json` file of a store directory. A missing
    /// directory is an empty store.
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        let mut store = Self::new();
        if !dir.exists() {
            return Ok(store);
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = std::fs::read(&path)?;
            let entry: StoreEntry = serde_json::from_slice(&bytes)
                .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
            store.entries.insert(entry.cache_key, entry.responses);
        }
        Ok(store)
    }

    pub fn save(&self, dir: &Path) -> Result<(), GatewayError> {
        for key in self.entries.keys() {
            self.save_key(dir, key)?;
        }
        Ok(())
    }

    fn save_key(&self, dir: &Path, key: &str) -> Result<(), GatewayError> {
        let entry = StoreEntry {
            cache_key: key.to_string(),
            responses: self.entries.get(key).cloned().unwrap_or_default(),
        };
        write_json(&dir.join(format!("{key}.json")), &entry)?;
        Ok(())
    }
}

pub enum ReplayMode {
    /// A miss is an error.
    Strict,
    /// A miss is forwarded to the fallback backend and the answer is stored.
    Permissive(Box<dyn Backend>),
}

/// Serves responses from a [`ReplayStore`]; never touches the network unless
/// a permissive fallback is configured and the store misses.
pub struct ReplayBackend {
    store: Mutex<ReplayStore>,
    cursors: Mutex<HashMap<String, usize>>,
    mode: ReplayMode,
    persist_dir: Option<PathBuf>,
}

impl ReplayBackend {
    pub fn new(store: ReplayStore, mode: ReplayMode) -> Self {
        ReplayBackend {
            store: Mutex::new(store),
            cursors: Mutex::new(HashMap::new()),
            mode,
            persist_dir: None,
        }
    }

    pub fn strict(store: ReplayStore) -> Self {
        Self::new(store, ReplayMode::Strict)
    }

    /// Writes newly fetched responses back into `dir`.
    pub fn persist_to(mut self, dir: impl Into<PathBuf>) -> Self {
        self.persist_dir = Some(dir.into());
        self
    }

    pub fn store(&self) -> ReplayStore {
        self.store.lock().unwrap().clone()
    }
}

impl Backend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Completion, BackendError> {
        let key = request.cache_key();
        let occurrence = {
            let mut cursors = self.cursors.lock().unwrap();
            let c = cursors.entry(key.clone()).or_insert(0);
            let n = *c;
            *c += 1;
            n
        };
        if let Some(text) = self
            .store
            .lock()
            .unwrap()
            .responses(&key)
            .and_then(|r| r.get(occurrence))
        {
            return Ok(Completion {
                text: text.clone(),
                backend: BackendKind::Replay,
            });
        }
        match &self.mode {
            ReplayMode::Strict => Err(BackendError::CacheMiss(key)),
            ReplayMode::Permissive(fallback) => {
                let completion = fallback.complete(request)?;
                let mut store = self.store.lock().unwrap();
                store.push(&key, completion.text.clone());
                if let Some(dir) = &self.persist_dir {
                    if let Err(e) = store.save_key(dir, &key) {
                        log::warn!("could not persist replay entry {key}: {e}");
                    }
                }
                Ok(completion)
            }
        }
    }
}
