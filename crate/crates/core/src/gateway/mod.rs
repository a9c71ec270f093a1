//! Text generation behind interchangeable backends, with call accounting.
//!
//! A [`Gateway`] owns one [`Backend`], a [`Budget`] and a run log. Every
//! successful backend call consumes exactly one unit of budget and appends
//! exactly one [`GenerationRecord`] to the log, so `records == used` holds for
//! every run. Transport failures that survive the backend's retries still
//! consume budget and are logged with an empty response.

mod http;
mod replay;
mod scripted;

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::{HttpBackend, HttpConfig};
pub use replay::{ReplayBackend, ReplayMode, ReplayStore};
pub use scripted::{Condition, OracleRule, OracleRuleset, ResponseTemplate, ScriptedOracle};

use crate::io::{read_jsonl, JsonlError};

/// Who asked, and about what. Ignored by the cache key; scripted oracles
/// route on it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_id: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pair_ids: Vec<String>,
    /// Source problem of every in-context pair, parallel to `pair_ids`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pair_problem_ids: Vec<String>,
    /// Caller-defined attempt counter (e.g. sample index within a problem).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 1.0,
            max_tokens: 2048,
            stop_sequences: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    /// Phase or purpose label, e.g. `"guess"`, `"pairgen"`, `"feedback"`.
    pub tag: String,
    #[serde(default)]
    pub meta: RequestMeta,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, tag: impl Into<String>, sampling: &SamplingParams) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            temperature: sampling.temperature,
            max_tokens: sampling.max_tokens,
            stop_sequences: sampling.stop_sequences.clone(),
            tag: tag.into(),
            meta: RequestMeta::default(),
        }
    }

    pub fn with_meta(mut self, meta: RequestMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.prompt.is_empty() {
            return Err(GatewayError::InvalidRequest("empty prompt".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be non-negative",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over the prompt and sampling parameters.
    pub fn cache_key(&self) -> String {
        #[derive(Serialize)]
        struct KeyFields<'a> {
            prompt: &'a str,
            temperature: f64,
            max_tokens: u32,
            stop_sequences: &'a [String],
        }
        let bytes = serde_json::to_vec(&KeyFields {
            prompt: &self.prompt,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            stop_sequences: &self.stop_sequences,
        })
        .expect("key fields serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Replay,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub request: GenerationRequest,
    pub response_text: String,
    pub backend: BackendKind,
    pub cache_key: String,
    pub call_index: u64,
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub backend: BackendKind,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BackendError {
    /// The call could not be completed after all retries.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("replay cache miss for key {0}")]
    CacheMiss(String),
}

pub trait Backend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &GenerationRequest) -> Result<Completion, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub limit: u64,
    pub used: u64,
}

impl Budget {
    pub fn new(limit: u64) -> Self {
        Budget { limit, used: 0 }
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.used
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("budget of {limit} calls exhausted")]
    BudgetExhausted { limit: u64 },
    #[error("budget too small: need {needed} calls, {remaining} remaining")]
    InsufficientBudget { needed: u64, remaining: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cache key {0} maps to two different prompts")]
    KeyCollision(String),
    #[error("oracle ruleset references unknown problem {0:?}")]
    UnknownProblem(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("run log: {0}")]
    Log(#[from] std::io::Error),
    #[error("run log: {0}")]
    LogRead(#[from] JsonlError),
}

/// Append-only record of every call in a run.
pub struct RunLog {
    sink: Option<BufWriter<File>>,
    retained: Option<Vec<GenerationRecord>>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        RunLog {
            sink: None,
            retained: Some(Vec::new()),
        }
    }

    /// Starts a fresh log file, truncating any previous content.
    pub fn create(path: &Path) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(RunLog {
            sink: Some(BufWriter::new(File::create(path)?)),
            retained: None,
        })
    }

    pub fn append_to(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunLog {
            sink: Some(BufWriter::new(file)),
            retained: None,
        })
    }

    /// Keeps records in memory as well as writing them.
    pub fn retaining(mut self) -> Self {
        self.retained.get_or_insert_with(Vec::new);
        self
    }

    fn push(&mut self, record: GenerationRecord) -> std::io::Result<()> {
        if let Some(sink) = &mut self.sink {
            serde_json::to_writer(&mut *sink, &record)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        if let Some(v) = &mut self.retained {
            v.push(record);
        }
        Ok(())
    }
}

pub fn read_run_log(path: &Path) -> Result<Vec<GenerationRecord>, JsonlError> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

struct Accounting {
    budget: Budget,
    in_flight: u64,
    active: usize,
}

/// Uniform generation entry point. Safe to share across worker threads.
pub struct Gateway {
    backend: Box<dyn Backend>,
    accounting: Mutex<Accounting>,
    slot_free: Condvar,
    parallelism: usize,
    log: Mutex<RunLog>,
    prompt_digests: Mutex<HashMap<String, [u8; 32]>>,
}

impl Gateway {
    pub fn new(backend: Box<dyn Backend>, budget_limit: u64, log: RunLog) -> Self {
        Gateway {
            backend,
            accounting: Mutex::new(Accounting {
                budget: Budget::new(budget_limit),
                in_flight: 0,
                active: 0,
            }),
            slot_free: Condvar::new(),
            parallelism: 1,
            log: Mutex::new(log),
            prompt_digests: Mutex::new(HashMap::new()),
        }
    }

    /// Maximum number of backend calls in progress at once.
    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn budget(&self) -> Budget {
        self.accounting.lock().unwrap().budget
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Fails early when fewer than `needed` calls remain.
    pub fn require(&self, needed: u64) -> Result<(), GatewayError> {
        let acc = self.accounting.lock().unwrap();
        let remaining = acc.budget.remaining() - acc.in_flight;
        if needed > remaining {
            return Err(GatewayError::InsufficientBudget { needed, remaining });
        }
        Ok(())
    }

    /// Records retained in memory (empty unless the log was built with
    /// [`RunLog::in_memory`] or [`RunLog::retaining`]).
    pub fn records(&self) -> Vec<GenerationRecord> {
        self.log.lock().unwrap().retained.clone().unwrap_or_default()
    }

    fn check_collision(&self, key: &str, prompt: &str) -> Result<(), GatewayError> {
        let digest: [u8; 32] = Sha256::digest(prompt.as_bytes()).into();
        let mut seen = self.prompt_digests.lock().unwrap();
        match seen.get(key) {
            Some(d) if *d != digest => Err(GatewayError::KeyCollision(key.to_string())),
            Some(_) => Ok(()),
            None => {
                seen.insert(key.to_string(), digest);
                Ok(())
            }
        }
    }

    pub fn generate(&self, request: GenerationRequest) -> Result<GenerationRecord, GatewayError> {
        request.validate()?;
        let key = request.cache_key();
        self.check_collision(&key, &request.prompt)?;
        {
            let mut acc = self.accounting.lock().unwrap();
            if acc.budget.used + acc.in_flight >= acc.budget.limit {
                return Err(GatewayError::BudgetExhausted {
                    limit: acc.budget.limit,
                });
            }
            acc.in_flight += 1;
            while acc.active >= self.parallelism {
                acc = self.slot_free.wait(acc).unwrap();
            }
            acc.active += 1;
        }

        let result = self.backend.complete(&request);

        let mut log = self.log.lock().unwrap();
        let mut acc = self.accounting.lock().unwrap();
        acc.active -= 1;
        acc.in_flight -= 1;
        self.slot_free.notify_one();
        let completion = match result {
            Ok(c) => c,
            Err(BackendError::Transport(msg)) => {
                log::warn!("generation failed after retries, recording empty response: {msg}");
                Completion {
                    text: String::new(),
                    backend: self.backend.kind(),
                }
            }
            Err(e) => return Err(e.into()),
        };
        let record = GenerationRecord {
            request,
            response_text: completion.text,
            backend: completion.backend,
            cache_key: key,
            call_index: acc.budget.used,
        };
        log.push(record.clone())?;
        acc.budget.used += 1;
        Ok(record)
    }
}
