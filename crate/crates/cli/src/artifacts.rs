//! Work-directory layout and provenance records.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use aupair::gateway::Budget;
use aupair::inference::Strategy;
use aupair::io::{file_sha256, write_json};
use serde::{Deserialize, Serialize};

/// An upstream artifact that has not been produced yet.
#[derive(Debug)]
pub struct MissingArtifact {
    pub what: &'static str,
    pub path: PathBuf,
    pub producer: &'static str,
}

impl fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "missing {} ({}); run {}",
            self.what,
            self.path.display(),
            self.producer
        )
    }
}

impl std::error::Error for MissingArtifact {}

/// Fixed file names under the work directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn curated(&self) -> PathBuf {
        self.root.join("curated.jsonl")
    }
    pub fn curation_report(&self) -> PathBuf {
        self.root.join("curation_report.json")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("split.json")
    }
    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.jsonl")
    }
    pub fn pairgen_report(&self) -> PathBuf {
        self.root.join("pairgen_report.json")
    }
    pub fn matrix(&self) -> PathBuf {
        self.root.join("matrix.bin")
    }
    pub fn aupairs(&self) -> PathBuf {
        self.root.join("aupairs.jsonl")
    }
    pub fn result(&self, s: Strategy, n: usize) -> PathBuf {
        self.root.join("results").join(format!("{s}-n{n}.jsonl"))
    }
    pub fn metrics(&self, s: Strategy, n: usize) -> PathBuf {
        self.root.join("metrics").join(format!("{s}-n{n}.json"))
    }
    pub fn metrics_dir(&self) -> PathBuf {
        self.root.join("metrics")
    }
    pub fn scaling(&self, s: Strategy, n: usize) -> PathBuf {
        self.root.join("scaling").join(format!("{s}-n{n}.csv"))
    }
    pub fn metrics_summary(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn analysis(&self, name: &str) -> PathBuf {
        self.root.join("analysis").join(name)
    }
    pub fn run_log(&self, phase: &str) -> PathBuf {
        self.root.join("logs").join(format!("runlog-{phase}.jsonl"))
    }
    pub fn provenance_dir(&self) -> PathBuf {
        self.root.join("provenance")
    }
    pub fn provenance(&self, phase: &str) -> PathBuf {
        self.provenance_dir().join(format!("{phase}.json"))
    }

    /// Errors with the producing command when `path` is absent.
    pub fn require(&self, path: PathBuf, what: &'static str, producer: &'static str) -> anyhow::Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(MissingArtifact { what, path, producer }.into())
        }
    }

    fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .replace('\\', "/")
    }
}

/// What one command read and wrote. Holds no timestamps, so identical runs
/// produce identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_digest: String,
    /// Work-directory-relative path to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub budget: Option<Budget>,
}

impl Provenance {
    pub fn record(
        layout: &Layout,
        command: &str,
        config_digest: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        budget: Option<Budget>,
    ) -> anyhow::Result<Self> {
        let digest = |paths: &[PathBuf]| -> anyhow::Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| {
                    let sha = file_sha256(p).with_context(|| format!("hashing {}", p.display()))?;
                    Ok((layout.relative(p), sha))
                })
                .collect()
        };
        Ok(Provenance {
            command: command.to_string(),
            config_digest: config_digest.to_string(),
            inputs: digest(inputs)?,
            outputs: digest(outputs)?,
            budget,
        })
    }

    pub fn save(&self, layout: &Layout, phase: &str) -> anyhow::Result<()> {
        let path = layout.provenance(phase);
        write_json(&path, self).with_context(|| format!("writing {}", path.display()))
    }
}

/// A provenance check that failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProvenanceIssue {
    pub phase: String,
    pub file: String,
    pub problem: String,
}

/// Re-hashes every recorded file and checks that each input matches the
/// output digest recorded by whichever phase produced it.
pub fn verify_provenance(layout: &Layout) -> anyhow::Result<(usize, Vec<ProvenanceIssue>)> {
    let dir = layout.provenance_dir();
    let mut records = BTreeMap::new();
    if dir.exists() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let phase = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let p: Provenance = serde_json::from_slice(&std::fs::read(&path)?)
                    .with_context(|| format!("reading {}", path.display()))?;
                records.insert(phase, p);
            }
        }
    }
    let mut produced: BTreeMap<&str, &str> = BTreeMap::new();
    for p in records.values() {
        for (file, sha) in &p.outputs {
            produced.insert(file, sha);
        }
    }
    let mut issues = Vec::new();
    let issue = |phase: &str, file: &str, problem: String| ProvenanceIssue {
        phase: phase.to_string(),
        file: file.to_string(),
        problem,
    };
    for (phase, p) in &records {
        for (file, sha) in &p.outputs {
            match file_sha256(&layout.root.join(file)) {
                Ok(now) if &now == sha => {}
                Ok(_) => issues.push(issue(phase, file, "output changed since it was written".into())),
                Err(e) => issues.push(issue(phase, file, format!("output unreadable: {e}"))),
            }
        }
        for (file, sha) in &p.inputs {
            if let Some(upstream) = produced.get(file.as_str()) {
                if upstream != sha {
                    issues.push(issue(phase, file, "input differs from the current upstream output".into()));
                }
            }
        }
    }
    Ok((records.len(), issues))
}
