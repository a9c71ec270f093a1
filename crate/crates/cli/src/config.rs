//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use aupair::evaluator::{RunLimits, RunnerCommand};
use aupair::gateway::{HttpConfig, SamplingParams};
use aupair::inference::{Strategy, DEFAULT_FEEDBACKS, DEFAULT_REPAIRS_PER_FEEDBACK};
use aupair::model::SplitRatios;
use aupair::prompt::PromptStyle;
use serde::{Deserialize, Serialize};

/// Every problem found while loading a config, reported together.
#[derive(Debug)]
pub struct ValidationError(pub Vec<String>);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for e in &self.0 {
            write!(f, "\n  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory for every artifact and run log.
    pub work_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub sampling: SamplingParams,
    pub runner: RunnerConfig,
    pub budgets: Budgets,
    #[serde(default)]
    pub pairgen: PairGenSection,
    #[serde(default)]
    pub extract: ExtractSection,
    #[serde(default)]
    pub prompt: PromptSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub problems: PathBuf,
    /// Allowed difficulty labels; unchecked when absent.
    #[serde(default)]
    pub difficulty_vocabulary: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_train")]
    pub train: f64,
    #[serde(default = "default_val")]
    pub val: f64,
    #[serde(default = "default_test")]
    pub test: f64,
}

fn default_train() -> f64 {
    SplitRatios::default().train
}
fn default_val() -> f64 {
    SplitRatios::default().val
}
fn default_test() -> f64 {
    SplitRatios::default().test
}

impl SplitConfig {
    pub fn ratios(&self) -> SplitRatios {
        SplitRatios::new(self.train, self.val, self.test)
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        let r = SplitRatios::default();
        SplitConfig {
            seed: 0,
            train: r.train,
            val: r.val,
            test: r.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Scripted,
    Http,
    Replay,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendChoice,
    /// Rule file for the scripted backend.
    #[serde(default)]
    pub oracle: Option<PathBuf>,
    #[serde(default)]
    pub http: Option<HttpConfig>,
    /// Store served by the replay backend.
    #[serde(default)]
    pub replay_dir: Option<PathBuf>,
    /// Backend asked on a replay miss; misses are errors when absent.
    #[serde(default)]
    pub replay_fallback: Option<BackendChoice>,
    /// When set, every phase's calls are added to a replay store here.
    #[serde(default)]
    pub record_dir: Option<PathBuf>,
    #[serde(default = "one")]
    pub parallelism: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunnerConfig {
    pub program: PathBuf,
    /// Runner script passed before the code and input paths.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default = "default_wall")]
    pub wall_timeout_secs: f64,
    #[serde(default = "default_output_cap")]
    pub max_output_bytes: usize,
    /// Tests of one problem run at once.
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub numeric_tolerance: Option<f64>,
}

fn default_wall() -> f64 {
    10.0
}
fn default_output_cap() -> usize {
    1 << 20
}
fn one() -> usize {
    1
}

impl RunnerConfig {
    pub fn command(&self) -> RunnerCommand {
        let mut cmd = RunnerCommand::new(&self.program);
        if let Some(script) = &self.script {
            cmd = cmd.arg(script.to_string_lossy().into_owned());
        }
        cmd
    }

    pub fn limits(&self) -> RunLimits {
        RunLimits {
            wall_timeout: Duration::from_secs_f64(self.wall_timeout_secs.max(0.0)),
            max_output_bytes: self.max_output_bytes,
        }
    }
}

/// Generation-call budgets. The matrix budget is implied by `|C| * |D_val|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    /// Calls for initial guesses; must cover every problem.
    pub curation: u64,
    /// Pair-generation loop iterations.
    pub pairgen: u64,
    /// Per-problem inference budget N.
    pub inference: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairGenSection {
    /// Maximum in-context pairs per pair-generation prompt.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_k() -> usize {
    aupair::pairgen::DEFAULT_K
}

impl Default for PairGenSection {
    fn default() -> Self {
        PairGenSection { k: default_k(), seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSection {
    /// Stop once no pair adds at least this much mean score.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub parallelism: usize,
}

fn default_epsilon() -> f64 {
    aupair::extraction::DEFAULT_TOLERANCE
}

impl Default for ExtractSection {
    fn default() -> Self {
        ExtractSection {
            epsilon: default_epsilon(),
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSection {
    #[serde(default)]
    pub style: PromptStyle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    /// Self-repair feedback generations f.
    #[serde(default = "default_f")]
    pub feedbacks: usize,
    /// Self-repair repairs per feedback r.
    #[serde(default = "default_r")]
    pub repairs_per_feedback: usize,
    #[serde(default)]
    pub random_seed: u64,
    /// Draw at most one random pair per source problem.
    #[serde(default = "yes")]
    pub dedup_random: bool,
    #[serde(default)]
    pub include_initial_guess: bool,
    #[serde(default = "one")]
    pub parallelism: usize,
}

fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Aupair, Strategy::BestOfN]
}
fn default_f() -> usize {
    DEFAULT_FEEDBACKS
}
fn default_r() -> usize {
    DEFAULT_REPAIRS_PER_FEEDBACK
}
fn yes() -> bool {
    true
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            strategies: default_strategies(),
            feedbacks: default_f(),
            repairs_per_feedback: default_r(),
            random_seed: 0,
            dedup_random: true,
            include_initial_guess: false,
            parallelism: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_python")]
    pub python: PathBuf,
    #[serde(default)]
    pub normalize_identifiers: bool,
}

fn default_python() -> PathBuf {
    PathBuf::from("python3")
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            python: default_python(),
            normalize_identifiers: false,
        }
    }
}

/// Sets `dotted.key` in a TOML table. The value is parsed as TOML when it
/// can be, otherwise taken as a plain string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("override {assignment:?} is not key=value"))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let segments: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = segments.split_last().expect("split yields one segment");
    let mut table = root;
    for seg in parents {
        let entry = table
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| format!("override {key:?}: {seg:?} is not a table"))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// A program name without a path separator is looked up on `PATH`.
fn resolve_program(base: &Path, p: &mut PathBuf) {
    if p.components().count() > 1 {
        resolve(base, p);
    }
}

impl RunConfig {
    /// Reads, overrides, resolves relative paths against the config file's
    /// directory and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError(vec![format!("cannot read {}: {e}", path.display())]))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| ValidationError(vec![format!("{}: {e}", path.display())]))?;
        let errors: Vec<String> = overrides
            .iter()
            .filter_map(|o| apply_override(&mut table, o).err())
            .collect();
        if !errors.is_empty() {
            return Err(ValidationError(errors));
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ValidationError(vec![e.to_string()]))?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or_else(|| PathBuf::from("."));
        config.resolve_paths(&base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.work_dir);
        resolve(base, &mut self.data.problems);
        for p in [
            &mut self.gateway.oracle,
            &mut self.gateway.replay_dir,
            &mut self.gateway.record_dir,
            &mut self.runner.script,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        resolve_program(base, &mut self.runner.program);
        resolve_program(base, &mut self.analysis.python);
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut errors = Vec::new();
        fn need_file(errors: &mut Vec<String>, what: &str, p: &Path) {
            if !p.exists() {
                errors.push(format!("{what} {} does not exist", p.display()));
            }
        }
        need_file(&mut errors, "data.problems", &self.data.problems);
        if let Some(script) = &self.runner.script {
            need_file(&mut errors, "runner.script", script);
        }
        let backends = std::iter::once(self.gateway.backend).chain(self.gateway.replay_fallback);
        for backend in backends {
            match backend {
                BackendChoice::Scripted => match &self.gateway.oracle {
                    Some(o) => need_file(&mut errors, "gateway.oracle", o),
                    None => errors.push("the scripted backend needs gateway.oracle".into()),
                },
                BackendChoice::Http => {
                    if self.gateway.http.is_none() {
                        errors.push("the http backend needs a [gateway.http] table".into());
                    }
                }
                BackendChoice::Replay => {}
            }
        }
        if self.gateway.backend == BackendChoice::Replay {
            match &self.gateway.replay_dir {
                Some(d) => need_file(&mut errors, "gateway.replay_dir", d),
                None => errors.push("the replay backend needs gateway.replay_dir".into()),
            }
        }
        if self.gateway.replay_fallback == Some(BackendChoice::Replay) {
            errors.push("gateway.replay_fallback cannot itself be replay".into());
        }
        if let Err(e) = self.split.ratios().validate() {
            errors.push(format!("split: {e}"));
        }
        if self.budgets.curation == 0 {
            errors.push("budgets.curation must be positive".into());
        }
        if self.budgets.pairgen == 0 {
            errors.push("budgets.pairgen must be positive".into());
        }
        if self.budgets.inference == 0 {
            errors.push("budgets.inference must be positive".into());
        }
        if !self.extract.epsilon.is_finite() || self.extract.epsilon <= 0.0 {
            errors.push(format!("extract.epsilon must be positive, got {}", self.extract.epsilon));
        }
        if !self.runner.wall_timeout_secs.is_finite() || self.runner.wall_timeout_secs <= 0.0 {
            errors.push("runner.wall_timeout_secs must be positive".into());
        }
        if self.runner.max_output_bytes == 0 {
            errors.push("runner.max_output_bytes must be positive".into());
        }
        if self.eval.strategies.contains(&Strategy::SelfRepair) {
            let (f, r) = (self.eval.feedbacks, self.eval.repairs_per_feedback);
            if f == 0 || r == 0 || f * (1 + r) > self.budgets.inference {
                errors.push(format!(
                    "self-repair needs f, r >= 1 and f*(1+r) <= budgets.inference; got f={f}, r={r}, N={}",
                    self.budgets.inference
                ));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ValidationError(errors))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
work_dir = "work"
[data]
problems = "problems.jsonl"
[gateway]
backend = "scripted"
oracle = "oracle.json"
[runner]
program = "python3"
script = "runner.py"
[budgets]
curation = 10
pairgen = 5
inference = 4
"#;

    fn write_fixture(dir: &Path, config: &str) -> PathBuf {
        for f in ["problems.jsonl", "oracle.json", "runner.py"] {
            std::fs::write(dir.join(f), "").unwrap();
        }
        let p = dir.join("pipeline.toml");
        std::fs::write(&p, config).unwrap();
        p
    }

    #[test]
    fn loads_with_defaults_and_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig::load(&write_fixture(dir.path(), MINIMAL), &[]).unwrap();
        assert_eq!(c.work_dir, dir.path().join("work"));
        assert_eq!(c.runner.script.as_deref(), Some(dir.path().join("runner.py").as_path()));
        assert_eq!(c.runner.program, PathBuf::from("python3"));
        assert_eq!(c.pairgen.k, 32);
        assert_eq!(c.split.ratios(), SplitRatios::default());
        assert_eq!(c.eval.feedbacks, 4);
        assert_eq!(c.extract.epsilon, 1e-3);
    }

    #[test]
    fn overrides_are_typed() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), MINIMAL);
        let c = RunConfig::load(
            &path,
            &[
                "budgets.inference=8".into(),
                "split.seed=3".into(),
                "split.train=0.5".into(),
                "split.val=0.25".into(),
                "split.test=0.25".into(),
                "eval.strategies=[\"aupair\", \"random_pairs\"]".into(),
                "prompt.style=naive".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.budgets.inference, 8);
        assert_eq!(c.split.seed, 3);
        assert_eq!(c.split.ratios().train, 0.5);
        assert_eq!(c.eval.strategies, [Strategy::Aupair, Strategy::RandomPairs]);
        assert_eq!(c.prompt.style, PromptStyle::Naive);
        let err = RunConfig::load(&path, &["nonsense".into()]).unwrap_err();
        assert_eq!(err.0.len(), 1);
    }

    #[test]
    fn validation_errors_are_aggregated() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_fixture(dir.path(), MINIMAL);
        let err = RunConfig::load(
            &path,
            &[
                "data.problems=missing.jsonl".into(),
                "budgets.pairgen=0".into(),
                "extract.epsilon=0.0".into(),
                "eval.strategies=[\"self_repair\"]".into(),
                "gateway.backend=http".into(),
            ],
        )
        .unwrap_err();
        assert_eq!(err.0.len(), 5, "{err}");
        let unknown = RunConfig::load(&path, &["budgets.bogus=1".into()]).unwrap_err();
        assert!(unknown.to_string().contains("bogus"));
    }
}
