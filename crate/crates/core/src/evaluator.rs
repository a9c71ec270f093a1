//! Scores guest programs against unit tests.
//!
//! Every test runs in its own runner process, invoked as
//! `<runner...> <code_file> <input_file>`. The runner exits 0 when the guest
//! completed, 1 when the guest raised, and 2 when the guest violated the entry
//! point contract. Timeouts and output overflow are enforced here by killing
//! the runner's process group.

use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::model::{pass_fraction, Problem, Verdict};

/// Canonical form used for output comparison: CRLF becomes LF, trailing
/// whitespace is stripped from every line and trailing blank lines are
/// dropped. Leading whitespace is kept.
pub fn normalize_output(raw: &str) -> String {
    let unified = raw.replace("\r\n", "\n");
    let mut lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

/// Token-wise comparison where numeric tokens may differ by `tolerance`
/// (absolute or relative, whichever is looser).
fn outputs_match_numeric(actual: &str, expected: &str, tolerance: f64) -> bool {
    let a: Vec<Vec<&str>> = actual.lines().map(|l| l.split_whitespace().collect()).collect();
    let e: Vec<Vec<&str>> = expected.lines().map(|l| l.split_whitespace().collect()).collect();
    if a.len() != e.len() {
        return false;
    }
    a.iter().zip(&e).all(|(la, le)| {
        la.len() == le.len()
            && la.iter().zip(le).all(|(ta, te)| {
                if ta == te {
                    return true;
                }
                match (ta.parse::<f64>(), te.parse::<f64>()) {
                    (Ok(x), Ok(y)) => {
                        let diff = (x - y).abs();
                        diff <= tolerance || diff <= tolerance * y.abs()
                    }
                    _ => false,
                }
            })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLimits {
    #[serde(with = "secs")]
    pub wall_timeout: Duration,
    pub max_output_bytes: usize,
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            wall_timeout: Duration::from_secs(10),
            max_output_bytes: 1 << 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub verdicts: Vec<Verdict>,
    pub score: f64,
}

impl EvalOutcome {
    pub fn from_verdicts(verdicts: Vec<Verdict>) -> Self {
        let score = pass_fraction(&verdicts);
        EvalOutcome { verdicts, score }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("runner {0:?} not found")]
    RunnerMissing(PathBuf),
    #[error("problem {0} has no tests")]
    NoTests(String),
    #[error("invalid run limits: {0}")]
    InvalidLimits(String),
    #[error("i/o error while running tests: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can turn a program into an [`EvalOutcome`] for a problem.
pub trait Scorer: Send + Sync {
    fn score(&self, code: &str, problem: &Problem) -> Result<EvalOutcome, EvalError>;
}

/// The external program that executes one guest test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerCommand {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
}

impl RunnerCommand {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        RunnerCommand {
            program: program.into(),
            args: Vec::new(),
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }
}

/// Process-based scorer.
#[derive(Debug, Clone)]
pub struct Evaluator {
    runner: RunnerCommand,
    limits: RunLimits,
    parallelism: usize,
    numeric_tolerance: Option<f64>,
}

enum RunStatus {
    Exited(ExitStatus),
    TimedOut,
    OutputOverflow,
}

struct RunOutput {
    status: RunStatus,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
}

impl Evaluator {
    pub fn new(runner: RunnerCommand, limits: RunLimits) -> Result<Self, EvalError> {
        if limits.wall_timeout.is_zero() {
            return Err(EvalError::InvalidLimits("wall_timeout must be positive".into()));
        }
        Ok(Evaluator {
            runner,
            limits,
            parallelism: 1,
            numeric_tolerance: None,
        })
    }

    /// Number of tests of one problem that may run at once.
    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn with_numeric_tolerance(mut self, tolerance: Option<f64>) -> Self {
        self.numeric_tolerance = tolerance;
        self
    }

    pub fn limits(&self) -> RunLimits {
        self.limits
    }

    pub fn score_code(&self, code: &str, problem: &Problem) -> Result<EvalOutcome, EvalError> {
        if problem.tests.is_empty() {
            return Err(EvalError::NoTests(problem.id.clone()));
        }
        let dir = tempfile::tempdir()?;
        let code_path = dir.path().join("solution.py");
        std::fs::write(&code_path, code)?;
        let mut inputs = Vec::with_capacity(problem.tests.len());
        for (i, t) in problem.tests.iter().enumerate() {
            let p = dir.path().join(format!("input_{i}.txt"));
            std::fs::write(&p, &t.input)?;
            inputs.push(p);
        }

        let n = problem.tests.len();
        let results: Mutex<Vec<Option<Verdict>>> = Mutex::new(vec![None; n]);
        let next = AtomicUsize::new(0);
        let failure: Mutex<Option<EvalError>> = Mutex::new(None);
        let workers = self.parallelism.min(n);
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= n || failure.lock().unwrap().is_some() {
                        break;
                    }
                    match self.run_test(&code_path, &inputs[i], &problem.tests[i].expected_output) {
                        Ok(v) => results.lock().unwrap()[i] = Some(v),
                        Err(e) => {
                            failure.lock().unwrap().get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });
        if let Some(e) = failure.into_inner().unwrap() {
            return Err(e);
        }
        let verdicts = results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|v| v.expect("every test index is visited"))
            .collect();
        Ok(EvalOutcome::from_verdicts(verdicts))
    }

    fn run_test(&self, code: &Path, input: &Path, expected: &str) -> Result<Verdict, EvalError> {
        let out = self.execute(code, input)?;
        if !out.stderr.is_empty() {
            log::debug!(
                "runner stderr for {}: {}",
                input.display(),
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let verdict = match out.status {
            RunStatus::TimedOut => Verdict::Timeout,
            RunStatus::OutputOverflow => Verdict::RuntimeError,
            RunStatus::Exited(status) => match status.code() {
                Some(0) => {
                    let actual = normalize_output(&String::from_utf8_lossy(&out.stdout));
                    let expected = normalize_output(expected);
                    let ok = match self.numeric_tolerance {
                        Some(tol) => outputs_match_numeric(&actual, &expected, tol),
                        None => actual == expected,
                    };
                    if ok {
                        Verdict::Pass
                    } else {
                        Verdict::WrongOutput
                    }
                }
                Some(2) => Verdict::ProtocolError,
                _ => Verdict::RuntimeError,
            },
        };
        Ok(verdict)
    }

    fn execute(&self, code: &Path, input: &Path) -> Result<RunOutput, EvalError> {
        let mut cmd = Command::new(&self.runner.program);
        cmd.args(&self.runner.args)
            .arg(code)
            .arg(input)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        let mut child = cmd.spawn().map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied => {
                EvalError::RunnerMissing(self.runner.program.clone())
            }
            _ => EvalError::Io(e),
        })?;

        let cap = self.limits.max_output_bytes;
        let overflow = Arc::new(AtomicBool::new(false));
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");
        let out_flag = Arc::clone(&overflow);
        let out_reader = thread::spawn(move || read_capped(stdout, cap, Some(&out_flag)));
        let err_reader = thread::spawn(move || read_capped(stderr, cap, None));

        let deadline = Instant::now() + self.limits.wall_timeout;
        let status = loop {
            if let Some(st) = child.try_wait()? {
                break RunStatus::Exited(st);
            }
            if overflow.load(Ordering::SeqCst) {
                kill_group(&mut child);
                break RunStatus::OutputOverflow;
            }
            if Instant::now() >= deadline {
                kill_group(&mut child);
                break RunStatus::TimedOut;
            }
            thread::sleep(Duration::from_millis(2));
        };
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();
        // the guest may exit right after overflowing the pipe
        let status = match status {
            RunStatus::Exited(_) if overflow.load(Ordering::SeqCst) => RunStatus::OutputOverflow,
            s => s,
        };
        Ok(RunOutput {
            status,
            stdout,
            stderr,
        })
    }
}

impl Scorer for Evaluator {
    fn score(&self, code: &str, problem: &Problem) -> Result<EvalOutcome, EvalError> {
        self.score_code(code, problem)
    }
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: plain syscall on the group we created with process_group(0).
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Reads at most `cap` bytes, then drains the rest. Sets `overflow` once more
/// than `cap` bytes arrived.
fn read_capped(mut r: impl Read, cap: usize, overflow: Option<&AtomicBool>) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        match r.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                if buf.len() + n > cap {
                    let room = cap - buf.len();
                    buf.extend_from_slice(&chunk[..room]);
                    if let Some(flag) = overflow {
                        flag.store(true, Ordering::SeqCst);
                        return buf;
                    }
                } else {
                    buf.extend_from_slice(&chunk[..n]);
                }
            }
        }
    }
    buf
}
