#![allow(dead_code)]

use std::path::PathBuf;
use std::process::Command;

use aupair::evaluator::{EvalError, EvalOutcome, RunnerCommand, Scorer};
use aupair::model::{Attempt, CuratedProblem, Problem, TestCase, Verdict};

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn synthetic_dir() -> PathBuf {
    workspace_root().join("data/synthetic")
}

pub fn python_available() -> bool {
    Command::new("python3")
        .args(["-c", "pass"])
        .status()
        .is_ok_and(|s| s.success())
}

pub fn runner() -> RunnerCommand {
    RunnerCommand::new("python3").arg(synthetic_dir().join("runner.py").to_string_lossy().into_owned())
}

/// Scores code by its `passes=N` marker: the first N tests pass.
pub struct MarkerScorer;

impl Scorer for MarkerScorer {
    fn score(&self, code: &str, problem: &Problem) -> Result<EvalOutcome, EvalError> {
        let passes = code
            .split("passes=")
            .nth(1)
            .map(|rest| rest.chars().take_while(char::is_ascii_digit).collect::<String>())
            .and_then(|d| d.parse::<usize>().ok())
            .unwrap_or(0);
        let verdicts = (0..problem.tests.len())
            .map(|i| if i < passes { Verdict::Pass } else { Verdict::WrongOutput })
            .collect();
        Ok(EvalOutcome::from_verdicts(verdicts))
    }
}

pub fn code(passes: usize) -> String {
    format!("def solve(s):\n    # passes={passes}\n    print(s)")
}

pub fn problem(id: &str, n_tests: usize) -> Problem {
    Problem {
        id: id.into(),
        description: format!("Task {id}."),
        difficulty: None,
        categories: vec![],
        source: "fixture".into(),
        tests: (0..n_tests)
            .map(|i| TestCase {
                input: i.to_string(),
                expected_output: i.to_string(),
            })
            .collect(),
    }
}

pub fn verdicts(passes: usize, of: usize) -> Vec<Verdict> {
    (0..of)
        .map(|i| if i < passes { Verdict::Pass } else { Verdict::WrongOutput })
        .collect()
}

pub fn curated(id: &str, n_tests: usize, guess_passes: usize) -> CuratedProblem {
    CuratedProblem {
        guess: Attempt::scored(format!("{id}/guess"), code(guess_passes), verdicts(guess_passes.min(n_tests), n_tests)),
        problem: problem(id, n_tests),
    }
}
