//! In-process fixtures for unit tests.

use crate::evaluator::{EvalError, EvalOutcome, Scorer};
use crate::model::{Attempt, CuratedProblem, Problem, TestCase, Verdict};

/// Scores code by the `passes=N` marker it contains: the first N tests pass.
pub struct MarkerScorer;

impl Scorer for MarkerScorer {
    fn score(&self, code: &str, problem: &Problem) -> Result<EvalOutcome, EvalError> {
        let n = problem.tests.len();
        let passes = code
            .split("passes=")
            .nth(1)
            .and_then(|rest| {
                let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
                digits.parse::<usize>().ok()
            })
            .unwrap_or(0)
            .min(n);
        let verdicts = (0..n)
            .map(|i| if i < passes { Verdict::Pass } else { Verdict::WrongOutput })
            .collect();
        Ok(EvalOutcome::from_verdicts(verdicts))
    }
}

pub fn problem(id: &str, n_tests: usize) -> Problem {
    Problem {
        id: id.into(),
        description: format!("Solve task {id}."),
        difficulty: None,
        categories: vec![],
        source: "unit".into(),
        tests: (0..n_tests)
            .map(|i| TestCase {
                input: i.to_string(),
                expected_output: i.to_string(),
            })
            .collect(),
    }
}

pub fn code(passes: usize) -> String {
    format!("def solve(s):\n    # passes={passes}\n    print(s)")
}

pub fn curated(id: &str, n_tests: usize, guess_passes: usize) -> CuratedProblem {
    let p = problem(id, n_tests);
    let outcome = MarkerScorer.score(&code(guess_passes), &p).unwrap();
    CuratedProblem {
        guess: Attempt::scored(format!("{id}/guess"), code(guess_passes), outcome.verdicts),
        problem: p,
    }
}
