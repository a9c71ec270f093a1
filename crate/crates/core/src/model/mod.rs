//! Domain data model: problems with unit tests, scored attempts and
//! improving (guess, fix) pairs.

mod dataset;
mod split;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use dataset::{
    check_difficulty_vocabulary, load_curated, load_dataset, save_curated, save_dataset,
    DatasetError, DatasetFormat,
};
pub use split::{
    apportion, stratified_split, SplitDataset, SplitError, SplitManifest, SplitRatios,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    /// Passed verbatim as the single string argument of the guest entry point.
    pub input: String,
    pub expected_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub description: String,
    #[serde(default)]
    pub difficulty: Option<String>,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub source: String,
    pub tests: Vec<TestCase>,
}

impl AsRef<Problem> for Problem {
    fn as_ref(&self) -> &Problem {
        self
    }
}

/// Outcome of a single unit test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    WrongOutput,
    RuntimeError,
    Timeout,
    ProtocolError,
}

impl Verdict {
    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::Pass => "pass",
            Verdict::WrongOutput => "wrong_output",
            Verdict::RuntimeError => "runtime_error",
            Verdict::Timeout => "timeout",
            Verdict::ProtocolError => "protocol_error",
        };
        f.write_str(s)
    }
}

/// Fraction of passing verdicts; `0.0` for an empty list.
pub fn pass_fraction(verdicts: &[Verdict]) -> f64 {
    if verdicts.is_empty() {
        return 0.0;
    }
    let passed = verdicts.iter().filter(|v| v.is_pass()).count();
    passed as f64 / verdicts.len() as f64
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("attempt {id}: score {score} disagrees with per-test verdicts ({expected})")]
    ScoreMismatch { id: String, score: f64, expected: f64 },
    #[error("pair for problem {problem_id} does not improve: fix {fix} <= guess {guess}")]
    NotAnImprovement {
        problem_id: String,
        guess: f64,
        fix: f64,
    },
}

/// A candidate program and its measured score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub id: String,
    pub code: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_test: Option<Vec<Verdict>>,
    /// The attempt this one was repaired from.
    #[serde(default)]
    pub parent_attempt: Option<String>,
    /// Gateway call that produced the code, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub call_index: Option<u64>,
}

impl Attempt {
    pub fn scored(id: impl Into<String>, code: impl Into<String>, verdicts: Vec<Verdict>) -> Self {
        Attempt {
            id: id.into(),
            code: code.into(),
            score: pass_fraction(&verdicts),
            per_test: Some(verdicts),
            parent_attempt: None,
            call_index: None,
        }
    }

    /// An attempt that produced no runnable code. Scores 0 on every test.
    pub fn failed(id: impl Into<String>, code: impl Into<String>) -> Self {
        Attempt {
            id: id.into(),
            code: code.into(),
            score: 0.0,
            per_test: None,
            parent_attempt: None,
            call_index: None,
        }
    }

    pub fn with_parent(mut self, parent: Option<String>) -> Self {
        self.parent_attempt = parent;
        self
    }

    pub fn with_call_index(mut self, call_index: Option<u64>) -> Self {
        self.call_index = call_index;
        self
    }

    /// Passes every unit test.
    pub fn is_solved(&self) -> bool {
        match &self.per_test {
            Some(v) => !v.is_empty() && v.iter().all(|v| v.is_pass()),
            None => self.score >= 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(ModelError::ScoreOutOfRange(self.score));
        }
        if let Some(verdicts) = &self.per_test {
            let expected = pass_fraction(verdicts);
            if expected != self.score {
                return Err(ModelError::ScoreMismatch {
                    id: self.id.clone(),
                    score: self.score,
                    expected,
                });
            }
        }
        Ok(())
    }
}

/// An improving (guess, fix) pair: `fix.score > guess.score` always holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair")]
pub struct CandidatePair {
    pub problem_id: String,
    pub guess: Attempt,
    pub fix: Attempt,
    pub created_at_call: u64,
}

#[derive(Deserialize)]
struct RawPair {
    problem_id: String,
    guess: Attempt,
    fix: Attempt,
    created_at_call: u64,
}

impl TryFrom<RawPair> for CandidatePair {
    type Error = ModelError;

    fn try_from(raw: RawPair) -> Result<Self, Self::Error> {
        CandidatePair::new(raw.problem_id, raw.guess, raw.fix, raw.created_at_call)
    }
}

impl CandidatePair {
    pub fn new(
        problem_id: impl Into<String>,
        guess: Attempt,
        fix: Attempt,
        created_at_call: u64,
    ) -> Result<Self, ModelError> {
        let problem_id = problem_id.into();
        guess.validate()?;
        fix.validate()?;
        // Scores are validated, so neither is NaN.
        if fix.score <= guess.score {
            return Err(ModelError::NotAnImprovement {
                problem_id,
                guess: guess.score,
                fix: fix.score,
            });
        }
        Ok(CandidatePair {
            problem_id,
            guess,
            fix,
            created_at_call,
        })
    }

    /// Stable identifier, unique within a pair store.
    pub fn id(&self) -> String {
        format!("{}#{}", self.problem_id, self.created_at_call)
    }
}

/// A problem together with its current (imperfect) guess.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedProblem {
    #[serde(flatten)]
    pub problem: Problem,
    pub guess: Attempt,
}

impl AsRef<Problem> for CuratedProblem {
    fn as_ref(&self) -> &Problem {
        &self.problem
    }
}

/// Problems by id, used to resolve the source problem of in-context pairs.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    problems: std::collections::HashMap<String, Problem>,
}

impl Catalog {
    pub fn new<P: AsRef<Problem>>(problems: impl IntoIterator<Item = P>) -> Self {
        let mut c = Catalog::default();
        c.extend(problems);
        c
    }

    pub fn extend<P: AsRef<Problem>>(&mut self, problems: impl IntoIterator<Item = P>) {
        for p in problems {
            let p = p.as_ref();
            self.problems.insert(p.id.clone(), p.clone());
        }
    }

    pub fn get(&self, id: &str) -> Option<&Problem> {
        self.problems.get(id)
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}
