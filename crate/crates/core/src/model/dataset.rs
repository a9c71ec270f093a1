use std::collections::HashSet;
use std::path::Path;

use crate::evaluator::normalize_output;
use crate::io::{self, JsonlError};

use super::{CuratedProblem, ModelError, Problem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatasetFormat {
    #[default]
    Jsonl,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record on line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate problem id {id:?} on line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: problem has no tests ({id})")]
    NoTests { line: usize, id: String },
    #[error("line {line}: problem {id} has no test with a non-empty expected output")]
    EmptyExpectedOutputs { line: usize, id: String },
    #[error("line {line}: invalid guess for {id}: {source}")]
    InvalidGuess {
        line: usize,
        id: String,
        #[source]
        source: ModelError,
    },
    #[error("problem {id}: difficulty {label:?} is not in the configured vocabulary")]
    UnknownDifficulty { id: String, label: String },
}

impl From<JsonlError> for DatasetError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io(e) => DatasetError::Io(e),
            JsonlError::Parse { line, source } => DatasetError::Malformed {
                line,
                message: source.to_string(),
            },
        }
    }
}

fn validate_problem(line: usize, p: &Problem, seen: &mut HashSet<String>) -> Result<(), DatasetError> {
    if !seen.insert(p.id.clone()) {
        return Err(DatasetError::DuplicateId {
            line,
            id: p.id.clone(),
        });
    }
    if p.tests.is_empty() {
        return Err(DatasetError::NoTests {
            line,
            id: p.id.clone(),
        });
    }
    if p
        .tests
        .iter()
        .all(|t| normalize_output(&t.expected_output).is_empty())
    {
        return Err(DatasetError::EmptyExpectedOutputs {
            line,
            id: p.id.clone(),
        });
    }
    Ok(())
}

/// Loads and validates a problem file, one JSON record per line.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<Problem>, DatasetError> {
    let DatasetFormat::Jsonl = format;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, problem) in io::read_jsonl::<Problem>(path)? {
        validate_problem(line, &problem, &mut seen)?;
        out.push(problem);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, problems: &[Problem]) -> std::io::Result<()> {
    io::write_jsonl(path, problems)
}

/// Loads a curated dataset: problem records extended with a `guess` attempt.
pub fn load_curated(path: &Path) -> Result<Vec<CuratedProblem>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, cp) in io::read_jsonl::<CuratedProblem>(path)? {
        validate_problem(line, &cp.problem, &mut seen)?;
        cp.guess
            .validate()
            .map_err(|source| DatasetError::InvalidGuess {
                line,
                id: cp.problem.id.clone(),
                source,
            })?;
        out.push(cp);
    }
    Ok(out)
}

pub fn save_curated(path: &Path, problems: &[CuratedProblem]) -> std::io::Result<()> {
    io::write_jsonl(path, problems)
}

/// Rejects difficulty labels outside `vocabulary`.
pub fn check_difficulty_vocabulary<P: AsRef<Problem>>(
    problems: &[P],
    vocabulary: &[String],
) -> Result<(), DatasetError> {
    for p in problems {
        let p = p.as_ref();
        if let Some(label) = &p.difficulty {
            if !vocabulary.iter().any(|v| v == label) {
                return Err(DatasetError::UnknownDifficulty {
                    id: p.id.clone(),
                    label: label.clone(),
                });
            }
        }
    }
    Ok(())
}
