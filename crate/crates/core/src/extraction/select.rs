use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExtractionError, FixQualityMatrix};
use crate::io::{self, read_jsonl};
use crate::model::CandidatePair;
use crate::pairgen::PairStore;
use crate::Result;

pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuPairEntry {
    pub rank: usize,
    /// Row of the matrix the pair came from.
    pub row: usize,
    pub pair_id: String,
    pub marginal_gain: f64,
}

/// Golden pairs in extraction order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuPairList {
    pub entries: Vec<AuPairEntry>,
    pub tolerance_used: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ListLine {
    Header { tolerance_used: f64 },
    Entry(AuPairEntry),
}

impl AuPairList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rows(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.row).collect()
    }

    pub fn gains(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.marginal_gain).collect()
    }

    pub fn pair_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.pair_id.as_str()).collect()
    }

    /// Resolves entries against a store, in rank order.
    pub fn resolve<'a>(&self, store: &'a PairStore) -> Result<Vec<&'a CandidatePair>> {
        self.entries
            .iter()
            .map(|e| {
                store
                    .get(&e.pair_id)
                    .ok_or_else(|| crate::Error::UnknownPair(e.pair_id.clone()))
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut lines = vec![ListLine::Header {
            tolerance_used: self.tolerance_used,
        }];
        lines.extend(self.entries.iter().cloned().map(ListLine::Entry));
        io::to_jsonl(&lines).expect("list serializes")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        io::write_atomic(path, &self.to_jsonl())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut list = AuPairList::default();
        for (line, item) in read_jsonl::<ListLine>(path).map_err(crate::model::DatasetError::from)? {
            match item {
                ListLine::Header { tolerance_used } => list.tolerance_used = tolerance_used,
                ListLine::Entry(e) => {
                    if e.rank != list.entries.len() {
                        return Err(crate::Error::InvalidArgument(format!(
                            "{}:{line}: rank {} out of order",
                            path.display(),
                            e.rank
                        )));
                    }
                    list.entries.push(e)
                }
            }
        }
        Ok(list)
    }
}

/// Greedy max-coverage over the rows of `matrix` with the clip step enabled.
pub fn extract_aupairs(matrix: &FixQualityMatrix, tolerance: f64) -> Result<AuPairList, ExtractionError> {
    extract_aupairs_with(matrix, tolerance, true)
}

/// Each round takes the row with the highest mean (lowest index on ties),
/// records that mean as its marginal gain and subtracts the row from every
/// row. With `clip` set the residuals are clamped to `[0, 1]` afterwards.
/// Stops before a round whose best mean falls below `tolerance`.
#[doc(hidden)]
pub fn extract_aupairs_with(
    matrix: &FixQualityMatrix,
    tolerance: f64,
    clip: bool,
) -> Result<AuPairList, ExtractionError> {
    if !tolerance.is_finite() || tolerance <= 0.0 {
        return Err(ExtractionError::InvalidTolerance(tolerance));
    }
    let (rows, cols) = (matrix.rows(), matrix.cols());
    let mut list = AuPairList {
        entries: Vec::new(),
        tolerance_used: tolerance,
    };
    if rows == 0 || cols == 0 {
        return Ok(list);
    }
    // A picked row subtracts itself to zero, so it never wins again.
    let mut m = matrix.values().to_vec();
    loop {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..rows {
            let mean = m[i * cols..(i + 1) * cols].iter().sum::<f64>() / cols as f64;
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some((i, mean));
            }
        }
        let Some((pick, gain)) = best else { break };
        if gain < tolerance {
            break;
        }
        list.entries.push(AuPairEntry {
            rank: list.entries.len(),
            row: pick,
            pair_id: matrix.row_ids[pick].clone(),
            marginal_gain: gain,
        });
        let picked: Vec<f64> = m[pick * cols..(pick + 1) * cols].to_vec();
        for row in m.chunks_exact_mut(cols) {
            for (v, p) in row.iter_mut().zip(&picked) {
                *v -= p;
                if clip {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    Ok(list)
}

/// `n` pairs drawn uniformly without replacement from the store. With
/// `dedup_problems` set, at most one pair per source problem is drawn.
pub fn random_pair_baseline(
    store: &PairStore,
    n: usize,
    seed: u64,
    dedup_problems: bool,
) -> Result<Vec<CandidatePair>, ExtractionError> {
    let mut pool: Vec<&CandidatePair> = store.pairs().iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    if dedup_problems {
        let mut seen = HashSet::new();
        pool.retain(|p| seen.insert(p.problem_id.clone()));
    }
    if pool.len() < n {
        return Err(ExtractionError::PoolTooSmall {
            requested: n,
            available: pool.len(),
        });
    }
    Ok(pool.into_iter().take(n).cloned().collect())
}
