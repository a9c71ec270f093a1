use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Problem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    /// 37.5 / 12.5 / 50.
    fn default() -> Self {
        SplitRatios {
            train: 0.375,
            val: 0.125,
            test: 0.5,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Self {
        SplitRatios { train, val, test }
    }

    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<(), SplitError> {
        let a = self.as_array();
        if a.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(SplitError::InvalidRatios(*self));
        }
        if (a.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(SplitError::InvalidRatios(*self));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplitError {
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    InvalidRatios(SplitRatios),
    #[error("cannot split an empty dataset")]
    Empty,
    #[error("split manifest references unknown problem {0:?}")]
    UnknownId(String),
    #[error("problem {0:?} is missing from the split manifest")]
    MissingId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset<T = Problem> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T: AsRef<Problem>> SplitDataset<T> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn manifest(&self, seed: u64, ratios: SplitRatios) -> SplitManifest {
        let ids = |v: &[T]| v.iter().map(|p| p.as_ref().id.clone()).collect();
        SplitManifest {
            seed,
            ratios,
            train: ids(&self.train),
            val: ids(&self.val),
            test: ids(&self.test),
        }
    }
}

/// Problem ids per split plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Rebuilds the split from `items`, which must cover the manifest exactly.
    pub fn apply<T: AsRef<Problem> + Clone>(&self, items: &[T]) -> Result<SplitDataset<T>, SplitError> {
        let by_id: HashMap<&str, &T> = items.iter().map(|p| (p.as_ref().id.as_str(), p)).collect();
        let pick = |ids: &[String]| -> Result<Vec<T>, SplitError> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|p| (*p).clone())
                        .ok_or_else(|| SplitError::UnknownId(id.clone()))
                })
                .collect()
        };
        let split = SplitDataset {
            train: pick(&self.train)?,
            val: pick(&self.val)?,
            test: pick(&self.test)?,
        };
        let listed = split.train.len() + split.val.len() + split.test.len();
        if listed != items.len() {
            let known: std::collections::HashSet<&str> = self
                .train
                .iter()
                .chain(&self.val)
                .chain(&self.test)
                .map(String::as_str)
                .collect();
            if let Some(p) = items.iter().find(|p| !known.contains(p.as_ref().id.as_str())) {
                return Err(SplitError::MissingId(p.as_ref().id.clone()));
            }
        }
        Ok(split)
    }
}

fn quotas(n: usize, ratios: &[f64; 3]) -> ([usize; 3], [f64; 3]) {
    let mut floors = [0usize; 3];
    let mut fracs = [0f64; 3];
    for i in 0..3 {
        let q = n as f64 * ratios[i];
        // guard against 2.9999999 from inexact ratios
        let f = (q + 1e-9).floor();
        floors[i] = f as usize;
        fracs[i] = (q - f).max(0.0);
    }
    (floors, fracs)
}

/// Largest-remainder apportionment of `n` items; ties go to the earlier
/// split (train, then val).
pub fn apportion(n: usize, ratios: SplitRatios) -> [usize; 3] {
    let (mut sizes, fracs) = quotas(n, &ratios.as_array());
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| fracs[b].total_cmp(&fracs[a]).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Distributes the leftover units of every stratum so that column totals hit
/// `targets` while each cell moves at most one above its floor.
fn allocate_strata(counts: &[usize], ratios: &[f64; 3], targets: [usize; 3]) -> Option<Vec<[usize; 3]>> {
    let mut cells = Vec::with_capacity(counts.len());
    let mut fracs = Vec::with_capacity(counts.len());
    let mut residual_rows = Vec::with_capacity(counts.len());
    let mut demand = targets.map(|t| t as i64);
    for &n in counts {
        let (floors, f) = quotas(n, ratios);
        for j in 0..3 {
            demand[j] -= floors[j] as i64;
        }
        residual_rows.push(n - floors.iter().sum::<usize>());
        cells.push(floors);
        fracs.push(f);
    }
    if demand.iter().any(|&d| d < 0) {
        return None;
    }
    let mut rows: Vec<usize> = (0..counts.len()).collect();
    rows.sort_by(|&a, &b| residual_rows[b].cmp(&residual_rows[a]).then(a.cmp(&b)));
    for s in rows {
        let mut cols = [0usize, 1, 2];
        cols.sort_by(|&a, &b| {
            demand[b]
                .cmp(&demand[a])
                .then(fracs[s][b].total_cmp(&fracs[s][a]))
                .then(a.cmp(&b))
        });
        for &j in cols.iter().take(residual_rows[s]) {
            if demand[j] <= 0 {
                return None;
            }
            demand[j] -= 1;
            cells[s][j] += 1;
        }
    }
    demand.iter().all(|&d| d == 0).then_some(cells)
}

fn largest_remainder_per_stratum(counts: &[usize], ratios: SplitRatios) -> Vec<[usize; 3]> {
    counts.iter().map(|&n| apportion(n, ratios)).collect()
}

/// Seeded stratified split. Problems are grouped by difficulty label
/// (unlabeled problems form their own stratum); each stratum is shuffled and
/// cut so that its per-split counts stay within one of the exact quota.
pub fn stratified_split<T: AsRef<Problem> + Clone>(
    problems: &[T],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitDataset<T>, SplitError> {
    ratios.validate()?;
    if problems.is_empty() {
        return Err(SplitError::Empty);
    }
    let mut strata: BTreeMap<Option<&str>, Vec<&T>> = BTreeMap::new();
    for p in problems {
        strata
            .entry(p.as_ref().difficulty.as_deref())
            .or_default()
            .push(p);
    }
    let counts: Vec<usize> = strata.values().map(Vec::len).collect();
    let targets = apportion(problems.len(), ratios);
    let allocation = allocate_strata(&counts, &ratios.as_array(), targets)
        .unwrap_or_else(|| largest_remainder_per_stratum(&counts, ratios));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitDataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (members, sizes) in strata.into_values().zip(allocation) {
        let mut members = members;
        members.shuffle(&mut rng);
        let (train, rest) = members.split_at(sizes[0]);
        let (val, test) = rest.split_at(sizes[1]);
        out.train.extend(train.iter().map(|p| (*p).clone()));
        out.val.extend(val.iter().map(|p| (*p).clone()));
        out.test.extend(test.iter().map(|p| (*p).clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TestCase;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn problem(id: usize, difficulty: Option<&str>) -> Problem {
        Problem {
            id: format!("p{id}"),
            description: "d".into(),
            difficulty: difficulty.map(str::to_string),
            categories: vec![],
            source: "t".into(),
            tests: vec![TestCase {
                input: String::new(),
                expected_output: "1".into(),
            }],
        }
    }

    /// Exact-fraction oracle: integer arithmetic over ratios expressed in 1/1000.
    fn apportion_oracle(n: usize, per_mille: [usize; 3]) -> [usize; 3] {
        let mut sizes = [0; 3];
        let mut rems = [(0usize, 0usize); 3];
        for i in 0..3 {
            sizes[i] = n * per_mille[i] / 1000;
            rems[i] = (n * per_mille[i] % 1000, i);
        }
        let left = n - sizes.iter().sum::<usize>();
        rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        for k in 0..left {
            sizes[rems[k].1] += 1;
        }
        sizes
    }

    #[test]
    fn eight_problems_split_three_one_four() {
        let ps: Vec<_> = (0..8).map(|i| problem(i, None)).collect();
        let s = stratified_split(&ps, SplitRatios::default(), 7).unwrap();
        assert_eq!(s.sizes(), (3, 1, 4));
        assert_eq!(apportion_oracle(8, [375, 125, 500]), [3, 1, 4]);
    }

    #[test]
    fn hundred_single_stratum() {
        let ps: Vec<_> = (0..100).map(|i| problem(i, Some("A"))).collect();
        let s = stratified_split(&ps, SplitRatios::default(), 3).unwrap();
        let (a, b, c) = s.sizes();
        assert!(a == 37 || a == 38);
        assert!(b == 12 || b == 13);
        assert_eq!(c, 50);
        assert_eq!([a, b, c], apportion_oracle(100, [375, 125, 500]));
        let all: HashSet<_> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .map(|p| p.id.clone())
            .collect();
        assert_eq!(all.len(), 100);
    }

    #[test]
    fn deterministic_per_seed() {
        let ps: Vec<_> = (0..40)
            .map(|i| problem(i, Some(["A", "B", "C"][i % 3])))
            .collect();
        let a = stratified_split(&ps, SplitRatios::default(), 11).unwrap();
        let b = stratified_split(&ps, SplitRatios::default(), 11).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&ps, SplitRatios::default(), 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_ratios_and_empty_input() {
        let ps: Vec<_> = (0..4).map(|i| problem(i, None)).collect();
        assert!(matches!(
            stratified_split(&ps, SplitRatios::new(0.5, 0.5, 0.5), 0),
            Err(SplitError::InvalidRatios(_))
        ));
        let empty: Vec<Problem> = vec![];
        assert_eq!(
            stratified_split(&empty, SplitRatios::default(), 0),
            Err(SplitError::Empty)
        );
    }

    #[test]
    fn manifest_round_trip() {
        let ps: Vec<_> = (0..10).map(|i| problem(i, None)).collect();
        let s = stratified_split(&ps, SplitRatios::default(), 5).unwrap();
        let m = s.manifest(5, SplitRatios::default());
        assert_eq!(m.apply(&ps).unwrap(), s);
        assert!(matches!(m.apply(&ps[..9]), Err(SplitError::UnknownId(_))));
        let mut more = ps.clone();
        more.push(problem(99, None));
        assert!(matches!(m.apply(&more), Err(SplitError::MissingId(_))));
    }

    proptest! {
        #[test]
        fn split_is_a_stratified_partition(
            labels in proptest::collection::vec(proptest::option::of(0u8..4), 1..120),
            seed in any::<u64>(),
            r in (1usize..8, 1usize..8, 1usize..8),
        ) {
            let total = (r.0 + r.1 + r.2) as f64;
            let ratios = SplitRatios::new(r.0 as f64 / total, r.1 as f64 / total, 1.0 - (r.0 + r.1) as f64 / total);
            let names = ["A", "B", "C", "D"];
            let ps: Vec<_> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| problem(i, l.map(|l| names[l as usize])))
                .collect();
            let s = stratified_split(&ps, ratios, seed).unwrap();

            let mut ids: Vec<_> = s.train.iter().chain(&s.val).chain(&s.test).map(|p| p.id.clone()).collect();
            prop_assert_eq!(ids.len(), ps.len());
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), ps.len());

            let mut strata: BTreeMap<Option<String>, [usize; 4]> = BTreeMap::new();
            for (k, part) in [&s.train, &s.val, &s.test].iter().enumerate() {
                for p in part.iter() {
                    let e = strata.entry(p.difficulty.clone()).or_default();
                    e[k] += 1;
                    e[3] += 1;
                }
            }
            let rs = [ratios.train, ratios.val, ratios.test];
            for counts in strata.values() {
                for k in 0..3 {
                    let quota = counts[3] as f64 * rs[k];
                    prop_assert!((counts[k] as f64 - quota).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
