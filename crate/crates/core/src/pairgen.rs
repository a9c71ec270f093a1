//! Initial-guess curation and candidate pair generation.
//!
//! Pair generation repeatedly samples a (problem, guess) instance from the
//! training set, prompts for a repair with up to `k` random in-context pairs,
//! and keeps the result as a candidate pair when it strictly improves the
//! guess. Improving but imperfect fixes re-enter the training set as new
//! guesses; a perfect fix retires every instance of its problem.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluator::Scorer;
use crate::gateway::{Gateway, GatewayError, GenerationRequest, RequestMeta, SamplingParams};
use crate::io::{self, sha256_hex};
use crate::model::{Attempt, CandidatePair, Catalog, CuratedProblem, DatasetError, Problem};
use crate::prompt::{
    build_guess_prompt, build_repair_prompt, build_zero_shot_repair_prompt, PromptStyle,
    RepairPromptSpec,
};
use crate::step::generate_attempt;
use crate::{Error, Result};

pub const GUESS_TAG: &str = "guess";
pub const PAIRGEN_TAG: &str = "pairgen";

/// Reference number of in-context pairs during pair generation.
pub const DEFAULT_K: usize = 32;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub total: usize,
    pub solved_and_dropped: usize,
    pub retained: usize,
    /// Retained problems whose guess response held no code.
    pub generation_failures: usize,
    pub mean_initial_score: f64,
}

/// Generates one guess per problem and drops the problems it already solves.
pub fn curate_guesses(
    problems: &[Problem],
    gateway: &Gateway,
    scorer: &dyn Scorer,
    sampling: &SamplingParams,
) -> Result<(Vec<CuratedProblem>, CurationReport)> {
    gateway.require(problems.len() as u64)?;
    let mut curated = Vec::new();
    let mut report = CurationReport {
        total: problems.len(),
        ..Default::default()
    };
    let mut score_sum = 0.0;
    for problem in problems {
        let request = GenerationRequest::new(build_guess_prompt(problem), GUESS_TAG, sampling).with_meta(
            RequestMeta {
                problem_id: Some(problem.id.clone()),
                ..Default::default()
            },
        );
        let guess = generate_attempt(
            gateway,
            scorer,
            request,
            problem,
            format!("{}/guess", problem.id),
            None,
        )?;
        score_sum += guess.score;
        if guess.is_solved() {
            report.solved_and_dropped += 1;
            continue;
        }
        if guess.code.is_empty() {
            report.generation_failures += 1;
        }
        report.retained += 1;
        curated.push(CuratedProblem {
            problem: problem.clone(),
            guess,
        });
    }
    if report.total > 0 {
        report.mean_initial_score = score_sum / report.total as f64;
    }
    Ok((curated, report))
}

/// Append-only candidate pair store with a per-problem index. Pairs whose
/// guess and fix code both duplicate an existing pair of the same problem are
/// dropped on insertion.
#[derive(Debug, Clone, Default)]
pub struct PairStore {
    pairs: Vec<CandidatePair>,
    by_problem: HashMap<String, Vec<usize>>,
    by_id: HashMap<String, usize>,
    seen: HashSet<(String, String, String)>,
}

impl PairStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = CandidatePair>) -> Self {
        let mut store = Self::new();
        for p in pairs {
            store.insert(p);
        }
        store
    }

    /// Returns false when the pair was a duplicate and not stored.
    pub fn insert(&mut self, pair: CandidatePair) -> bool {
        let key = (
            pair.problem_id.clone(),
            sha256_hex(pair.guess.code.as_bytes()),
            sha256_hex(pair.fix.code.as_bytes()),
        );
        let id = pair.id();
        if self.by_id.contains_key(&id) || !self.seen.insert(key) {
            return false;
        }
        let idx = self.pairs.len();
        self.by_problem
            .entry(pair.problem_id.clone())
            .or_default()
            .push(idx);
        self.by_id.insert(id, idx);
        self.pairs.push(pair);
        true
    }

    pub fn pairs(&self) -> &[CandidatePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CandidatePair> {
        self.by_id.get(id).map(|&i| &self.pairs[i])
    }

    pub fn for_problem(&self, problem_id: &str) -> impl Iterator<Item = &CandidatePair> {
        self.by_problem
            .get(problem_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.pairs[i])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rows = io::read_jsonl::<CandidatePair>(path).map_err(DatasetError::from)?;
        Ok(Self::from_pairs(rows.into_iter().map(|(_, p)| p)))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        io::write_jsonl(path, &self.pairs)
    }
}

/// One sampling unit of the training set: a problem with one of its guesses.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub problem_id: String,
    pub guess: Attempt,
}

#[derive(Debug, Clone)]
pub struct PairGenConfig {
    /// Maximum number of loop iterations (one LLM call each).
    pub budget: usize,
    pub k: usize,
    pub seed: u64,
    pub style: PromptStyle,
    pub sampling: SamplingParams,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        PairGenConfig {
            budget: 0,
            k: DEFAULT_K,
            seed: 0,
            style: PromptStyle::default(),
            sampling: SamplingParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    DatasetExhausted,
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct PairGenRun {
    pub store: PairStore,
    /// The training set as left by the loop.
    pub instances: Vec<Instance>,
    pub calls: u64,
    pub stop: StopReason,
}

impl PairGenRun {
    pub fn instance_counts(&self) -> HashMap<String, usize> {
        let mut counts = HashMap::new();
        for i in &self.instances {
            *counts.entry(i.problem_id.clone()).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairGenReport {
    pub calls: u64,
    pub pairs: usize,
    pub remaining_instances: usize,
    pub stop: Option<StopReason>,
}

impl From<&PairGenRun> for PairGenReport {
    fn from(run: &PairGenRun) -> Self {
        PairGenReport {
            calls: run.calls,
            pairs: run.store.len(),
            remaining_instances: run.instances.len(),
            stop: Some(run.stop),
        }
    }
}

/// Rebuilds the training set implied by `train` and an existing store.
fn initial_instances(train: &[CuratedProblem], store: &PairStore) -> Vec<Instance> {
    let mut instances: Vec<Instance> = train
        .iter()
        .filter(|cp| cp.guess.score < 1.0)
        .map(|cp| Instance {
            problem_id: cp.problem.id.clone(),
            guess: cp.guess.clone(),
        })
        .collect();
    let mut retired = HashSet::new();
    for pair in store.pairs() {
        if pair.fix.score >= 1.0 {
            retired.insert(pair.problem_id.clone());
        } else {
            instances.push(Instance {
                problem_id: pair.problem_id.clone(),
                guess: pair.fix.clone(),
            });
        }
    }
    instances.retain(|i| !retired.contains(&i.problem_id));
    instances
}

/// Candidate pair generation loop. `resume` continues from a persisted store;
/// the sampling stream is then reseeded from `(seed, store size)`.
pub fn generate_pairs(
    train: &[CuratedProblem],
    gateway: &Gateway,
    scorer: &dyn Scorer,
    config: &PairGenConfig,
    resume: Option<PairStore>,
) -> Result<PairGenRun> {
    let catalog = Catalog::new(train);
    let mut store = resume.unwrap_or_default();
    let mut instances = initial_instances(train, &store);
    let seed = if store.is_empty() {
        config.seed
    } else {
        config.seed ^ (store.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut calls = 0;
    let mut stop = StopReason::Completed;

    for iteration in 0..config.budget {
        if instances.is_empty() {
            stop = StopReason::DatasetExhausted;
            break;
        }
        if gateway.budget().remaining() == 0 {
            stop = StopReason::BudgetExhausted;
            break;
        }
        let inst = instances[rng.gen_range(0..instances.len())].clone();
        let problem = catalog
            .get(&inst.problem_id)
            .ok_or_else(|| Error::UnknownProblem(inst.problem_id.clone()))?;
        let k = config.k.min(store.len());
        let chosen: Vec<&CandidatePair> = sample(&mut rng, store.len(), k)
            .into_iter()
            .map(|i| &store.pairs()[i])
            .collect();
        let prompt = if chosen.is_empty() {
            build_zero_shot_repair_prompt(problem, &inst.guess, config.style)
        } else {
            let examples = chosen
                .iter()
                .map(|p| {
                    catalog
                        .get(&p.problem_id)
                        .map(|src| (*p, src))
                        .ok_or_else(|| Error::UnknownProblem(p.problem_id.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            build_repair_prompt(&RepairPromptSpec::new(examples, problem, &inst.guess, config.style))?
        };
        let meta = RequestMeta {
            problem_id: Some(problem.id.clone()),
            pair_ids: chosen.iter().map(|p| p.id()).collect(),
            pair_problem_ids: chosen.iter().map(|p| p.problem_id.clone()).collect(),
            attempt: Some(iteration as u64),
        };
        let request = GenerationRequest::new(prompt, PAIRGEN_TAG, &config.sampling).with_meta(meta);
        let fix = match generate_attempt(
            gateway,
            scorer,
            request,
            problem,
            String::new(),
            Some(inst.guess.id.clone()),
        ) {
            Ok(a) => a,
            Err(Error::Gateway(GatewayError::BudgetExhausted { .. })) => {
                stop = StopReason::BudgetExhausted;
                break;
            }
            Err(e) => return Err(e),
        };
        calls += 1;
        let call = fix.call_index.expect("generated attempts carry their call index");
        let fix = Attempt {
            id: format!("{}/fix@{call}", problem.id),
            ..fix
        };
        if fix.score > inst.guess.score {
            let solved = fix.score >= 1.0;
            let pair = CandidatePair::new(problem.id.clone(), inst.guess.clone(), fix.clone(), call)?;
            if store.insert(pair) {
                if solved {
                    instances.retain(|i| i.problem_id != problem.id);
                } else {
                    instances.push(Instance {
                        problem_id: problem.id.clone(),
                        guess: fix,
                    });
                }
            }
        }
    }
    Ok(PairGenRun {
        store,
        instances,
        calls,
        stop,
    })
}
