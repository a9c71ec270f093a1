//! Inference-time repair strategies and the two corpus metrics.
//!
//! Every strategy spends a fixed number of generation calls per test problem
//! and records one scored attempt per repair call, in call order. Metrics take
//! the best attempt per problem and average over the test set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{breakdown, Axis, BucketMetrics};
use crate::evaluator::Scorer;
use crate::extraction::{random_pair_baseline, AuPairList};
use crate::gateway::{Gateway, GenerationRequest, RequestMeta, SamplingParams};
use crate::io::{self, read_jsonl, sha256_hex};
use crate::model::{Attempt, CandidatePair, Catalog, CuratedProblem, DatasetError};
use crate::pairgen::PairStore;
use crate::prompt::{
    build_feedback_prompt, build_feedback_repair_prompt, build_repair_prompt,
    build_zero_shot_repair_prompt, PromptStyle, RepairPromptSpec,
};
use crate::step::generate_attempt;
use crate::{Error, Result};

pub const FEEDBACK_TAG: &str = "feedback";
pub const REPAIR_TAG: &str = "repair";
pub const DEFAULT_FEEDBACKS: usize = 4;
pub const DEFAULT_REPAIRS_PER_FEEDBACK: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Aupair,
    BestOfN,
    SelfRepair,
    RandomPairs,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Aupair,
        Strategy::BestOfN,
        Strategy::SelfRepair,
        Strategy::RandomPairs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Aupair => "aupair",
            Strategy::BestOfN => "best_of_n",
            Strategy::SelfRepair => "self_repair",
            Strategy::RandomPairs => "random_pairs",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// Scored attempts per test problem, one per repair call, in call order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: Strategy,
    pub budget_per_problem: usize,
    pub per_problem: BTreeMap<String, Vec<Attempt>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ResultLine {
    Header {
        strategy: Strategy,
        budget_per_problem: usize,
    },
    Attempt {
        problem_id: String,
        index: usize,
        code_digest: String,
        attempt: Attempt,
    },
}

impl StrategyResult {
    pub fn new(strategy: Strategy, budget_per_problem: usize) -> Self {
        StrategyResult {
            strategy,
            budget_per_problem,
            per_problem: BTreeMap::new(),
        }
    }

    /// The same result as if only the first `n` attempts had been made.
    pub fn truncated(&self, n: usize) -> Self {
        StrategyResult {
            strategy: self.strategy,
            budget_per_problem: n.min(self.budget_per_problem),
            per_problem: self
                .per_problem
                .iter()
                .map(|(id, a)| (id.clone(), a.iter().take(n).cloned().collect()))
                .collect(),
        }
    }

    pub fn attempts(&self, problem_id: &str) -> &[Attempt] {
        self.per_problem.get(problem_id).map_or(&[], Vec::as_slice)
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut lines = vec![ResultLine::Header {
            strategy: self.strategy,
            budget_per_problem: self.budget_per_problem,
        }];
        for (id, attempts) in &self.per_problem {
            for (index, a) in attempts.iter().enumerate() {
                lines.push(ResultLine::Attempt {
                    problem_id: id.clone(),
                    index,
                    code_digest: sha256_hex(a.code.as_bytes()),
                    attempt: a.clone(),
                });
            }
        }
        io::to_jsonl(&lines).expect("result serializes")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        io::write_atomic(path, &self.to_jsonl())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |line: usize, message: String| {
            Error::Dataset(DatasetError::Malformed { line, message })
        };
        let mut result: Option<StrategyResult> = None;
        for (line, item) in read_jsonl::<ResultLine>(path).map_err(DatasetError::from)? {
            match item {
                ResultLine::Header {
                    strategy,
                    budget_per_problem,
                } => {
                    if result.is_some() {
                        return Err(bad(line, "second header".into()));
                    }
                    result = Some(StrategyResult::new(strategy, budget_per_problem));
                }
                ResultLine::Attempt {
                    problem_id,
                    index,
                    code_digest,
                    attempt,
                } => {
                    let r = result
                        .as_mut()
                        .ok_or_else(|| bad(line, "attempt before header".into()))?;
                    if sha256_hex(attempt.code.as_bytes()) != code_digest {
                        return Err(bad(line, "code digest mismatch".into()));
                    }
                    attempt.validate()?;
                    let list = r.per_problem.entry(problem_id).or_default();
                    if index != list.len() || list.len() >= r.budget_per_problem {
                        return Err(bad(line, format!("attempt index {index} out of order or over budget")));
                    }
                    list.push(attempt);
                }
            }
        }
        result.ok_or_else(|| bad(0, "missing header".into()))
    }
}

#[derive(Debug, Clone)]
pub struct InferenceOptions {
    pub style: PromptStyle,
    pub sampling: SamplingParams,
    /// Test problems processed at once.
    pub parallelism: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            style: PromptStyle::default(),
            sampling: SamplingParams::default(),
            parallelism: 1,
        }
    }
}

fn per_problem<F>(test: &[CuratedProblem], parallelism: usize, run: F) -> Result<BTreeMap<String, Vec<Attempt>>>
where
    F: Fn(&CuratedProblem) -> Result<Vec<Attempt>> + Sync,
{
    let one = |cp: &CuratedProblem| run(cp).map(|a| (cp.problem.id.clone(), a));
    if parallelism <= 1 {
        test.iter().map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| test.par_iter().map(one).collect())
    }
}

fn meta(problem: &CuratedProblem, pairs: &[&CandidatePair], attempt: usize) -> RequestMeta {
    RequestMeta {
        problem_id: Some(problem.problem.id.clone()),
        pair_ids: pairs.iter().map(|p| p.id()).collect(),
        pair_problem_ids: pairs.iter().map(|p| p.problem_id.clone()).collect(),
        attempt: Some(attempt as u64),
    }
}

/// One 1-shot repair call per pair, in the given order, for every test problem.
pub fn run_pair_inference(
    test: &[CuratedProblem],
    pairs: &[&CandidatePair],
    pair_problems: &Catalog,
    strategy: Strategy,
    gateway: &Gateway,
    scorer: &dyn Scorer,
    options: &InferenceOptions,
) -> Result<StrategyResult> {
    let mut sources = Vec::with_capacity(pairs.len());
    for p in pairs {
        sources.push(
            pair_problems
                .get(&p.problem_id)
                .ok_or_else(|| Error::UnknownProblem(p.problem_id.clone()))?,
        );
    }
    gateway.require((pairs.len() * test.len()) as u64)?;
    let tag = strategy.as_str();
    let per_problem = per_problem(test, options.parallelism, |cp| {
        let mut attempts = Vec::with_capacity(pairs.len());
        for (i, (pair, source)) in pairs.iter().zip(&sources).enumerate() {
            let spec = RepairPromptSpec::new(vec![(*pair, *source)], &cp.problem, &cp.guess, options.style);
            let request = GenerationRequest::new(build_repair_prompt(&spec)?, tag, &options.sampling)
                .with_meta(meta(cp, &[*pair], i));
            attempts.push(generate_attempt(
                gateway,
                scorer,
                request,
                &cp.problem,
                format!("{}/{tag}@{i}", cp.problem.id),
                Some(cp.guess.id.clone()),
            )?);
        }
        Ok(attempts)
    })?;
    Ok(StrategyResult {
        strategy,
        budget_per_problem: pairs.len(),
        per_problem,
    })
}

/// The first `n` golden pairs, one call each. `n` is truncated to the list length.
#[allow(clippy::too_many_arguments)]
pub fn run_aupair_inference(
    test: &[CuratedProblem],
    aupairs: &AuPairList,
    store: &PairStore,
    pair_problems: &Catalog,
    n: usize,
    gateway: &Gateway,
    scorer: &dyn Scorer,
    options: &InferenceOptions,
) -> Result<StrategyResult> {
    let pairs = aupairs.resolve(store)?;
    let n = n.min(pairs.len());
    run_pair_inference(test, &pairs[..n], pair_problems, Strategy::Aupair, gateway, scorer, options)
}

/// `n` seeded random pairs from the whole store as the in-context examples.
#[allow(clippy::too_many_arguments)]
pub fn run_random_pair_inference(
    test: &[CuratedProblem],
    store: &PairStore,
    pair_problems: &Catalog,
    n: usize,
    seed: u64,
    dedup_problems: bool,
    gateway: &Gateway,
    scorer: &dyn Scorer,
    options: &InferenceOptions,
) -> Result<StrategyResult> {
    let pairs = random_pair_baseline(store, n, seed, dedup_problems)?;
    let refs: Vec<&CandidatePair> = pairs.iter().collect();
    run_pair_inference(test, &refs, pair_problems, Strategy::RandomPairs, gateway, scorer, options)
}

/// `n` independent zero-shot repairs per problem at temperature 1.0.
pub fn run_best_of_n(
    test: &[CuratedProblem],
    n: usize,
    gateway: &Gateway,
    scorer: &dyn Scorer,
    options: &InferenceOptions,
) -> Result<StrategyResult> {
    if n == 0 {
        return Err(Error::InvalidArgument("best-of-n needs n >= 1".into()));
    }
    gateway.require((n * test.len()) as u64)?;
    let sampling = SamplingParams {
        temperature: 1.0,
        ..options.sampling.clone()
    };
    let tag = Strategy::BestOfN.as_str();
    let per_problem = per_problem(test, options.parallelism, |cp| {
        let prompt = build_zero_shot_repair_prompt(&cp.problem, &cp.guess, options.style);
        (0..n)
            .map(|i| {
                let request = GenerationRequest::new(prompt.clone(), tag, &sampling).with_meta(meta(cp, &[], i));
                generate_attempt(
                    gateway,
                    scorer,
                    request,
                    &cp.problem,
                    format!("{}/{tag}@{i}", cp.problem.id),
                    Some(cp.guess.id.clone()),
                )
            })
            .collect()
    })?;
    Ok(StrategyResult {
        strategy: Strategy::BestOfN,
        budget_per_problem: n,
        per_problem,
    })
}

/// `f` verbal-feedback calls, then `r` repairs conditioned on each feedback.
/// Uses `f * (1 + r)` of the `n` calls per problem; only repairs are scored.
pub fn run_self_repair(
    test: &[CuratedProblem],
    n: usize,
    f: usize,
    r: usize,
    gateway: &Gateway,
    scorer: &dyn Scorer,
    options: &InferenceOptions,
) -> Result<StrategyResult> {
    let calls = f
        .checked_mul(r + 1)
        .filter(|&c| f >= 1 && r >= 1 && c <= n)
        .ok_or_else(|| Error::InvalidArgument(format!("self-repair needs f, r >= 1 and f*(1+r) <= n; got f={f}, r={r}, n={n}")))?;
    gateway.require((calls * test.len()) as u64)?;
    let per_problem = per_problem(test, options.parallelism, |cp| {
        let mut attempts = Vec::with_capacity(f * r);
        for fi in 0..f {
            let request = GenerationRequest::new(
                build_feedback_prompt(&cp.problem, &cp.guess),
                FEEDBACK_TAG,
                &options.sampling,
            )
            .with_meta(meta(cp, &[], fi));
            let feedback = gateway.generate(request)?.response_text;
            let prompt = build_feedback_repair_prompt(&cp.problem, &cp.guess, &feedback);
            for ri in 0..r {
                let k = fi * r + ri;
                let request = GenerationRequest::new(prompt.clone(), REPAIR_TAG, &options.sampling)
                    .with_meta(meta(cp, &[], k));
                attempts.push(generate_attempt(
                    gateway,
                    scorer,
                    request,
                    &cp.problem,
                    format!("{}/self_repair@{fi}.{ri}", cp.problem.id),
                    Some(cp.guess.id.clone()),
                )?);
            }
        }
        Ok(attempts)
    })?;
    Ok(StrategyResult {
        strategy: Strategy::SelfRepair,
        budget_per_problem: f * r,
        per_problem,
    })
}

/// Best attempt of one test problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemScore {
    pub problem_id: String,
    /// Highest fraction of tests passed.
    pub best: f64,
    pub solved: bool,
    pub initial: f64,
    pub initial_solved: bool,
}

/// Per-problem maxima in test-set order.
pub fn problem_scores(
    result: &StrategyResult,
    test: &[CuratedProblem],
    include_initial_guess: bool,
) -> Result<Vec<ProblemScore>> {
    let known: std::collections::HashSet<&str> = test.iter().map(|cp| cp.problem.id.as_str()).collect();
    if let Some(id) = result.per_problem.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::UnknownProblem(id.clone()));
    }
    Ok(test
        .iter()
        .map(|cp| {
            let attempts = result.attempts(&cp.problem.id);
            let mut best = attempts.iter().map(|a| a.score).fold(0.0, f64::max);
            let mut solved = attempts.iter().any(Attempt::is_solved);
            if include_initial_guess {
                best = best.max(cp.guess.score);
                solved |= cp.guess.is_solved();
            }
            ProblemScore {
                problem_id: cp.problem.id.clone(),
                best,
                solved,
                initial: cp.guess.score,
                initial_solved: cp.guess.is_solved(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub budget: usize,
    pub n_problems: usize,
    pub test_pass_rate: f64,
    pub strict_accuracy: f64,
    pub include_initial_guess: bool,
    pub per_difficulty: Vec<BucketMetrics>,
    pub per_category: Vec<BucketMetrics>,
}

/// Mean over `test` of the best pass fraction and of the solved indicator.
/// Problems without attempts contribute 0 unless the guess is included.
pub fn compute_metrics(
    result: &StrategyResult,
    test: &[CuratedProblem],
    include_initial_guess: bool,
) -> Result<MetricsReport> {
    let scores = problem_scores(result, test, include_initial_guess)?;
    let n = scores.len();
    let mean = |f: &dyn Fn(&ProblemScore) -> f64| {
        if n == 0 {
            0.0
        } else {
            scores.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(MetricsReport {
        strategy: result.strategy,
        budget: result.budget_per_problem,
        n_problems: n,
        test_pass_rate: mean(&|s| s.best),
        strict_accuracy: mean(&|s| if s.solved { 1.0 } else { 0.0 }),
        include_initial_guess,
        per_difficulty: breakdown(&scores, test, Axis::Difficulty),
        per_category: breakdown(&scores, test, Axis::Category),
    })
}

/// Metrics on the first `n` attempts for each budget in `budgets`.
pub fn scaling_curve(
    result: &StrategyResult,
    test: &[CuratedProblem],
    budgets: &[usize],
    include_initial_guess: bool,
) -> Result<Vec<MetricsReport>> {
    budgets
        .iter()
        .map(|&n| compute_metrics(&result.truncated(n), test, include_initial_guess))
        .collect()
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    strategy: &'a str,
    budget: usize,
    n_problems: usize,
    test_pass_rate: f64,
    strict_accuracy: f64,
}

/// One CSV row per report, with a header line.
pub fn metrics_csv(reports: &[MetricsReport]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        w.serialize(CsvRow {
            strategy: r.strategy.as_str(),
            budget: r.budget,
            n_problems: r.n_problems,
            test_pass_rate: r.test_pass_rate,
            strict_accuracy: r.strict_accuracy,
        })
        .expect("csv row serializes");
    }
    w.into_inner().expect("in-memory writer")
}
