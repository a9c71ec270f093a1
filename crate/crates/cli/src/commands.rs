//! One function per subcommand. Every command reads its inputs from the work
//! directory, writes its outputs atomically and records provenance.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use aupair::analysis::{
    breakdown, buckets_csv, diversity_score, lineage_histogram, Axis, PythonAstExtractor,
};
use aupair::evaluator::Evaluator;
use aupair::extraction::{
    compute_fix_quality_matrix, extract_aupairs, AuPairList, FixQualityMatrix, MatrixOptions,
};
use aupair::gateway::{
    Backend, Budget, Gateway, HttpBackend, ReplayBackend, ReplayMode, ReplayStore, RunLog,
    ScriptedOracle,
};
use aupair::inference::{
    compute_metrics, metrics_csv, problem_scores, run_aupair_inference, run_best_of_n,
    run_random_pair_inference, run_self_repair, scaling_curve, InferenceOptions, MetricsReport,
    Strategy, StrategyResult,
};
use aupair::io::{file_sha256, sha256_hex, write_atomic, write_json};
use aupair::model::{
    check_difficulty_vocabulary, load_curated, load_dataset, save_curated, stratified_split,
    Catalog, CuratedProblem, DatasetFormat, Problem, SplitDataset, SplitManifest,
};
use aupair::pairgen::{
    curate_guesses, generate_pairs, CurationReport, PairGenConfig, PairGenReport, PairStore,
};
use log::info;
use serde::Serialize;

use crate::artifacts::{verify_provenance, Layout, Provenance};
use crate::config::{BackendChoice, RunConfig};

pub struct Ctx {
    pub config: RunConfig,
    pub layout: Layout,
    pub config_digest: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

impl Ctx {
    pub fn new(config: RunConfig) -> Self {
        let config_digest = sha256_hex(&serde_json::to_vec(&config).expect("config serializes"));
        let layout = Layout::new(&config.work_dir);
        Ctx {
            config,
            layout,
            config_digest,
        }
    }

    fn problems(&self) -> Result<Vec<Problem>> {
        let problems = load_dataset(&self.config.data.problems, DatasetFormat::Jsonl)?;
        if let Some(vocab) = &self.config.data.difficulty_vocabulary {
            check_difficulty_vocabulary(&problems, vocab)?;
        }
        Ok(problems)
    }

    fn curated(&self) -> Result<Vec<CuratedProblem>> {
        let path = self.layout.require(self.layout.curated(), "curated problems", "curate")?;
        Ok(load_curated(&path)?)
    }

    fn split(&self) -> Result<SplitDataset<CuratedProblem>> {
        let curated = self.curated()?;
        let path = self.layout.require(self.layout.split(), "split manifest", "split")?;
        let manifest: SplitManifest = read_json(&path)?;
        Ok(manifest.apply(&curated)?)
    }

    fn pairs(&self) -> Result<PairStore> {
        let path = self.layout.require(self.layout.pairs(), "candidate pairs", "pairgen")?;
        Ok(PairStore::load(&path)?)
    }

    fn backend(&self, choice: BackendChoice) -> Result<Box<dyn Backend>> {
        let gw = &self.config.gateway;
        Ok(match choice {
            BackendChoice::Scripted => {
                let problems = self.problems()?;
                let oracle = gw.oracle.as_ref().context("gateway.oracle is not set")?;
                Box::new(ScriptedOracle::from_file(
                    oracle,
                    problems.iter().map(|p| p.id.as_str()),
                )?)
            }
            BackendChoice::Http => {
                let http = gw.http.clone().context("[gateway.http] is not set")?;
                Box::new(HttpBackend::new(http)?)
            }
            BackendChoice::Replay => {
                let dir = gw.replay_dir.as_ref().context("gateway.replay_dir is not set")?;
                let store = ReplayStore::open(dir)?;
                match gw.replay_fallback {
                    None => Box::new(ReplayBackend::new(store, ReplayMode::Strict)),
                    Some(BackendChoice::Replay) => bail!("gateway.replay_fallback cannot be replay"),
                    Some(fallback) => Box::new(
                        ReplayBackend::new(store, ReplayMode::Permissive(self.backend(fallback)?))
                            .persist_to(dir),
                    ),
                }
            }
        })
    }

    fn gateway(&self, phase: &str, limit: u64, append: bool) -> Result<Gateway> {
        let path = self.layout.run_log(phase);
        let mut log = if append && path.exists() {
            RunLog::append_to(&path)?
        } else {
            RunLog::create(&path)?
        };
        if self.config.gateway.record_dir.is_some() {
            log = log.retaining();
        }
        Ok(Gateway::new(self.backend(self.config.gateway.backend)?, limit, log)
            .with_parallelism(self.config.gateway.parallelism))
    }

    /// Adds the phase's calls to the record store, when one is configured.
    fn record(&self, gateway: &Gateway) -> Result<()> {
        if let Some(dir) = &self.config.gateway.record_dir {
            let mut store = ReplayStore::open(dir)?;
            store.import_records(&gateway.records());
            store.save(dir)?;
        }
        Ok(())
    }

    fn evaluator(&self) -> Result<Evaluator> {
        let r = &self.config.runner;
        Ok(Evaluator::new(r.command(), r.limits())?
            .with_parallelism(r.parallelism)
            .with_numeric_tolerance(r.numeric_tolerance))
    }

    fn provenance(
        &self,
        phase: &str,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        budget: Option<Budget>,
    ) -> Result<()> {
        Provenance::record(&self.layout, phase, &self.config_digest, inputs, outputs, budget)?
            .save(&self.layout, phase)
    }

    fn inference_options(&self) -> InferenceOptions {
        InferenceOptions {
            style: self.config.prompt.style,
            sampling: self.config.sampling.clone(),
            parallelism: self.config.eval.parallelism,
        }
    }
}

pub fn curate(ctx: &Ctx) -> Result<CurationReport> {
    let problems = ctx.problems()?;
    let gateway = ctx.gateway("curate", ctx.config.budgets.curation, false)?;
    let evaluator = ctx.evaluator()?;
    let (curated, report) = curate_guesses(&problems, &gateway, &evaluator, &ctx.config.sampling)?;
    let (out, rep) = (ctx.layout.curated(), ctx.layout.curation_report());
    save_curated(&out, &curated)?;
    write_json(&rep, &report)?;
    ctx.record(&gateway)?;
    ctx.provenance(
        "curate",
        std::slice::from_ref(&ctx.config.data.problems),
        &[out, rep],
        Some(gateway.budget()),
    )?;
    info!(
        "curated {} of {} problems ({} solved by the first guess)",
        report.retained, report.total, report.solved_and_dropped
    );
    Ok(report)
}

pub fn split(ctx: &Ctx) -> Result<SplitManifest> {
    let curated = ctx.curated()?;
    let (seed, ratios) = (ctx.config.split.seed, ctx.config.split.ratios());
    let manifest = stratified_split(&curated, ratios, seed)?.manifest(seed, ratios);
    let out = ctx.layout.split();
    write_json(&out, &manifest)?;
    ctx.provenance("split", &[ctx.layout.curated()], &[out], None)?;
    info!(
        "split into {} train, {} val, {} test",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(manifest)
}

pub fn pairgen(ctx: &Ctx, resume: bool) -> Result<PairGenReport> {
    let split = ctx.split()?;
    let (store, previous) = if resume {
        let store = ctx.pairs()?;
        let report: PairGenReport = read_json(&ctx.layout.pairgen_report())?;
        (Some(store), report)
    } else {
        (None, PairGenReport::default())
    };
    let remaining = ctx.config.budgets.pairgen.saturating_sub(previous.calls);
    if resume && remaining == 0 {
        info!("pair generation budget already spent; nothing to do");
        return Ok(previous);
    }
    let gateway = ctx.gateway("pairgen", remaining, resume)?;
    let evaluator = ctx.evaluator()?;
    let config = PairGenConfig {
        budget: remaining as usize,
        k: ctx.config.pairgen.k,
        seed: ctx.config.pairgen.seed,
        style: ctx.config.prompt.style,
        sampling: ctx.config.sampling.clone(),
    };
    let run = generate_pairs(&split.train, &gateway, &evaluator, &config, store)?;
    let mut report = PairGenReport::from(&run);
    report.calls += previous.calls;
    let (out, rep) = (ctx.layout.pairs(), ctx.layout.pairgen_report());
    run.store.save(&out)?;
    write_json(&rep, &report)?;
    ctx.record(&gateway)?;
    let inputs = [ctx.layout.curated(), ctx.layout.split()];
    ctx.provenance("pairgen", &inputs, &[out, rep], Some(gateway.budget()))?;
    info!(
        "{} pairs from {} calls ({:?})",
        report.pairs, report.calls, run.stop
    );
    Ok(report)
}

#[derive(Serialize)]
struct MatrixInputs<'a> {
    pairs_sha256: String,
    curated_sha256: String,
    split_sha256: String,
    style: aupair::prompt::PromptStyle,
    sampling: &'a aupair::gateway::SamplingParams,
    backend: BackendChoice,
    runner: &'a crate::config::RunnerConfig,
}

/// Builds (or reuses) the fix-quality matrix and extracts the AuPair list.
pub fn extract(ctx: &Ctx, recompute: bool) -> Result<AuPairList> {
    let split = ctx.split()?;
    let store = ctx.pairs()?;
    let provenance = serde_json::to_string(&MatrixInputs {
        pairs_sha256: file_sha256(&ctx.layout.pairs())?,
        curated_sha256: file_sha256(&ctx.layout.curated())?,
        split_sha256: file_sha256(&ctx.layout.split())?,
        style: ctx.config.prompt.style,
        sampling: &ctx.config.sampling,
        backend: ctx.config.gateway.backend,
        runner: &ctx.config.runner,
    })?;
    let matrix_path = ctx.layout.matrix();
    let cached = match FixQualityMatrix::load(&matrix_path) {
        Ok(m) if !recompute && m.provenance == provenance => Some(m),
        _ => None,
    };
    let (matrix, budget) = match cached {
        Some(m) => {
            info!("reusing {} ({}x{})", matrix_path.display(), m.rows(), m.cols());
            (m, None)
        }
        None => {
            let calls = (store.len() * split.val.len()) as u64;
            let gateway = ctx.gateway("extract", calls, false)?;
            let evaluator = ctx.evaluator()?;
            let options = MatrixOptions {
                style: ctx.config.prompt.style,
                sampling: ctx.config.sampling.clone(),
                parallelism: ctx.config.extract.parallelism,
            };
            let catalog = Catalog::new(&split.train);
            let m = compute_fix_quality_matrix(&store, &catalog, &split.val, &gateway, &evaluator, &options)?
                .with_provenance(provenance);
            m.save(&matrix_path)?;
            ctx.record(&gateway)?;
            (m, Some(gateway.budget()))
        }
    };
    let list = extract_aupairs(&matrix, ctx.config.extract.epsilon)?;
    let out = ctx.layout.aupairs();
    list.save(&out)?;
    ctx.provenance(
        "extract",
        &[ctx.layout.curated(), ctx.layout.split(), ctx.layout.pairs()],
        &[matrix_path, out],
        budget,
    )?;
    info!(
        "{} AuPairs from a {}x{} matrix (total gain {:.3})",
        list.len(),
        matrix.rows(),
        matrix.cols(),
        list.gains().iter().sum::<f64>()
    );
    Ok(list)
}

/// Calls a strategy will make on `test` at budget `n`.
fn planned_calls(ctx: &Ctx, strategy: Strategy, n: usize, test: usize, aupairs: Option<usize>) -> usize {
    let per_problem = match strategy {
        Strategy::Aupair => aupairs.map_or(n, |len| n.min(len)),
        Strategy::BestOfN | Strategy::RandomPairs => n,
        Strategy::SelfRepair => {
            let (f, r) = (ctx.config.eval.feedbacks, ctx.config.eval.repairs_per_feedback);
            f * (1 + r)
        }
    };
    per_problem * test
}

pub fn eval(ctx: &Ctx, strategies: &[Strategy], n: Option<usize>) -> Result<Vec<MetricsReport>> {
    let n = n.unwrap_or(ctx.config.budgets.inference);
    if n == 0 {
        bail!(crate::config::ValidationError(vec!["--n must be positive".into()]));
    }
    let strategies = if strategies.is_empty() {
        ctx.config.eval.strategies.clone()
    } else {
        strategies.to_vec()
    };
    // Check every prerequisite before spending any budget.
    let split = ctx.split()?;
    let needs_pairs = strategies
        .iter()
        .any(|s| matches!(s, Strategy::Aupair | Strategy::RandomPairs));
    let store = if needs_pairs { Some(ctx.pairs()?) } else { None };
    let aupairs = if strategies.contains(&Strategy::Aupair) {
        let path = ctx.layout.require(ctx.layout.aupairs(), "AuPairList", "extract")?;
        Some(AuPairList::load(&path)?)
    } else {
        None
    };
    if strategies.contains(&Strategy::SelfRepair) {
        let (f, r) = (ctx.config.eval.feedbacks, ctx.config.eval.repairs_per_feedback);
        if f == 0 || r == 0 || f * (1 + r) > n {
            bail!(crate::config::ValidationError(vec![format!(
                "self-repair needs f, r >= 1 and f*(1+r) <= n; got f={f}, r={r}, n={n}"
            )]));
        }
    }
    let catalog = Catalog::new(&split.train);
    let evaluator = ctx.evaluator()?;
    let options = ctx.inference_options();
    let test = &split.test;
    let mut reports = Vec::new();
    for &strategy in &strategies {
        let phase = format!("eval-{strategy}-n{n}");
        let calls = planned_calls(ctx, strategy, n, test.len(), aupairs.as_ref().map(AuPairList::len));
        let gateway = ctx.gateway(&phase, calls as u64, false)?;
        let e = &ctx.config.eval;
        let mut inputs = vec![ctx.layout.curated(), ctx.layout.split()];
        let result = match strategy {
            Strategy::Aupair => {
                inputs.extend([ctx.layout.pairs(), ctx.layout.aupairs()]);
                let list = aupairs.as_ref().expect("loaded above");
                let store = store.as_ref().expect("loaded above");
                run_aupair_inference(test, list, store, &catalog, n, &gateway, &evaluator, &options)?
            }
            Strategy::RandomPairs => {
                inputs.push(ctx.layout.pairs());
                let store = store.as_ref().expect("loaded above");
                run_random_pair_inference(
                    test,
                    store,
                    &catalog,
                    n,
                    e.random_seed,
                    e.dedup_random,
                    &gateway,
                    &evaluator,
                    &options,
                )?
            }
            Strategy::BestOfN => run_best_of_n(test, n, &gateway, &evaluator, &options)?,
            Strategy::SelfRepair => run_self_repair(
                test,
                n,
                e.feedbacks,
                e.repairs_per_feedback,
                &gateway,
                &evaluator,
                &options,
            )?,
        };
        ctx.record(&gateway)?;
        let report = write_result(ctx, &result, test, n)?;
        let outputs = [
            ctx.layout.result(strategy, n),
            ctx.layout.metrics(strategy, n),
            ctx.layout.scaling(strategy, n),
        ];
        ctx.provenance(&phase, &inputs, &outputs, Some(gateway.budget()))?;
        println!(
            "{strategy} n={n}: test pass rate {:.4}, strict accuracy {:.4} over {} problems",
            report.test_pass_rate, report.strict_accuracy, report.n_problems
        );
        reports.push(report);
    }
    write_summary(ctx)?;
    Ok(reports)
}

fn write_result(ctx: &Ctx, result: &StrategyResult, test: &[CuratedProblem], n: usize) -> Result<MetricsReport> {
    let s = result.strategy;
    let include = ctx.config.eval.include_initial_guess;
    result.save(&ctx.layout.result(s, n))?;
    let report = compute_metrics(result, test, include)?;
    write_json(&ctx.layout.metrics(s, n), &report)?;
    let budgets: Vec<usize> = (1..=result.budget_per_problem.max(1)).collect();
    let curve = scaling_curve(result, test, &budgets, include)?;
    write_atomic(&ctx.layout.scaling(s, n), &metrics_csv(&curve))?;
    Ok(report)
}

/// Rewrites `metrics.csv` from every metrics file present.
fn write_summary(ctx: &Ctx) -> Result<()> {
    let mut reports: Vec<MetricsReport> = Vec::new();
    for entry in std::fs::read_dir(ctx.layout.metrics_dir())? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "json") {
            reports.push(read_json(&path)?);
        }
    }
    reports.sort_by_key(|r| (r.strategy, r.budget));
    write_atomic(&ctx.layout.metrics_summary(), &metrics_csv(&reports))?;
    Ok(())
}

fn load_result(ctx: &Ctx, strategy: Strategy, n: Option<usize>) -> Result<(StrategyResult, usize)> {
    let n = n.unwrap_or(ctx.config.budgets.inference);
    let path = ctx.layout.require(ctx.layout.result(strategy, n), "inference result", "eval")?;
    Ok((StrategyResult::load(&path)?, n))
}

pub fn analyze_diversity(ctx: &Ctx, strategy: Strategy, n: Option<usize>) -> Result<()> {
    let split = ctx.split()?;
    let (result, n) = load_result(ctx, strategy, n)?;
    let extractor = PythonAstExtractor {
        python: ctx.config.analysis.python.clone(),
        normalize_identifiers: ctx.config.analysis.normalize_identifiers,
    };
    let report = diversity_score(&result, &split.test, n, &extractor)?;
    let out = ctx.layout.analysis(&format!("diversity-{strategy}-n{n}.json"));
    write_json(&out, &report)?;
    println!(
        "{strategy} n={n}: diversity {:.6} (S_max {}, {} unparsed)",
        report.delta, report.s_max, report.unparsed
    );
    Ok(())
}

pub fn analyze_lineage(ctx: &Ctx) -> Result<()> {
    let store = ctx.pairs()?;
    let histogram = lineage_histogram(&store)?;
    write_json(&ctx.layout.analysis("lineage.json"), &histogram)?;
    for (depth, count) in &histogram {
        println!("depth {depth}: {count}");
    }
    Ok(())
}

pub fn analyze_breakdown(ctx: &Ctx, strategy: Strategy, n: Option<usize>, axis: Axis) -> Result<()> {
    let split = ctx.split()?;
    let (result, n) = load_result(ctx, strategy, n)?;
    let scores = problem_scores(&result, &split.test, ctx.config.eval.include_initial_guess)?;
    let buckets = breakdown(&scores, &split.test, axis);
    let csv = buckets_csv(axis, &buckets);
    write_atomic(&ctx.layout.analysis(&format!("breakdown-{axis}-{strategy}-n{n}.csv")), &csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

pub fn analyze_provenance(ctx: &Ctx) -> Result<bool> {
    let (records, issues) = verify_provenance(&ctx.layout)?;
    for i in &issues {
        println!("{}: {}: {}", i.phase, i.file, i.problem);
    }
    println!("{records} provenance records, {} issues", issues.len());
    Ok(issues.is_empty())
}

/// Planned generation calls per phase, from whatever artifacts exist.
pub fn dry_run(ctx: &Ctx) -> Result<Vec<(String, Option<u64>)>> {
    let c = &ctx.config;
    let problems = ctx.problems()?;
    let mut plan: Vec<(String, Option<u64>)> = vec![
        ("curate".into(), Some(problems.len() as u64)),
        ("pairgen".into(), Some(c.budgets.pairgen)),
    ];
    let split = ctx.split().ok();
    let pairs = ctx.pairs().ok();
    let matrix = match (&split, &pairs) {
        (Some(s), Some(p)) => Some((p.len() * s.val.len()) as u64),
        _ => None,
    };
    plan.push(("extract".into(), matrix));
    let aupairs = AuPairList::load(&ctx.layout.aupairs()).ok().map(|l| l.len());
    for &s in &c.eval.strategies {
        let calls = split
            .as_ref()
            .map(|sp| planned_calls(ctx, s, c.budgets.inference, sp.test.len(), aupairs) as u64);
        plan.push((format!("eval {s} n={}", c.budgets.inference), calls));
    }
    for (phase, calls) in &plan {
        match calls {
            Some(n) => println!("{phase}: {n} calls"),
            None => println!("{phase}: unknown until upstream phases run"),
        }
    }
    Ok(plan)
}
