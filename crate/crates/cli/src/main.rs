//! `aupair`: command-line driver for the golden repair-pair pipeline.
//!
//! Exit codes: 0 success, 1 invalid configuration, arguments or missing
//! upstream artifacts, 2 runtime failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aupair::analysis::Axis;
use aupair::inference::Strategy;
use clap::{Parser, Subcommand};

use crate::artifacts::MissingArtifact;
use crate::commands::Ctx;
use crate::config::{RunConfig, ValidationError};

#[derive(Parser)]
#[command(name = "aupair", version, about = "Golden repair-pair pipeline")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(short, long, global = true, default_value = "pipeline.toml")]
    config: PathBuf,
    /// Override a config value, e.g. `--set budgets.inference=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an initial guess per problem and drop the solved ones.
    Curate,
    /// Stratified train/val/test split of the curated problems.
    Split,
    /// Generate candidate repair pairs on the training split.
    Pairgen {
        /// Continue from the existing pair store with the unspent budget.
        #[arg(long)]
        resume: bool,
    },
    /// Score every pair on the validation split and select the AuPairs.
    Extract {
        /// Rebuild the fix-quality matrix even when a matching one exists.
        #[arg(long)]
        recompute: bool,
    },
    /// Run inference strategies on the test split.
    Eval {
        /// Strategies to run; defaults to `eval.strategies`.
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
        /// Per-problem call budget; defaults to `budgets.inference`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Post-hoc analyses of stored artifacts.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// Curate, split, generate pairs, extract and evaluate in sequence.
    Run,
    /// Print the planned generation calls per phase without calling anything.
    DryRun,
}

#[derive(Subcommand)]
enum Analysis {
    /// AST-subtree diversity of a strategy's fixes.
    Diversity {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Histogram of pair lineage depths.
    Lineage,
    /// Metrics per difficulty or category bucket.
    Breakdown {
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value = "difficulty")]
        axis: Axis,
    },
    /// Check every recorded artifact digest.
    Provenance,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let config = RunConfig::load(&cli.config, &cli.overrides)?;
    let ctx = Ctx::new(config);
    match cli.command {
        Command::Curate => {
            commands::curate(&ctx)?;
        }
        Command::Split => {
            commands::split(&ctx)?;
        }
        Command::Pairgen { resume } => {
            commands::pairgen(&ctx, resume)?;
        }
        Command::Extract { recompute } => {
            commands::extract(&ctx, recompute)?;
        }
        Command::Eval { strategies, n } => {
            commands::eval(&ctx, &strategies, n)?;
        }
        Command::Analyze { what } => match what {
            Analysis::Diversity { strategy, n } => commands::analyze_diversity(&ctx, strategy, n)?,
            Analysis::Lineage => commands::analyze_lineage(&ctx)?,
            Analysis::Breakdown { strategy, n, axis } => {
                commands::analyze_breakdown(&ctx, strategy, n, axis)?
            }
            Analysis::Provenance => return commands::analyze_provenance(&ctx),
        },
        Command::Run => {
            commands::curate(&ctx)?;
            commands::split(&ctx)?;
            commands::pairgen(&ctx, false)?;
            commands::extract(&ctx, false)?;
            commands::eval(&ctx, &[], None)?;
        }
        Command::DryRun => {
            commands::dry_run(&ctx)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.downcast_ref::<ValidationError>().is_some()
                || e.downcast_ref::<MissingArtifact>().is_some();
            ExitCode::from(if invalid { 1 } else { 2 })
        }
    }
}
