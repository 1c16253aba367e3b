//! `dppsel` — determinantal subset selection for retrieval pipelines.
//!
//! Subcommands cover the full workflow: `synth` and `split` produce
//! datasets, `train` fits the embedding adapter, `select` picks diverse
//! context subsets, `eval` and `margins` report quality, and `check` runs
//! the numerical verification suite.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure,
//! 4 verification-suite failure.

mod args;
mod commands;
mod config;
mod table;

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use args::{CheckArgs, EvalArgs, MarginsArgs, SelectArgs, SplitArgs, SynthArgs, TrainArgs};
use config::{digest, load_file_config, Ctx, FileConfig};

// ───────────────────────── failure taxonomy ─────────────────────────

/// A command failure carrying its exit code: 2 for anything wrong with the
/// inputs or flags, 3 for numerical trouble inside otherwise valid work.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

pub type CmdResult<T> = Result<T, Failure>;

impl Failure {
    pub fn input(msg: impl Display) -> Self {
        Failure {
            code: 2,
            msg: msg.to_string(),
        }
    }

    pub fn numerical(msg: impl Display) -> Self {
        Failure {
            code: 3,
            msg: msg.to_string(),
        }
    }
}

impl From<dppsel::io::IoError> for Failure {
    fn from(e: dppsel::io::IoError) -> Self {
        Failure::input(e)
    }
}

fn objective_code(e: &dppsel::objective::ObjectiveError) -> u8 {
    use dppsel::objective::ObjectiveError as E;
    match e {
        E::InvalidConfig(_) | E::InvalidExample(_) | E::EmptyDataset | E::TooFewNegatives { .. } => 2,
        _ => 3,
    }
}

impl From<dppsel::objective::ObjectiveError> for Failure {
    fn from(e: dppsel::objective::ObjectiveError) -> Self {
        Failure {
            code: objective_code(&e),
            msg: e.to_string(),
        }
    }
}

impl From<dppsel::pipeline::PipelineError> for Failure {
    fn from(e: dppsel::pipeline::PipelineError) -> Self {
        use dppsel::pipeline::PipelineError as E;
        let code = match &e {
            E::InvalidConfig(_)
            | E::InvalidPool { .. }
            | E::MissingScores { .. }
            | E::MissingParams
            | E::Metrics(_) => 2,
            E::Objective(o) => objective_code(o),
            E::Kernel(_) | E::Map(_) | E::Adapter(_) => 3,
        };
        Failure {
            code,
            msg: e.to_string(),
        }
    }
}

// ───────────────────────── argument tree ─────────────────────────

#[derive(Parser)]
#[command(
    name = "dppsel",
    version,
    about = "Determinantal subset selection for retrieval pipelines"
)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every stochastic step; identical seeds reproduce outputs
    /// byte-for-byte (timing fields aside).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select diverse context subsets, one JSON line per pool.
    Select(SelectArgs),
    /// Train the embedding adapter and write params + loss history.
    Train(TrainArgs),
    /// Report Recall/NDCG/Hits across selection modes and cutoffs.
    Eval(EvalArgs),
    /// Determinant margins by hop count, raw vs adapter space.
    Margins(MarginsArgs),
    /// Run the numerical verification suite.
    Check(CheckArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Stratified train/dev/test split of pools (and matching tuples).
    Split(SplitArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult<i32> {
    let (file, config_input) = match &cli.config {
        Some(p) => (load_file_config(p)?, Some(digest("config", p)?)),
        None => (FileConfig::default(), None),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(Failure::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::input(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
        config_input,
    };
    match &cli.command {
        Command::Select(a) => commands::select::run(&ctx, a),
        Command::Train(a) => commands::train::run(&ctx, a),
        Command::Eval(a) => commands::eval::run(&ctx, a),
        Command::Margins(a) => commands::margins::run(&ctx, a),
        Command::Check(a) => commands::check::run(&ctx, a),
        Command::Synth(a) => commands::synth::run(&ctx, a),
        Command::Split(a) => commands::split::run(&ctx, a),
    }
}
