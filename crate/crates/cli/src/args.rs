//! Flag definitions for every subcommand.
//!
//! Every tunable is an `Option` so that resolution can layer flag values
//! over config-file values over built-in defaults.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use dppsel::objective::LossKind;
use dppsel::pipeline::SelectionMode;

// ───────────────────────── enum flags ─────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Topk,
    DppBase,
    DppAdapter,
}

impl From<ModeArg> for SelectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Topk => SelectionMode::TopK,
            ModeArg::DppBase => SelectionMode::DppBase,
            ModeArg::DppAdapter => SelectionMode::DppAdapter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Dml,
    Nll,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Dml => LossKind::Dml,
            LossArg::Nll => LossKind::Nll,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn as_bool(self) -> bool {
        matches!(self, OnOff::On)
    }
}

// ───────────────────────── subcommand flags ─────────────────────────

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Candidate pools (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub pools: Option<PathBuf>,
    /// Trained adapter parameters; selection runs in raw space without them.
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
    /// Subset size to select per pool.
    #[arg(long)]
    pub k: Option<usize>,
    /// Pools are truncated to this many top candidates.
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Greedy stopping threshold on the best conditional gain.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// LogSumExp sharpness (accepted everywhere for config uniformity).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Fuse retriever scores into the kernel diagonal.
    #[arg(long, value_enum)]
    pub quality: Option<OnOff>,
    /// Write selections here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Supervision tuples (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub tuples: Option<PathBuf>,
    /// Embedding table covering every id in the tuples.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Where to write the trained adapter parameters.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Loss history CSV path (default: `<out>` with a `.history.csv` extension).
    #[arg(long, value_name = "PATH")]
    pub history: Option<PathBuf>,
    /// Training objective.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// LogSumExp sharpness of the smoothed margin loss.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Cap on negative subsets enumerated or sampled per example.
    #[arg(long)]
    pub max_neg_subsets: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled candidate pools (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub pools: Option<PathBuf>,
    /// Trained adapter parameters; enables the dpp-adapter rows.
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
    /// Comma-separated cutoffs to report, e.g. `10,4`.
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Restrict the mode matrix to a single selection strategy.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Restrict the quality matrix to one setting (default: both).
    #[arg(long, value_enum)]
    pub quality: Option<OnOff>,
    /// Write the full JSON report here (the table always prints to stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MarginsArgs {
    /// Supervision tuples (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub tuples: Option<PathBuf>,
    /// Embedding table covering every id in the tuples.
    #[arg(long, value_name = "PATH")]
    pub embeddings: Option<PathBuf>,
    /// Trained adapter parameters; adds adapter-space rows.
    #[arg(long, value_name = "PATH")]
    pub params: Option<PathBuf>,
    /// Cap on negative subsets per query.
    #[arg(long)]
    pub max_neg_subsets: Option<usize>,
    /// Write the JSON rows here (the table always prints to stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Trial budget; individual checks scale their counts from it.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Write the machine-readable report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory for pools.jsonl, tuples.jsonl, embeddings.jsonl.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Gold evidence items per query.
    #[arg(long)]
    pub k_pos: Option<usize>,
    /// Rotate gold sizes across queries, e.g. `2,3,4`; pool size stays fixed.
    #[arg(long, value_delimiter = ',')]
    pub k_cycle: Option<Vec<usize>>,
    /// Total candidates per pool (gold + distractors).
    #[arg(long)]
    pub pool_size: Option<usize>,
    /// Distractor similarity to the evidence it shadows, in [0,1].
    #[arg(long)]
    pub redundancy: Option<f64>,
    /// Amplitude of the shared noise direction on gold items.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Pools to split (JSON lines).
    #[arg(long, value_name = "PATH")]
    pub pools: Option<PathBuf>,
    /// Matching tuples; split along the same query partition when given.
    #[arg(long, value_name = "PATH")]
    pub tuples: Option<PathBuf>,
    /// train:dev:test proportions, e.g. `5:1:4`.
    #[arg(long)]
    pub ratio: Option<String>,
    /// Directory for the `.train/.dev/.test` files.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
}
