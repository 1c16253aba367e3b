//! End-to-end walkthrough on synthetic retrieval pools.
//!
//! Generates queries whose top-ranked candidates are highly redundant, splits
//! them into train/dev/test, trains the bottleneck adapter on the smoothed
//! determinant-margin loss, and then compares three selection strategies on
//! the held-out split. Also reports the determinant margin (gold subset vs.
//! hardest same-size distractor subset) before and after the adapter, which
//! is the quantity the loss optimizes directly.
//!
//! Run with:
//!
//! ```text
//! cargo run --release -p dppsel --example synthetic_workflow
//! cargo run --release -p dppsel --example synthetic_workflow -- 0.15 0.25
//! ```
//!
//! Positional arguments are embedding noise levels to sweep; the default
//! sweep covers 0.15–0.35.

use std::error::Error;

use dppsel::adapter::{init_params, AdapterParams};
use dppsel::objective::{train, LossConfig, TrainingExample};
use dppsel::pipeline::{
    evaluate, margin_analysis, stratified_split, synth_dataset, CandidatePool, PipelineConfig,
    SelectionMode, SynthConfig,
};

// ───────────────────────── fixed experiment shape ─────────────────────────

const N_QUERIES: usize = 200;
const DIM: usize = 32;
const POOL: usize = 20;
const MAX_K: usize = 4;
const REDUNDANCY: f64 = 0.95;
const EPOCHS: usize = 20;
const BATCH: usize = 8;
const LEARNING_RATE: f64 = 1e-4;

const SEED_DATA: u64 = 17;
const SEED_SPLIT: u64 = 41;
const SEED_INIT: u64 = 7;
const SEED_TRAIN: u64 = 23;

fn main() -> Result<(), Box<dyn Error>> {
    let mut noises: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("noise arguments must be floats: {e}"))?;
    if noises.is_empty() {
        noises = vec![0.15, 0.20, 0.25, 0.30, 0.35];
    }
    for noise in noises {
        run_at_noise(noise)?;
    }
    Ok(())
}

// ───────────────────────── one sweep point ─────────────────────────

fn run_at_noise(noise: f64) -> Result<(), Box<dyn Error>> {
    let cfg = SynthConfig::new(N_QUERIES, DIM, MAX_K, POOL - MAX_K, REDUNDANCY, SEED_DATA)
        .with_k_cycle(vec![2, 3, 4])
        .with_noise(noise);
    let (pools, examples) = synth_dataset(&cfg)?;

    // Split indices so pools and examples stay aligned per query.
    let indices: Vec<usize> = (0..pools.len()).collect();
    let (train_idx, _dev_idx, test_idx) = stratified_split(
        &indices,
        |&i| pools[i].hop_count.unwrap_or(0),
        (5, 1, 4),
        SEED_SPLIT,
    )?;
    let train_set: Vec<TrainingExample> = train_idx.iter().map(|&i| examples[i].clone()).collect();
    let test_pools: Vec<CandidatePool> = test_idx.iter().map(|&i| pools[i].clone()).collect();
    let test_examples: Vec<&TrainingExample> = test_idx.iter().map(|&i| &examples[i]).collect();

    let loss_cfg = LossConfig::default();
    let (params, history) = train(
        &train_set,
        init_params(DIM, SEED_INIT),
        &loss_cfg,
        EPOCHS,
        BATCH,
        LEARNING_RATE,
        SEED_TRAIN,
    )?;

    println!(
        "noise {noise:.2}: {} train / {} test queries, loss {:.4} -> {:.4} over {} epochs",
        train_set.len(),
        test_pools.len(),
        history.first().map_or(f64::NAN, |s| s.mean_loss),
        history.last().map_or(f64::NAN, |s| s.mean_loss),
        history.len(),
    );

    report_margins(&test_examples, &params, &loss_cfg)?;
    for k in [10, 4] {
        report_metrics(&test_pools, &params, k)?;
    }
    println!();
    Ok(())
}

/// Fraction of test queries where the gold subset's determinant trails the
/// hardest distractor subset (raw space), and where the adapter restores it.
fn report_margins(
    test: &[&TrainingExample],
    params: &AdapterParams,
    loss_cfg: &LossConfig,
) -> Result<(), Box<dyn Error>> {
    let mut raw_negative = 0usize;
    let mut adapted_positive = 0usize;
    let mut raw_sum = 0.0;
    let mut adapted_sum = 0.0;
    let mut by_k: std::collections::BTreeMap<usize, (usize, usize, usize)> =
        std::collections::BTreeMap::new();
    for ex in test {
        let k = ex.positives.len();
        let raw = margin_analysis(
            &ex.pool,
            &ex.positives,
            &ex.negatives,
            k,
            None,
            loss_cfg.max_neg_subsets,
            loss_cfg.seed,
        )?;
        let adapted = margin_analysis(
            &ex.pool,
            &ex.positives,
            &ex.negatives,
            k,
            Some(params),
            loss_cfg.max_neg_subsets,
            loss_cfg.seed,
        )?;
        raw_negative += usize::from(raw.margin < 0.0);
        adapted_positive += usize::from(adapted.margin > 0.0);
        raw_sum += raw.margin;
        adapted_sum += adapted.margin;
        let slot = by_k.entry(k).or_default();
        slot.0 += usize::from(raw.margin < 0.0);
        slot.1 += usize::from(adapted.margin > 0.0);
        slot.2 += 1;
    }
    let n = test.len().max(1) as f64;
    println!(
        "  margins: raw negative {}/{} (mean {:+.4}), adapted positive {}/{} (mean {:+.4})",
        raw_negative,
        test.len(),
        raw_sum / n,
        adapted_positive,
        test.len(),
        adapted_sum / n,
    );
    for (k, (raw_n, ada_p, total)) in &by_k {
        println!("    |Y|={k}: raw negative {raw_n}/{total}, adapted positive {ada_p}/{total}");
    }
    Ok(())
}

/// Recall/NDCG on the held-out pools for the three selection strategies.
fn report_metrics(
    test_pools: &[CandidatePool],
    params: &AdapterParams,
    k: usize,
) -> Result<(), Box<dyn Error>> {
    let cfg = PipelineConfig::default().with_select_k(k);
    for mode in [
        SelectionMode::TopK,
        SelectionMode::DppBase,
        SelectionMode::DppAdapter,
    ] {
        let report = evaluate(test_pools, Some(params), &cfg, mode)?;
        println!(
            "  k={k:>2} {mode:<12} recall {:.4}  ndcg {:.4}  hits {:.4}  ({} pools, {} failed)",
            report.overall.recall,
            report.overall.ndcg,
            report.overall.hits,
            report.overall.count,
            report.failed,
        );
    }
    Ok(())
}
