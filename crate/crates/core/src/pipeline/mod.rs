//! End-to-end selection pipeline: candidate pools in, ranked evidence
//! subsets and evaluation reports out.
//!
//! The stages compose exactly one way — optional per-row adapter, row
//! normalization, Gram kernel, optional quality fusion, greedy selection —
//! and this module owns that order plus the bookkeeping around it:
//! truncating pools to the configured size, timing the kernel-build and
//! selection phases separately, scoring rankings against gold labels, and
//! the determinant margin diagnostics used to compare raw and adapted
//! embedding spaces.

pub mod metrics;
pub mod synth;

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adapter::{adapter_forward, AdapterError, AdapterParams};
use crate::kernel::{
    build_kernel, det_submatrix, fuse_quality, normalize_rows, quality_from_scores,
    EmbeddingMatrix, KernelError, SubsetIndex, DEFAULT_SCORE_FLOOR,
};
use crate::map_infer::{greedy_map, GreedyConfig, MapError, SelectionResult, DEFAULT_EPSILON};
use crate::objective::{negative_subsets, LossConfig, ObjectiveError};

pub use metrics::{hits_at_k, ndcg_at_k, recall_at_k, MetricsError};
pub use synth::{stratified_split, synth_dataset, SynthConfig, DEFAULT_NOISE};

/// Default candidate pool size: pools are truncated to their top entries.
pub const DEFAULT_POOL_SIZE: usize = 20;

/// Default selection size.
pub const DEFAULT_SELECT_K: usize = 10;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("pool {query_id}: {reason}")]
    InvalidPool { query_id: String, reason: String },
    #[error("pool {query_id}: quality fusion requested but pool has no scores")]
    MissingScores { query_id: String },
    #[error("adapter mode requested but no adapter parameters were supplied")]
    MissingParams,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

// ───────────────────────── domain types ─────────────────────────

/// One query's retrieved candidates, in retriever rank order, with the
/// ground-truth evidence subset.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    pub query_id: String,
    pub ids: Vec<String>,
    pub embeddings: EmbeddingMatrix,
    pub scores: Option<Vec<f64>>,
    pub gold: SubsetIndex,
    pub hop_count: Option<u32>,
}

impl CandidatePool {
    pub fn new(
        query_id: String,
        ids: Vec<String>,
        embeddings: EmbeddingMatrix,
        scores: Option<Vec<f64>>,
        gold: SubsetIndex,
        hop_count: Option<u32>,
    ) -> Result<Self> {
        let n = embeddings.rows();
        let fail = |reason: String| PipelineError::InvalidPool {
            query_id: query_id.clone(),
            reason,
        };
        if ids.len() != n {
            return Err(fail(format!("{} ids for {} embedding rows", ids.len(), n)));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(fail(format!("duplicate candidate id {id:?}")));
            }
        }
        if let Some(s) = &scores {
            if s.len() != n {
                return Err(fail(format!("{} scores for {} candidates", s.len(), n)));
            }
            if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                return Err(fail(format!("score {} at index {i} is not finite", s[i])));
            }
        }
        if let Some(&max) = gold.as_slice().last() {
            if max >= n {
                return Err(fail(format!("gold index {max} out of bounds for {n}")));
            }
        }
        Ok(Self {
            query_id,
            ids,
            embeddings,
            scores,
            gold,
            hop_count,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Pools are truncated to this many leading candidates.
    pub pool_size: usize,
    /// Items to select per query. Must not exceed the effective pool size.
    pub select_k: usize,
    pub use_adapter: bool,
    pub use_quality: bool,
    /// Greedy stopping threshold on the best remaining conditional variance.
    pub epsilon: f64,
    /// Margin-loss sharpness; carried for training-side consumers.
    pub gamma: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pool_size: DEFAULT_POOL_SIZE,
            select_k: DEFAULT_SELECT_K,
            use_adapter: false,
            use_quality: true,
            epsilon: DEFAULT_EPSILON,
            gamma: 1.0,
        }
    }
}

impl PipelineConfig {
    #[must_use]
    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size;
        self
    }

    #[must_use]
    pub fn with_select_k(mut self, select_k: usize) -> Self {
        self.select_k = select_k;
        self
    }

    #[must_use]
    pub fn with_adapter(mut self, on: bool) -> Self {
        self.use_adapter = on;
        self
    }

    #[must_use]
    pub fn with_quality(mut self, on: bool) -> Self {
        self.use_quality = on;
        self
    }

    #[must_use]
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    #[must_use]
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_size == 0 {
            return Err(PipelineError::InvalidConfig("pool_size must be ≥ 1".into()));
        }
        if self.select_k == 0 {
            return Err(PipelineError::InvalidConfig("select_k must be ≥ 1".into()));
        }
        if self.select_k > self.pool_size {
            return Err(PipelineError::InvalidConfig(format!(
                "select_k {} exceeds pool_size {}",
                self.select_k, self.pool_size
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(PipelineError::InvalidConfig(format!(
                "epsilon must be finite and ≥ 0, got {}",
                self.epsilon
            )));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(PipelineError::InvalidConfig(format!(
                "gamma must be finite and > 0, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// How a ranking is produced for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum SelectionMode {
    /// First k candidates in retriever rank order — no kernel involved.
    #[serde(rename = "topk")]
    TopK,
    /// Greedy determinant selection on raw embeddings.
    #[serde(rename = "dpp-base")]
    DppBase,
    /// Greedy determinant selection on adapter-transformed embeddings.
    #[serde(rename = "dpp-adapter")]
    DppAdapter,
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMode::TopK => "topk",
            SelectionMode::DppBase => "dpp-base",
            SelectionMode::DppAdapter => "dpp-adapter",
        })
    }
}

/// A selection plus the id mapping and phase timings.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub result: SelectionResult,
    pub selected_ids: Vec<String>,
    /// Milliseconds spent building the kernel (adapter forward, row
    /// normalization, Gram product, quality fusion).
    pub kernel_ms: f64,
    /// Milliseconds spent in greedy selection proper.
    pub select_ms: f64,
}

// ───────────────────────── selection ─────────────────────────

/// Optionally adapter-transform the first `n` rows, then unit-normalize.
/// When `use_adapter` is false any supplied params are ignored entirely, so
/// loaded parameters cannot leak into the raw-space path.
fn adapted_unit_rows(
    embeddings: &EmbeddingMatrix,
    n: usize,
    params: Option<&AdapterParams>,
    use_adapter: bool,
) -> Result<EmbeddingMatrix> {
    let d = embeddings.dim();
    let raw = if use_adapter {
        let p = params.ok_or(PipelineError::MissingParams)?;
        let mut out = Array2::zeros((n, d));
        for i in 0..n {
            let row = embeddings.row(i).to_vec();
            let (mapped, _) = adapter_forward(p, &row)?;
            for (j, v) in mapped.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        EmbeddingMatrix::new(out)?
    } else {
        let mut out = Array2::zeros((n, d));
        for i in 0..n {
            out.row_mut(i).assign(&embeddings.row(i));
        }
        EmbeddingMatrix::new(out)?
    };
    Ok(normalize_rows(&raw)?)
}

/// Run the full selection stack on one pool.
///
/// The pool is truncated to `cfg.pool_size` leading candidates (initial
/// retrieval happens upstream; the adapter participates only here, at
/// kernel-construction time). `cfg.select_k` must fit within the effective
/// pool. Kernel-build and greedy-selection times are reported separately.
pub fn select_context(
    pool: &CandidatePool,
    params: Option<&AdapterParams>,
    cfg: &PipelineConfig,
) -> Result<SelectionOutcome> {
    cfg.validate()?;
    let n = pool.len().min(cfg.pool_size);
    if n == 0 {
        return Err(PipelineError::InvalidPool {
            query_id: pool.query_id.clone(),
            reason: "pool has no candidates".into(),
        });
    }
    if cfg.select_k > n {
        return Err(PipelineError::InvalidConfig(format!(
            "select_k {} exceeds pool of {} candidates",
            cfg.select_k, n
        )));
    }

    let build_start = Instant::now();
    let unit = adapted_unit_rows(&pool.embeddings, n, params, cfg.use_adapter)?;
    let mut kernel = build_kernel(&unit)?;
    if cfg.use_quality {
        let scores = pool.scores.as_ref().ok_or_else(|| PipelineError::MissingScores {
            query_id: pool.query_id.clone(),
        })?;
        let (q, _clamped) = quality_from_scores(&scores[..n], DEFAULT_SCORE_FLOOR)?;
        kernel = fuse_quality(&kernel, &q)?;
    }
    let kernel_ms = build_start.elapsed().as_secs_f64() * 1e3;

    let select_start = Instant::now();
    let greedy_cfg = GreedyConfig::new(cfg.select_k).with_epsilon(cfg.epsilon);
    let result = greedy_map(&kernel, &greedy_cfg)?;
    let select_ms = select_start.elapsed().as_secs_f64() * 1e3;

    let selected_ids = result.order.iter().map(|&i| pool.ids[i].clone()).collect();
    Ok(SelectionOutcome {
        result,
        selected_ids,
        kernel_ms,
        select_ms,
    })
}

/// Baseline ranking: the first `select_k` candidates of the truncated pool,
/// i.e. plain retriever order.
pub fn rank_top_k(pool: &CandidatePool, cfg: &PipelineConfig) -> Vec<String> {
    let n = pool.len().min(cfg.pool_size);
    let k = cfg.select_k.min(n);
    pool.ids[..k].to_vec()
}

// ───────────────────────── evaluation ─────────────────────────

/// Mean metrics over one group of queries.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct GroupMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub hits: f64,
    pub count: usize,
}

/// Evaluation summary: overall means, per-hop means, and how many pools
/// failed selection or scoring (failed pools are excluded from every mean).
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub mode: SelectionMode,
    pub k: usize,
    pub quality: bool,
    pub overall: GroupMetrics,
    pub by_hop: BTreeMap<String, GroupMetrics>,
    pub failed: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct MetricAccum {
    recall: f64,
    ndcg: f64,
    hits: f64,
    count: usize,
}

impl MetricAccum {
    fn push(&mut self, r: f64, nd: f64, h: f64) {
        self.recall += r;
        self.ndcg += nd;
        self.hits += h;
        self.count += 1;
    }

    fn mean(&self) -> GroupMetrics {
        let c = self.count.max(1) as f64;
        GroupMetrics {
            recall: self.recall / c,
            ndcg: self.ndcg / c,
            hits: self.hits / c,
            count: self.count,
        }
    }
}

/// Score every pool under one selection mode.
///
/// `mode` overrides `cfg.use_adapter` (the config flag serves single-pool
/// callers; evaluation always states the mode explicitly). Per-pool work
/// runs in parallel with index-ordered aggregation, so results are
/// independent of thread count.
pub fn evaluate(
    pools: &[CandidatePool],
    params: Option<&AdapterParams>,
    cfg: &PipelineConfig,
    mode: SelectionMode,
) -> Result<MetricsReport> {
    cfg.validate()?;
    if mode == SelectionMode::DppAdapter && params.is_none() {
        return Err(PipelineError::MissingParams);
    }
    let eff = cfg
        .clone()
        .with_adapter(matches!(mode, SelectionMode::DppAdapter));

    let per_pool: Vec<Result<(Option<u32>, f64, f64, f64)>> = pools
        .par_iter()
        .map(|pool| {
            let ranked: Vec<String> = match mode {
                SelectionMode::TopK => rank_top_k(pool, &eff),
                _ => select_context(pool, params, &eff)?.selected_ids,
            };
            let n = pool.len().min(eff.pool_size);
            let gold: Vec<String> = pool
                .gold
                .as_slice()
                .iter()
                .filter(|&&g| g < n)
                .map(|&g| pool.ids[g].clone())
                .collect();
            let r = recall_at_k(&ranked, &gold, eff.select_k)?;
            let nd = ndcg_at_k(&ranked, &gold, eff.select_k)?;
            let h = hits_at_k(&ranked, &gold, eff.select_k)?;
            Ok((pool.hop_count, r, nd, h))
        })
        .collect();

    let mut overall = MetricAccum::default();
    let mut by_hop: BTreeMap<String, MetricAccum> = BTreeMap::new();
    let mut failed = 0usize;
    for row in per_pool {
        match row {
            Ok((hop, r, nd, h)) => {
                overall.push(r, nd, h);
                let key = hop.map_or_else(|| "untagged".to_string(), |v| v.to_string());
                by_hop.entry(key).or_default().push(r, nd, h);
            }
            Err(_) => failed += 1,
        }
    }
    Ok(MetricsReport {
        mode,
        k: cfg.select_k,
        quality: cfg.use_quality,
        overall: overall.mean(),
        by_hop: by_hop.iter().map(|(k, v)| (k.clone(), v.mean())).collect(),
        failed,
    })
}

// ───────────────────────── margin analysis ─────────────────────────

/// Determinant comparison between the gold subset and its negative rivals.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarginReport {
    pub det_pos: f64,
    pub det_neg_max: f64,
    pub det_neg_mean: f64,
    pub det_neg_std: f64,
    /// Exactly `det_pos - det_neg_max`.
    pub margin: f64,
    pub n_neg_subsets: usize,
}

/// Compare `det(L_Y)` against size-`k` subsets of the negatives.
///
/// The kernel is built from raw embeddings when `params` is absent and from
/// adapter-transformed embeddings when present — the two spaces the margin
/// diagnostic contrasts. No quality fusion: this measures geometry alone.
/// Negative subsets are enumerated when their count fits within `cap`,
/// otherwise `cap` distinct subsets are sampled with the given seed.
pub fn margin_analysis(
    embeddings: &EmbeddingMatrix,
    positives: &SubsetIndex,
    negatives: &SubsetIndex,
    k: usize,
    params: Option<&AdapterParams>,
    cap: usize,
    seed: u64,
) -> Result<MarginReport> {
    if k != positives.len() {
        return Err(PipelineError::InvalidConfig(format!(
            "subset size k = {} must match the {} gold items",
            k,
            positives.len()
        )));
    }
    let unit = adapted_unit_rows(embeddings, embeddings.rows(), params, params.is_some())?;
    let kernel = build_kernel(&unit)?;
    let det_pos = det_submatrix(&kernel, positives)?;

    let mut loss_cfg = LossConfig::default();
    loss_cfg.max_neg_subsets = cap;
    loss_cfg.seed = seed;
    let rivals = negative_subsets(negatives, k, &loss_cfg)?;
    let mut dets = Vec::with_capacity(rivals.len());
    for s in &rivals {
        dets.push(det_submatrix(&kernel, s)?);
    }
    let n = dets.len() as f64;
    let det_neg_max = dets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let det_neg_mean = dets.iter().sum::<f64>() / n;
    let var = (dets.iter().map(|d| d * d).sum::<f64>() / n - det_neg_mean * det_neg_mean).max(0.0);
    Ok(MarginReport {
        det_pos,
        det_neg_max,
        det_neg_mean,
        det_neg_std: var.sqrt(),
        margin: det_pos - det_neg_max,
        n_neg_subsets: dets.len(),
    })
}

// ───────────────────────── latency profiling ─────────────────────────

/// Median phase timings for one pool size.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LatencyPoint {
    pub n: usize,
    pub kernel_ms: f64,
    pub select_ms: f64,
}

/// Time kernel construction and greedy selection on random unit embeddings
/// of each size, taking the median over `repeats` runs. Embedding
/// generation is excluded from the timings.
pub fn selection_latency_profile(
    sizes: &[usize],
    d: usize,
    k: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<LatencyPoint>> {
    if repeats == 0 {
        return Err(PipelineError::InvalidConfig("repeats must be ≥ 1".into()));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for (si, &n) in sizes.iter().enumerate() {
        if k > n {
            return Err(PipelineError::InvalidConfig(format!(
                "select size {k} exceeds pool size {n}"
            )));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed.wrapping_add(si as u64));
        let mut rows = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let unit = normalize_rows(&EmbeddingMatrix::new(rows)?)?;
        let mut kernel_times = Vec::with_capacity(repeats);
        let mut select_times = Vec::with_capacity(repeats);
        let greedy_cfg = GreedyConfig::new(k);
        for _ in 0..repeats {
            let t0 = Instant::now();
            let kernel = build_kernel(&unit)?;
            kernel_times.push(t0.elapsed().as_secs_f64() * 1e3);
            let t1 = Instant::now();
            let _ = greedy_map(&kernel, &greedy_cfg)?;
            select_times.push(t1.elapsed().as_secs_f64() * 1e3);
        }
        points.push(LatencyPoint {
            n,
            kernel_ms: median(&mut kernel_times),
            select_ms: median(&mut select_times),
        });
    }
    Ok(points)
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

// ───────────────────────── tests ─────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::init_params;
    use ndarray::array;

    fn pool_from_rows(rows: Array2<f64>, gold: Vec<usize>, scores: Option<Vec<f64>>) -> CandidatePool {
        let n = rows.nrows();
        CandidatePool::new(
            "q".into(),
            (0..n).map(|i| format!("c{i}")).collect(),
            EmbeddingMatrix::new(rows).unwrap(),
            scores,
            SubsetIndex::new(gold).unwrap(),
            None,
        )
        .unwrap()
    }

    fn orthogonal_pool(n: usize, gold: Vec<usize>) -> CandidatePool {
        let mut rows = Array2::zeros((n, n));
        for i in 0..n {
            rows[[i, i]] = 1.0;
        }
        pool_from_rows(rows, gold, None)
    }

    #[test]
    fn pool_validation_rejects_malformed_inputs() {
        let rows = array![[1.0, 0.0], [0.0, 1.0]];
        let emb = EmbeddingMatrix::new(rows).unwrap();
        let gold = SubsetIndex::new(vec![0]).unwrap();
        // duplicate ids
        assert!(matches!(
            CandidatePool::new(
                "q".into(),
                vec!["a".into(), "a".into()],
                emb.clone(),
                None,
                gold.clone(),
                None
            ),
            Err(PipelineError::InvalidPool { .. })
        ));
        // score length mismatch
        assert!(matches!(
            CandidatePool::new(
                "q".into(),
                vec!["a".into(), "b".into()],
                emb.clone(),
                Some(vec![1.0]),
                gold.clone(),
                None
            ),
            Err(PipelineError::InvalidPool { .. })
        ));
        // gold out of bounds
        assert!(matches!(
            CandidatePool::new(
                "q".into(),
                vec!["a".into(), "b".into()],
                emb,
                None,
                SubsetIndex::new(vec![5]).unwrap(),
                None
            ),
            Err(PipelineError::InvalidPool { .. })
        ));
    }

    #[test]
    fn orthogonal_pool_selects_lowest_index_items() {
        let pool = orthogonal_pool(6, vec![0]);
        let cfg = PipelineConfig::default()
            .with_pool_size(6)
            .with_select_k(3)
            .with_quality(false);
        let out = select_context(&pool, None, &cfg).unwrap();
        assert_eq!(out.result.order, vec![0, 1, 2]);
        assert_eq!(out.selected_ids, vec!["c0", "c1", "c2"]);
        assert!(!out.result.stopped_early);
        assert!(out.kernel_ms >= 0.0 && out.select_ms >= 0.0);
    }

    #[test]
    fn uniform_scores_select_the_same_set_as_no_quality() {
        let mut rng = ChaCha20Rng::seed_from_u64(40);
        let mut rows = Array2::zeros((10, 6));
        for i in 0..10 {
            for j in 0..6 {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let pool = pool_from_rows(rows, vec![0], Some(vec![0.7; 10]));
        let base = PipelineConfig::default().with_pool_size(10).with_select_k(4);
        let with_q = select_context(&pool, None, &base.clone().with_quality(true)).unwrap();
        let without_q = select_context(&pool, None, &base.with_quality(false)).unwrap();
        assert_eq!(with_q.result.order, without_q.result.order);
    }

    #[test]
    fn duplicate_heavy_pool_never_selects_two_identical_rows() {
        // rows 0 and 1 identical; k = 2 must pick the distinct pair {0, 2}
        let rows = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let pool = pool_from_rows(rows, vec![0], None);
        let cfg = PipelineConfig::default()
            .with_pool_size(3)
            .with_select_k(2)
            .with_quality(false);
        let out = select_context(&pool, None, &cfg).unwrap();
        assert_eq!(out.result.selected().as_slice(), &[0, 2]);
    }

    #[test]
    fn quality_fusion_requires_scores() {
        let pool = orthogonal_pool(4, vec![0]);
        let cfg = PipelineConfig::default()
            .with_pool_size(4)
            .with_select_k(2)
            .with_quality(true);
        assert!(matches!(
            select_context(&pool, None, &cfg),
            Err(PipelineError::MissingScores { .. })
        ));
    }

    #[test]
    fn adapter_mode_requires_params() {
        let pool = orthogonal_pool(4, vec![0]);
        let cfg = PipelineConfig::default()
            .with_pool_size(4)
            .with_select_k(2)
            .with_quality(false)
            .with_adapter(true);
        assert!(matches!(
            select_context(&pool, None, &cfg),
            Err(PipelineError::MissingParams)
        ));
    }

    #[test]
    fn off_path_ignores_loaded_params() {
        // same selection with and without params when use_adapter is off
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let mut rows = Array2::zeros((8, 4));
        for i in 0..8 {
            for j in 0..4 {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let pool = pool_from_rows(rows, vec![0], None);
        let params = init_params(4, 123);
        let cfg = PipelineConfig::default()
            .with_pool_size(8)
            .with_select_k(3)
            .with_quality(false);
        let with_params = select_context(&pool, Some(&params), &cfg).unwrap();
        let without = select_context(&pool, None, &cfg).unwrap();
        assert_eq!(with_params.result.order, without.result.order);
        assert_eq!(
            with_params.result.logdet_final.to_bits(),
            without.result.logdet_final.to_bits()
        );
    }

    #[test]
    fn adapter_mode_changes_the_kernel() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut rows = Array2::zeros((8, 4));
        for i in 0..8 {
            for j in 0..4 {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let pool = pool_from_rows(rows, vec![0], None);
        let params = init_params(4, 123);
        let cfg = PipelineConfig::default()
            .with_pool_size(8)
            .with_select_k(3)
            .with_quality(false);
        let raw = select_context(&pool, Some(&params), &cfg).unwrap();
        let adapted =
            select_context(&pool, Some(&params), &cfg.with_adapter(true)).unwrap();
        assert_ne!(
            raw.result.logdet_final.to_bits(),
            adapted.result.logdet_final.to_bits()
        );
    }

    #[test]
    fn select_k_larger_than_pool_is_rejected() {
        let pool = orthogonal_pool(3, vec![0]);
        let cfg = PipelineConfig::default()
            .with_pool_size(8)
            .with_select_k(5)
            .with_quality(false);
        assert!(matches!(
            select_context(&pool, None, &cfg),
            Err(PipelineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn pool_truncation_limits_candidates() {
        let pool = orthogonal_pool(6, vec![0]);
        let cfg = PipelineConfig::default()
            .with_pool_size(4)
            .with_select_k(4)
            .with_quality(false);
        let out = select_context(&pool, None, &cfg).unwrap();
        assert_eq!(out.result.order, vec![0, 1, 2, 3]); // rows 4,5 never seen
    }

    #[test]
    fn rank_top_k_is_retriever_prefix() {
        let pool = orthogonal_pool(5, vec![0]);
        let cfg = PipelineConfig::default().with_pool_size(5).with_select_k(3);
        assert_eq!(rank_top_k(&pool, &cfg), vec!["c0", "c1", "c2"]);
    }

    // ── evaluate ──

    #[test]
    fn evaluate_means_and_grouping() {
        // pool A: gold = {0,1} fully covered → recall 1; hop 2
        // pool B: gold = {3} outside top-2 of an orthogonal pool → recall 0; hop 2
        // pool C: gold = {0} → recall 1; hop 3
        let mut a = orthogonal_pool(4, vec![0, 1]);
        a.hop_count = Some(2);
        let mut b = orthogonal_pool(4, vec![3]);
        b.hop_count = Some(2);
        let mut c = orthogonal_pool(4, vec![0]);
        c.hop_count = Some(3);
        let cfg = PipelineConfig::default()
            .with_pool_size(4)
            .with_select_k(2)
            .with_quality(false);
        let report =
            evaluate(&[a, b, c], None, &cfg, SelectionMode::DppBase).unwrap();
        assert_eq!(report.failed, 0);
        assert_eq!(report.overall.count, 3);
        assert!((report.overall.recall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.by_hop.len(), 2);
        assert_eq!(report.by_hop["2"].count, 2);
        assert!((report.by_hop["2"].recall - 0.5).abs() < 1e-12);
        assert_eq!(report.by_hop["3"].count, 1);
        assert!((report.by_hop["3"].recall - 1.0).abs() < 1e-12);
        // group counts sum to total
        let total: usize = report.by_hop.values().map(|g| g.count).sum();
        assert_eq!(total, report.overall.count);
    }

    #[test]
    fn evaluate_counts_failed_pools_and_excludes_them() {
        let good = orthogonal_pool(4, vec![0]);
        let empty_gold = CandidatePool::new(
            "bad".into(),
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            good.embeddings.clone(),
            None,
            SubsetIndex::new(vec![]).unwrap(),
            None,
        )
        .unwrap();
        let cfg = PipelineConfig::default()
            .with_pool_size(4)
            .with_select_k(2)
            .with_quality(false);
        let report =
            evaluate(&[good, empty_gold], None, &cfg, SelectionMode::DppBase).unwrap();
        assert_eq!(report.failed, 1);
        assert_eq!(report.overall.count, 1);
        assert!((report.overall.recall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_topk_matches_hand_computation() {
        // gold {c0, c2}, top-2 = [c0, c1] → recall 1/2, hits 1
        let pool = orthogonal_pool(4, vec![0, 2]);
        let cfg = PipelineConfig::default()
            .with_pool_size(4)
            .with_select_k(2)
            .with_quality(false);
        let report = evaluate(&[pool], None, &cfg, SelectionMode::TopK).unwrap();
        assert!((report.overall.recall - 0.5).abs() < 1e-12);
        assert!((report.overall.hits - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_adapter_mode_without_params_errors() {
        let pool = orthogonal_pool(4, vec![0]);
        let cfg = PipelineConfig::default().with_pool_size(4).with_select_k(2);
        assert!(matches!(
            evaluate(&[pool], None, &cfg, SelectionMode::DppAdapter),
            Err(PipelineError::MissingParams)
        ));
    }

    // ── margins ──

    #[test]
    fn margin_positive_for_orthogonal_gold_vs_duplicate_negatives() {
        // positives orthogonal (det 1), negatives near-duplicates (det ≈ 0)
        let rows = array![
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0, 1e-6],
            [0.0, 0.0, 1.0, -1e-6],
        ];
        let emb = EmbeddingMatrix::new(rows).unwrap();
        let pos = SubsetIndex::new(vec![0, 1]).unwrap();
        let neg = SubsetIndex::new(vec![2, 3, 4]).unwrap();
        let report = margin_analysis(&emb, &pos, &neg, 2, None, 100, 0).unwrap();
        assert!((report.det_pos - 1.0).abs() < 1e-12);
        assert!(report.det_neg_max < 1e-6);
        assert!(report.margin > 0.9);
        assert_eq!(report.n_neg_subsets, 3); // C(3,2)
        assert!(report.det_neg_max >= report.det_neg_mean - 1e-12);
    }

    #[test]
    fn margin_negative_when_gold_is_correlated_and_rivals_are_not() {
        // gold pair at cosine ~0.6 (det 0.64) vs orthogonal rivals (det ~1)
        let c = 0.6f64;
        let s = (1.0 - c * c).sqrt();
        let rows = array![
            [1.0, 0.0, 0.0, 0.0],
            [c, s, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let emb = EmbeddingMatrix::new(rows).unwrap();
        let pos = SubsetIndex::new(vec![0, 1]).unwrap();
        let neg = SubsetIndex::new(vec![2, 3]).unwrap();
        let report = margin_analysis(&emb, &pos, &neg, 2, None, 100, 0).unwrap();
        assert!((report.det_pos - 0.64).abs() < 1e-12);
        assert!((report.det_neg_max - 1.0).abs() < 1e-12);
        assert!(report.margin < 0.0);
    }

    #[test]
    fn margin_is_bitwise_difference_of_reported_values() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut rows = Array2::zeros((10, 5));
        for i in 0..10 {
            for j in 0..5 {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let emb = EmbeddingMatrix::new(rows).unwrap();
        let pos = SubsetIndex::new(vec![0, 1, 2]).unwrap();
        let neg = SubsetIndex::new(vec![3, 4, 5, 6, 7, 8, 9]).unwrap();
        let r = margin_analysis(&emb, &pos, &neg, 3, None, 20, 7).unwrap();
        assert_eq!(
            r.margin.to_bits(),
            (r.det_pos - r.det_neg_max).to_bits()
        );
        assert!(r.det_neg_max >= r.det_neg_mean - 1e-12);
        assert!(r.det_neg_std >= 0.0);
    }

    #[test]
    fn margin_requires_enough_negatives() {
        let emb = EmbeddingMatrix::new(Array2::eye(4)).unwrap();
        let pos = SubsetIndex::new(vec![0, 1, 2]).unwrap();
        let neg = SubsetIndex::new(vec![3]).unwrap();
        assert!(matches!(
            margin_analysis(&emb, &pos, &neg, 3, None, 100, 0),
            Err(PipelineError::Objective(ObjectiveError::TooFewNegatives { .. }))
        ));
    }

    #[test]
    fn margin_k_must_match_gold_size() {
        let emb = EmbeddingMatrix::new(Array2::eye(4)).unwrap();
        let pos = SubsetIndex::new(vec![0, 1]).unwrap();
        let neg = SubsetIndex::new(vec![2, 3]).unwrap();
        assert!(matches!(
            margin_analysis(&emb, &pos, &neg, 1, None, 100, 0),
            Err(PipelineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn margin_adapter_space_differs_from_raw() {
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let mut rows = Array2::zeros((8, 4));
        for i in 0..8 {
            for j in 0..4 {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let emb = EmbeddingMatrix::new(rows).unwrap();
        let pos = SubsetIndex::new(vec![0, 1]).unwrap();
        let neg = SubsetIndex::new(vec![2, 3, 4, 5]).unwrap();
        let params = init_params(4, 55);
        let raw = margin_analysis(&emb, &pos, &neg, 2, None, 100, 0).unwrap();
        let adapted = margin_analysis(&emb, &pos, &neg, 2, Some(&params), 100, 0).unwrap();
        assert_ne!(raw.det_pos.to_bits(), adapted.det_pos.to_bits());
    }

    // ── latency ──

    #[test]
    fn latency_profile_reports_each_size() {
        let points = selection_latency_profile(&[16, 32], 8, 4, 3, 1).unwrap();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0].n, 16);
        assert_eq!(points[1].n, 32);
        for p in &points {
            assert!(p.kernel_ms >= 0.0 && p.select_ms >= 0.0);
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        assert!(PipelineConfig::default().with_select_k(0).validate().is_err());
        assert!(PipelineConfig::default()
            .with_pool_size(4)
            .with_select_k(5)
            .validate()
            .is_err());
        assert!(PipelineConfig::default().with_epsilon(-1.0).validate().is_err());
        assert!(PipelineConfig::default().with_gamma(0.0).validate().is_err());
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
