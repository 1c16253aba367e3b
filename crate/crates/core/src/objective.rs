//! Training objectives for the adapter.
//!
//! Both objectives act on the kernel of unit-normalized *adapted*
//! embeddings; quality fusion stays out of training so the adapter learns
//! geometry, not score calibration.
//!
//! The primary objective is a set-level margin: the gold subset `Y` should
//! out-span every same-size negative subset `Y'`. The raw hinge
//! `max(0, max_Y' det(L_Y') - det(L_Y))` is non-smooth, so training uses
//! the surrogate
//!
//! ```text
//! loss = softplus( LSE_gamma( det(L_Y') - det(L_Y) over negatives ) )
//! LSE_gamma(x) = (1/gamma) * ln( sum exp(gamma * x_i) )
//! ```
//!
//! which upper-bounds the hinge, is convex in the determinant values, and
//! concentrates gradient weight on the hardest negatives as `gamma` grows.
//! A likelihood baseline (`-ln det(L_Y) + ln det(L + I)`) is kept for
//! comparison. Determinant gradients flow through the adjugate, which stays
//! valid for singular submatrices, then through the Gram construction and
//! row normalization into the adapter's backward pass.

use std::collections::HashSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::adapter::{
    adapter_backward, adapter_forward, AdapterError, AdapterGradients, AdapterParams, ForwardCache,
};
use crate::combi;
use crate::kernel::{
    build_kernel, det_submatrix, inverse_plus_identity, log_det_plus_identity, EmbeddingMatrix,
    KernelError, KernelMatrix, SubsetIndex,
};

/// Default cap on enumerated or sampled negative subsets per example.
pub const DEFAULT_MAX_NEG_SUBSETS: usize = 5000;

/// Positive-subset determinants at or below this underflow the likelihood.
pub const DEGENERATE_DET_FLOOR: f64 = 1e-300;

/// Adapted rows with a norm below this cannot be normalized.
pub const COLLAPSE_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("need {needed} negatives to form subsets, only {available} available")]
    TooFewNegatives { available: usize, needed: usize },
    #[error("positive subset determinant {det:.3e} underflows the likelihood")]
    DegeneratePositive { det: f64 },
    #[error("adapted embedding row {row} collapsed to norm {norm:.3e}")]
    DegenerateEmbedding { row: usize, norm: f64 },
    #[error("invalid training example: {0}")]
    InvalidExample(String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("every example in the batch failed during epoch {epoch}")]
    AllExamplesFailed { epoch: usize },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

// ───────────────────────── types ─────────────────────────

/// One supervised query: a candidate pool with disjoint positive (gold) and
/// negative index sets.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub query_id: String,
    pub pool: EmbeddingMatrix,
    pub positives: SubsetIndex,
    pub negatives: SubsetIndex,
}

impl TrainingExample {
    pub fn new(
        query_id: String,
        pool: EmbeddingMatrix,
        positives: SubsetIndex,
        negatives: SubsetIndex,
    ) -> Result<Self> {
        let n = pool.rows();
        if positives.is_empty() {
            return Err(ObjectiveError::InvalidExample(format!(
                "{query_id}: positives must be non-empty"
            )));
        }
        for &i in positives.as_slice().iter().chain(negatives.as_slice()) {
            if i >= n {
                return Err(ObjectiveError::InvalidExample(format!(
                    "{query_id}: index {i} out of bounds for pool of {n}"
                )));
            }
        }
        if positives.as_slice().iter().any(|i| negatives.contains(*i)) {
            return Err(ObjectiveError::InvalidExample(format!(
                "{query_id}: positives and negatives overlap"
            )));
        }
        Ok(Self {
            query_id,
            pool,
            positives,
            negatives,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Smooth set-margin objective over negative subsets.
    Dml,
    /// Subset log-likelihood baseline.
    Nll,
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    /// LSE sharpness, > 0. 1.0 recovers `ln(1 + sum exp(delta))`.
    pub gamma: f64,
    /// Cap on negative subsets per example (enumerate if within, else sample).
    pub max_neg_subsets: usize,
    /// Seed for negative-subset sampling.
    pub seed: u64,
    pub loss_kind: LossKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            max_neg_subsets: DEFAULT_MAX_NEG_SUBSETS,
            seed: 0,
            loss_kind: LossKind::Dml,
        }
    }
}

impl LossConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(ObjectiveError::InvalidConfig(format!(
                "gamma must be positive and finite, got {}",
                self.gamma
            )));
        }
        if self.max_neg_subsets == 0 {
            return Err(ObjectiveError::InvalidConfig(
                "max_neg_subsets must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Adam state. Moments share the parameter shapes and start at zero.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m1: AdapterGradients,
    m2: AdapterGradients,
}

impl OptimState {
    pub fn new(d: usize, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m1: AdapterGradients::zeros(d),
            m2: AdapterGradients::zeros(d),
        }
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub skipped: usize,
}

// ───────────────────────── scalar pieces ─────────────────────────

/// Numerically stable softplus: `x` when `x > 30`, `ln(1 + e^x)` otherwise.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(1/gamma) * ln sum_i exp(gamma * x_i)`, max-shifted for stability.
/// Requires a non-empty slice and `gamma > 0`.
pub fn log_sum_exp(values: &[f64], gamma: f64) -> f64 {
    assert!(!values.is_empty(), "log_sum_exp of an empty slice");
    assert!(gamma > 0.0, "gamma must be positive");
    let m = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let sum: f64 = values.iter().map(|&v| (gamma * (v - m)).exp()).sum();
    m + sum.ln() / gamma
}

/// Loss and gradient weights of the smooth margin given determinant values.
/// `weights[i]` is `d loss / d neg_dets[i]`; `d loss / d pos_det` is
/// `-weights.sum()`. At `gamma = 1` the weights reduce to the closed form
/// `exp(delta_i) / (1 + sum_j exp(delta_j))`.
#[derive(Debug, Clone)]
pub struct DmlEval {
    pub loss: f64,
    pub weights: Vec<f64>,
}

pub fn dml_eval_from_dets(neg_dets: &[f64], pos_det: f64, gamma: f64) -> DmlEval {
    let deltas: Vec<f64> = neg_dets.iter().map(|&s| s - pos_det).collect();
    let lse = log_sum_exp(&deltas, gamma);
    let loss = softplus(lse);
    let sig = sigmoid(lse);
    let m = deltas.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut exps: Vec<f64> = deltas.iter().map(|&d| (gamma * (d - m)).exp()).collect();
    let total: f64 = exps.iter().sum();
    for e in &mut exps {
        *e = sig * (*e / total);
    }
    DmlEval {
        loss,
        weights: exps,
    }
}

/// Raw hinge margin given determinant values.
pub fn hinge_from_dets(neg_dets: &[f64], pos_det: f64) -> f64 {
    let best = neg_dets.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    (best - pos_det).max(0.0)
}

// ───────────────────────── subset construction ─────────────────────────

/// All (or up to `cfg.max_neg_subsets`) size-k subsets of the negative pool.
///
/// When `C(|negatives|, k)` fits under the cap the full lexicographic
/// enumeration is returned; otherwise the list is `max_neg_subsets` distinct
/// subsets sampled uniformly with a seeded generator, so the same config
/// always produces the same list.
pub fn negative_subsets(
    negatives: &SubsetIndex,
    k: usize,
    cfg: &LossConfig,
) -> Result<Vec<SubsetIndex>> {
    cfg.validate()?;
    if k == 0 {
        return Err(ObjectiveError::InvalidConfig(
            "subset size k must be at least 1".into(),
        ));
    }
    let m = negatives.len();
    if m < k {
        return Err(ObjectiveError::TooFewNegatives {
            available: m,
            needed: k,
        });
    }
    let cap = cfg.max_neg_subsets as u64;
    let count = combi::binomial_capped(m, k, cap);
    let items = negatives.as_slice();
    if count <= cap {
        let mut out = Vec::with_capacity(count as usize);
        combi::for_each_combination(m, k, |pos| {
            // positions are lexicographic over a sorted pool, so the mapped
            // index lists are lexicographic too
            out.push(SubsetIndex::from_sorted_unchecked(
                pos.iter().map(|&p| items[p]).collect(),
            ));
        });
        return Ok(out);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(cfg.max_neg_subsets);
    let mut out = Vec::with_capacity(cfg.max_neg_subsets);
    let mut scratch: Vec<usize> = Vec::with_capacity(m);
    while out.len() < cfg.max_neg_subsets {
        scratch.clear();
        scratch.extend(0..m);
        // partial Fisher-Yates: first k entries become the draw
        for i in 0..k {
            let j = rng.gen_range(i..m);
            scratch.swap(i, j);
        }
        let mut pick: Vec<usize> = scratch[..k].iter().map(|&p| items[p]).collect();
        pick.sort_unstable();
        if seen.insert(pick.clone()) {
            out.push(SubsetIndex::from_sorted_unchecked(pick));
        }
    }
    Ok(out)
}

// ───────────────────────── kernel-level losses ─────────────────────────

fn check_subset_sizes(y: &SubsetIndex, negs: &[SubsetIndex]) -> Result<()> {
    if negs.is_empty() {
        return Err(ObjectiveError::InvalidExample(
            "at least one negative subset is required".into(),
        ));
    }
    if let Some(bad) = negs.iter().find(|s| s.len() != y.len()) {
        return Err(ObjectiveError::InvalidExample(format!(
            "negative subset size {} does not match positive size {}",
            bad.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Raw hinge margin `max(0, max_i det(L_Y'_i) - det(L_Y))`.
pub fn dml_raw(l: &KernelMatrix, y: &SubsetIndex, negs: &[SubsetIndex]) -> Result<f64> {
    check_subset_sizes(y, negs)?;
    let pos = det_submatrix(l, y)?;
    let mut dets = Vec::with_capacity(negs.len());
    for s in negs {
        dets.push(det_submatrix(l, s)?);
    }
    Ok(hinge_from_dets(&dets, pos))
}

/// Smooth margin surrogate `softplus(LSE_gamma(det(L_Y') - det(L_Y)))`.
/// Always strictly positive and an upper bound on [`dml_raw`].
pub fn dml_smooth(
    l: &KernelMatrix,
    y: &SubsetIndex,
    negs: &[SubsetIndex],
    gamma: f64,
) -> Result<f64> {
    check_subset_sizes(y, negs)?;
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(ObjectiveError::InvalidConfig(format!(
            "gamma must be positive and finite, got {gamma}"
        )));
    }
    let pos = det_submatrix(l, y)?;
    let mut dets = Vec::with_capacity(negs.len());
    for s in negs {
        dets.push(det_submatrix(l, s)?);
    }
    Ok(dml_eval_from_dets(&dets, pos, gamma).loss)
}

/// Negative log-likelihood of the gold subset:
/// `-ln det(L_Y) + ln det(L + I)`.
pub fn nll_loss(l: &KernelMatrix, y: &SubsetIndex) -> Result<f64> {
    let det_y = det_submatrix(l, y)?;
    if det_y <= DEGENERATE_DET_FLOOR {
        return Err(ObjectiveError::DegeneratePositive { det: det_y });
    }
    Ok(log_det_plus_identity(l)? - det_y.ln())
}

/// Gradient of `det` with respect to every entry of a square symmetric
/// matrix: the transposed adjugate, assembled from cofactors so it remains
/// exact for singular inputs.
pub fn det_gradient(k_s: &Array2<f64>) -> Array2<f64> {
    let n = k_s.nrows();
    assert_eq!(n, k_s.ncols(), "det_gradient needs a square matrix");
    let flat = k_s.as_slice().expect("standard layout");
    let c = crate::linalg::cofactor_matrix(flat, n);
    Array2::from_shape_vec((n, n), c).expect("square buffer")
}

// ───────────────────────── loss + gradient chain ─────────────────────────

struct AdaptedPool {
    caches: Vec<ForwardCache>,
    norms: Vec<f64>,
    unit: Array2<f64>,
    kernel: KernelMatrix,
}

/// Forward every pool row through the adapter, normalize, build the kernel.
fn adapt_pool(p: &AdapterParams, pool: &EmbeddingMatrix) -> Result<AdaptedPool> {
    let n = pool.rows();
    let d = pool.dim();
    if d != p.d {
        return Err(AdapterError::DimensionMismatch {
            expected: p.d,
            got: d,
        }
        .into());
    }
    let mut caches = Vec::with_capacity(n);
    let mut norms = Vec::with_capacity(n);
    let mut unit = Array2::zeros((n, d));
    for i in 0..n {
        let row = pool.row(i);
        let (out, cache) = adapter_forward(p, row.as_slice().expect("standard layout"))?;
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm >= COLLAPSE_NORM_FLOOR) {
            return Err(ObjectiveError::DegenerateEmbedding { row: i, norm });
        }
        for (j, &v) in out.iter().enumerate() {
            unit[[i, j]] = v / norm;
        }
        caches.push(cache);
        norms.push(norm);
    }
    let kernel = build_kernel(&EmbeddingMatrix::new(unit.clone())?)?;
    Ok(AdaptedPool {
        caches,
        norms,
        unit,
        kernel,
    })
}

/// Scatter `weight * det_gradient(L_S)` into the pool-sized gradient `g`.
fn scatter_det_gradient(
    g: &mut Array2<f64>,
    l: &KernelMatrix,
    s: &SubsetIndex,
    weight: f64,
) -> Result<()> {
    let idx = s.as_slice();
    let k = idx.len();
    let sub = l.gather(idx);
    let adj_t = crate::linalg::cofactor_matrix(&sub, k);
    for (a, &ia) in idx.iter().enumerate() {
        for (b, &ib) in idx.iter().enumerate() {
            g[[ia, ib]] += weight * adj_t[a * k + b];
        }
    }
    Ok(())
}

/// Push a kernel-space gradient through the Gram construction, the row
/// normalization, and the adapter backward pass. `g` is d loss / d L.
fn backprop_to_params(
    p: &AdapterParams,
    adapted: &AdaptedPool,
    g: &Array2<f64>,
) -> Result<AdapterGradients> {
    let n = adapted.norms.len();
    // L = V V^T with unit rows v, so d loss / d V = (G + G^T) V.
    let sym = g + &g.t();
    let d_unit = sym.dot(&adapted.unit);
    let mut grads = AdapterGradients::zeros(p.d);
    for i in 0..n {
        let v = adapted.unit.row(i);
        let dv = d_unit.row(i);
        // v = u / |u| gives d loss / d u = (dv - (v . dv) v) / |u|.
        let proj = v.dot(&dv);
        let upstream: Vec<f64> = v
            .iter()
            .zip(dv.iter())
            .map(|(&vi, &di)| (di - proj * vi) / adapted.norms[i])
            .collect();
        let (gi, _) = adapter_backward(p, &adapted.caches[i], &upstream)?;
        grads.add_assign(&gi);
    }
    Ok(grads)
}

/// Loss and parameter gradients for one example under `cfg.loss_kind`.
pub fn loss_and_grads(
    p: &AdapterParams,
    ex: &TrainingExample,
    cfg: &LossConfig,
) -> Result<(f64, AdapterGradients)> {
    cfg.validate()?;
    match cfg.loss_kind {
        LossKind::Dml => {
            let negs = negative_subsets(&ex.negatives, ex.positives.len(), cfg)?;
            loss_and_grads_with_negs(p, ex, &negs, cfg)
        }
        LossKind::Nll => loss_and_grads_with_negs(p, ex, &[], cfg),
    }
}

/// Inner loss/gradient path with the negative subsets precomputed, so the
/// training loop can enumerate them once per example instead of per epoch.
/// `negs` is ignored for the likelihood objective.
pub(crate) fn loss_and_grads_with_negs(
    p: &AdapterParams,
    ex: &TrainingExample,
    negs: &[SubsetIndex],
    cfg: &LossConfig,
) -> Result<(f64, AdapterGradients)> {
    let adapted = adapt_pool(p, &ex.pool)?;
    let l = &adapted.kernel;
    let n = l.n();
    let mut g = Array2::zeros((n, n));
    let loss = match cfg.loss_kind {
        LossKind::Dml => {
            check_subset_sizes(&ex.positives, negs)?;
            let pos_det = det_submatrix(l, &ex.positives)?;
            let mut neg_dets = Vec::with_capacity(negs.len());
            for s in negs {
                neg_dets.push(det_submatrix(l, s)?);
            }
            let eval = dml_eval_from_dets(&neg_dets, pos_det, cfg.gamma);
            let total_weight: f64 = eval.weights.iter().sum();
            scatter_det_gradient(&mut g, l, &ex.positives, -total_weight)?;
            for (s, &w) in negs.iter().zip(&eval.weights) {
                scatter_det_gradient(&mut g, l, s, w)?;
            }
            eval.loss
        }
        LossKind::Nll => {
            let pos_det = det_submatrix(l, &ex.positives)?;
            if pos_det <= DEGENERATE_DET_FLOOR {
                return Err(ObjectiveError::DegeneratePositive { det: pos_det });
            }
            let loss = log_det_plus_identity(l)? - pos_det.ln();
            scatter_det_gradient(&mut g, l, &ex.positives, -1.0 / pos_det)?;
            g += &inverse_plus_identity(l)?;
            loss
        }
    };
    let grads = backprop_to_params(p, &adapted, &g)?;
    Ok((loss, grads))
}

// ───────────────────────── optimization ─────────────────────────

/// One bias-corrected Adam update. Pure: consumes and returns the
/// parameters and state.
pub fn adam_step(
    mut p: AdapterParams,
    g: &AdapterGradients,
    mut st: OptimState,
) -> (AdapterParams, OptimState) {
    st.step += 1;
    let t = st.step as f64;
    let bc1 = 1.0 - st.beta1.powf(t);
    let bc2 = 1.0 - st.beta2.powf(t);
    let (lr, b1, b2, eps) = (st.lr, st.beta1, st.beta2, st.eps);
    {
        let mut m1 = st.m1.blocks_mut();
        let mut m2 = st.m2.blocks_mut();
        let grads = g.blocks();
        let mut params = p.blocks_mut();
        for block in 0..params.len() {
            let pb = &mut params[block];
            let gb = grads[block];
            let m1b = &mut m1[block];
            let m2b = &mut m2[block];
            for i in 0..pb.len() {
                let gi = gb[i];
                m1b[i] = b1 * m1b[i] + (1.0 - b1) * gi;
                m2b[i] = b2 * m2b[i] + (1.0 - b2) * gi * gi;
                let mhat = m1b[i] / bc1;
                let vhat = m2b[i] / bc2;
                pb[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
    (p, st)
}

/// Mini-batch Adam over the dataset.
///
/// Per epoch: a seeded shuffle, then batches whose mean gradient feeds one
/// Adam step. Examples whose loss fails are skipped and counted; a batch
/// with no surviving example aborts. Negative subsets are deterministic per
/// example, so they are enumerated once up front. Per-example gradients are
/// computed in parallel but reduced in index order, keeping runs bit-stable
/// regardless of thread count.
pub fn train(
    dataset: &[TrainingExample],
    p0: AdapterParams,
    cfg: &LossConfig,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<(AdapterParams, Vec<EpochStats>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(ObjectiveError::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(ObjectiveError::InvalidConfig(
            "batch size must be at least 1".into(),
        ));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(ObjectiveError::InvalidConfig(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    // Precompute negative subsets (empty placeholder for the likelihood).
    let negs_per_example: Vec<Vec<SubsetIndex>> = match cfg.loss_kind {
        LossKind::Dml => dataset
            .iter()
            .map(|ex| negative_subsets(&ex.negatives, ex.positives.len(), cfg))
            .collect::<Result<_>>()?,
        LossKind::Nll => vec![Vec::new(); dataset.len()],
    };
    let mut params = p0;
    let mut state = OptimState::new(params.d, lr);
    let mut history = Vec::with_capacity(epochs);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        let mut skipped = 0usize;
        for chunk in order.chunks(batch_size) {
            let results: Vec<Result<(f64, AdapterGradients)>> = chunk
                .par_iter()
                .map(|&i| loss_and_grads_with_negs(&params, &dataset[i], &negs_per_example[i], cfg))
                .collect();
            let mut acc = AdapterGradients::zeros(params.d);
            let mut survived = 0usize;
            for r in results {
                match r {
                    Ok((loss, grads)) => {
                        loss_sum += loss;
                        loss_count += 1;
                        survived += 1;
                        acc.add_assign(&grads);
                    }
                    Err(_) => skipped += 1,
                }
            }
            if survived == 0 {
                return Err(ObjectiveError::AllExamplesFailed { epoch });
            }
            acc.scale(1.0 / survived as f64);
            let (next, next_state) = adam_step(params, &acc, state);
            params = next;
            state = next_state;
        }
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / loss_count.max(1) as f64,
            skipped,
        });
    }
    Ok((params, history))
}

// ───────────────────────── tests ─────────────────────────
