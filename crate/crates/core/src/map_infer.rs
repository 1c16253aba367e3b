//! Greedy MAP inference over the selection kernel.
//!
//! Exact MAP for a determinantal model is NP-hard, so selection uses the
//! standard fast greedy scheme: maintain, for every unselected item, the
//! conditional variance `d2[i]` of item i given the current picks (its
//! marginal determinant gain) together with the growing row `c[i]` of the
//! incremental Cholesky factor of the selected principal submatrix. Picking
//! the best item and refreshing every candidate costs O(N) dot products of
//! length at most k, so a full selection is O(k^2 N) instead of the naive
//! O(k^3 N) of re-factorizing per step.
//!
//! Two independent cross-checks live alongside: [`exact_map`] enumerates
//! subsets outright, and [`conditional_gain`] recomputes a step gain as a
//! Schur-complement ratio of two determinants.

use thiserror::Error;

use crate::combi;
use crate::kernel::{det_of_indices, KernelError, KernelMatrix, SubsetIndex};

/// Stopping threshold on conditional variance; selections whose remaining
/// gain falls to this level carry no usable volume.
pub const DEFAULT_EPSILON: f64 = 1e-10;

/// Largest subset count [`exact_map`] will enumerate.
pub const EXACT_MAP_LIMIT: u64 = 200_000;

/// Determinants at or below this are treated as singular conditioning sets.
pub const SINGULAR_GUARD: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("requested k = {k} exceeds pool size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("C({n},{k}) exceeds the enumeration limit {limit}")]
    TooLarge { n: usize, k: usize, limit: u64 },
    #[error("conditioning subset is numerically singular: det = {det:.3e}")]
    SingularConditioning { det: f64 },
    #[error("index {index} already belongs to the conditioning subset")]
    IndexInSubset { index: usize },
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

pub type Result<T> = std::result::Result<T, MapError>;

/// Greedy selection parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyConfig {
    /// Target subset size, >= 1.
    pub k: usize,
    /// Degeneracy threshold on the conditional variance, > 0.
    pub epsilon: f64,
}

impl GreedyConfig {
    #[must_use]
    pub fn new(k: usize) -> Self {
        Self {
            k,
            epsilon: DEFAULT_EPSILON,
        }
    }

    #[must_use]
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k == 0 {
            return Err(MapError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(MapError::InvalidConfig(format!(
                "epsilon must be a positive finite number, got {}",
                self.epsilon
            )));
        }
        if self.k > n {
            return Err(MapError::KTooLarge { k: self.k, n });
        }
        Ok(())
    }
}

/// Outcome of a greedy selection. `order` is the pick sequence, `step_gain`
/// the conditional-variance gain of each accepted pick, and `logdet_final`
/// the telescoped sum of `ln(step_gain)`, i.e. `ln det` of the selected
/// principal submatrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub order: Vec<usize>,
    pub step_gain: Vec<f64>,
    pub logdet_final: f64,
    pub stopped_early: bool,
}

impl SelectionResult {
    pub fn selected(&self) -> SubsetIndex {
        SubsetIndex::new(self.order.clone()).expect("greedy never repeats an index")
    }
}

/// Greedy MAP selection of up to `cfg.k` items.
///
/// Each step picks the unselected item maximizing `log(d2[i] + epsilon)`
/// (equivalently `d2[i]`, the log being monotone; ties break to the lowest
/// index), then updates every remaining candidate:
///
/// ```text
/// e_i = (K[j][i] - <c_j, c_i>) / d_j
/// c_i gains the entry e_i
/// d2[i] = max(d2[i] - e_i^2, 0)
/// ```
///
/// Selection stops early, with `stopped_early` set, once the best remaining
/// conditional variance is at or below `cfg.epsilon`; accepted gains are
/// therefore always strictly above it. A degenerate kernel is not an error:
/// the result is simply shorter than `k`.
///
/// The factor rows live in one pre-allocated N x k buffer; no per-step
/// allocation happens.
pub fn greedy_map(kernel: &KernelMatrix, cfg: &GreedyConfig) -> Result<SelectionResult> {
    let n = kernel.n();
    cfg.validate(n)?;
    let k = cfg.k;
    let g = kernel.as_array();

    let mut gains: Vec<f64> = (0..n).map(|i| g[[i, i]]).collect();
    let mut selected = vec![false; n];
    let mut factor = vec![0.0f64; n * k];
    let mut cj = vec![0.0f64; k];
    let mut order = Vec::with_capacity(k);
    let mut step_gain = Vec::with_capacity(k);
    let mut logdet_final = 0.0;
    let mut stopped_early = false;

    for step in 0..k {
        let mut best = f64::NEG_INFINITY;
        let mut best_i = usize::MAX;
        for i in 0..n {
            if !selected[i] && gains[i] > best {
                best = gains[i];
                best_i = i;
            }
        }
        if best_i == usize::MAX || best <= cfg.epsilon {
            stopped_early = true;
            break;
        }
        let j = best_i;
        selected[j] = true;
        order.push(j);
        step_gain.push(best);
        logdet_final += best.ln();
        if order.len() == k {
            break;
        }
        let dj = best.sqrt();
        cj[..step].copy_from_slice(&factor[j * k..j * k + step]);
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let ci = &factor[i * k..i * k + step];
            let mut dot = 0.0;
            for t in 0..step {
                dot += cj[t] * ci[t];
            }
            let e = (g[[j, i]] - dot) / dj;
            factor[i * k + step] = e;
            gains[i] = (gains[i] - e * e).max(0.0);
        }
    }

    Ok(SelectionResult {
        order,
        step_gain,
        logdet_final,
        stopped_early,
    })
}

/// Exhaustive MAP: the size-k subset with the largest determinant, ties
/// broken by lexicographically smallest index list. Rejects instances with
/// more than [`EXACT_MAP_LIMIT`] candidate subsets.
pub fn exact_map(kernel: &KernelMatrix, k: usize) -> Result<SubsetIndex> {
    let n = kernel.n();
    if k == 0 {
        return Err(MapError::InvalidConfig("k must be at least 1".into()));
    }
    if k > n {
        return Err(MapError::KTooLarge { k, n });
    }
    let count = combi::binomial_capped(n, k, EXACT_MAP_LIMIT);
    if count > EXACT_MAP_LIMIT {
        return Err(MapError::TooLarge {
            n,
            k,
            limit: EXACT_MAP_LIMIT,
        });
    }
    let mut best_det = f64::NEG_INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut failure: Option<KernelError> = None;
    combi::for_each_combination(n, k, |idx| {
        if failure.is_some() {
            return;
        }
        match det_of_indices(kernel, idx) {
            // Strict > keeps the first (lexicographically smallest) maximizer.
            Ok(det) if det > best_det => {
                best_det = det;
                best = idx.to_vec();
            }
            Ok(_) => {}
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(SubsetIndex::from_sorted_unchecked(best))
}

/// Marginal determinant gain of adding `i` to `s`, computed directly as the
/// Schur complement `det(K_{S + i}) / det(K_S)`. Algebraically independent
/// of the incremental updates in [`greedy_map`], which is the point: it is
/// the cross-check for them.
pub fn conditional_gain(kernel: &KernelMatrix, s: &SubsetIndex, i: usize) -> Result<f64> {
    let n = kernel.n();
    if i >= n {
        return Err(KernelError::IndexOutOfBounds { index: i, n }.into());
    }
    if s.contains(i) {
        return Err(MapError::IndexInSubset { index: i });
    }
    if s.is_empty() {
        return Ok(kernel.get(i, i));
    }
    let det_s = det_of_indices(kernel, s.as_slice())?;
    if det_s <= SINGULAR_GUARD {
        return Err(MapError::SingularConditioning { det: det_s });
    }
    let union = s.with_inserted(i)?;
    let det_u = det_of_indices(kernel, union.as_slice())?;
    Ok(det_u / det_s)
}

// ───────────────────────── tests ─────────────────────────
