//! Kernel construction and subset determinants.
//!
//! The selection kernel is the Gram matrix `L = V V^T` of unit-normalized
//! candidate embeddings, so `L[i][j]` is the cosine similarity between items
//! i and j and `det(L_S)` is the squared volume spanned by the subset `S`.
//! Retrieval scores fold in as a diagonal quality map `q[i] = sqrt(s[i])`,
//! giving the fused kernel `G[i][j] = q[i] * q[j] * L[i][j]`: quality scales
//! each item's axis without touching the angles between items.
//!
//! All arithmetic is `f64`; inputs arriving in lower precision should be
//! widened at the boundary. Subset determinants go through Cholesky with a
//! single jittered retry and an eigenvalue-clip fallback, so tiny negative
//! eigenvalues from round-off read as 0 instead of failing.

use ndarray::{Array2, ArrayView1, ArrayView2};
use thiserror::Error;

use crate::linalg;

/// Determinant assigned to the empty subset. Callers that admit empty
/// subsets (e.g. subset probabilities) use this instead of calling
/// [`det_submatrix`].
pub const EMPTY_SET_DET: f64 = 1.0;

/// Default floor applied to retrieval scores before the square root.
pub const DEFAULT_SCORE_FLOOR: f64 = 1e-6;

/// Tolerance for the unit-diagonal check in [`build_kernel`].
pub const UNIT_DIAG_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("embedding matrix must be non-empty, got {rows} rows x {cols} cols")]
    EmptyMatrix { rows: usize, cols: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has norm {norm:.3e}, too small to normalize")]
    ZeroNormRow { row: usize, norm: f64 },
    #[error("row {row} is not unit-norm: diagonal entry {diag} (tolerance {tol})")]
    NotNormalized { row: usize, diag: f64, tol: f64 },
    #[error("dimension mismatch: kernel has {expected} items, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel matrix must be square, got {rows} x {cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("kernel matrix is not symmetric at ({i},{j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("subset index {index} out of bounds for kernel of size {n}")]
    IndexOutOfBounds { index: usize, n: usize },
    #[error("subset contains duplicate index {index}")]
    DuplicateIndex { index: usize },
    #[error("operation requires a non-empty subset")]
    EmptySubset,
    #[error("score floor must be positive and finite, got {floor}")]
    InvalidFloor { floor: f64 },
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("quality weight at index {index} must be positive and finite, got {value}")]
    InvalidQuality { index: usize, value: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("partition check limited to n <= {limit}, got {n}")]
    TooLarge { n: usize, limit: usize },
}

pub type Result<T> = std::result::Result<T, KernelError>;

// ───────────────────────── types ─────────────────────────

/// Dense row-per-item embedding matrix. Every entry is finite and the
/// matrix is non-empty in both dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows == 0 || cols == 0 {
            return Err(KernelError::EmptyMatrix { rows, cols });
        }
        for ((r, c), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(KernelError::NonFinite { row: r, col: c });
            }
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map(Vec::len).unwrap_or(0);
        if n == 0 || d == 0 {
            return Err(KernelError::EmptyMatrix { rows: n, cols: d });
        }
        let mut data = Array2::zeros((n, d));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(KernelError::DimensionMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                data[[i, j]] = v;
            }
        }
        Self::new(data)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn as_array(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }
}

/// Symmetric kernel matrix. Construction checks squareness, exact-tolerance
/// symmetry, and finiteness; positive semi-definiteness is guaranteed by the
/// Gram construction in [`build_kernel`] and asserted statistically in tests
/// rather than at every construction (an eigendecomposition per kernel would
/// dominate runtime at pool sizes in the thousands).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    data: Array2<f64>,
}

impl KernelMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows != cols {
            return Err(KernelError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(KernelError::EmptyMatrix { rows, cols });
        }
        for ((r, c), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(KernelError::NonFinite { row: r, col: c });
            }
        }
        for i in 0..rows {
            for j in (i + 1)..rows {
                let a = data[[i, j]];
                let b = data[[j, i]];
                if (a - b).abs() > 1e-12 {
                    return Err(KernelError::NotSymmetric { i, j, a, b });
                }
            }
        }
        Ok(Self { data })
    }

    /// Gram construction guarantees exact symmetry; skip re-validation.
    pub(crate) fn from_symmetric_unchecked(data: Array2<f64>) -> Self {
        debug_assert_eq!(data.nrows(), data.ncols());
        Self { data }
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn as_array(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// Row-major dense copy of the principal submatrix indexed by `idx`.
    pub(crate) fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let k = idx.len();
        let mut sub = vec![0.0; k * k];
        for (a, &ia) in idx.iter().enumerate() {
            for (b, &ib) in idx.iter().enumerate() {
                sub[a * k + b] = self.data[[ia, ib]];
            }
        }
        sub
    }
}

/// Per-item positive quality weights (`q[i] = sqrt(score[i])` in the usual
/// construction).
#[derive(Debug, Clone, PartialEq)]
pub struct QualityVector {
    values: Vec<f64>,
}

impl QualityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(KernelError::InvalidQuality { index: i, value: v });
            }
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Strictly increasing list of item indices. Bounds are checked by the
/// operations that pair a subset with a kernel, so one subset can be reused
/// across kernels of the same pool.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetIndex {
    indices: Vec<usize>,
}

impl SubsetIndex {
    /// Accepts indices in any order; sorts and rejects duplicates.
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        for w in indices.windows(2) {
            if w[0] == w[1] {
                return Err(KernelError::DuplicateIndex { index: w[0] });
            }
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
        }
    }

    /// Caller promises `indices` is sorted and duplicate-free.
    pub(crate) fn from_sorted_unchecked(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self { indices }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// New subset with `index` inserted, preserving sortedness.
    pub fn with_inserted(&self, index: usize) -> Result<Self> {
        match self.indices.binary_search(&index) {
            Ok(_) => Err(KernelError::DuplicateIndex { index }),
            Err(pos) => {
                let mut v = self.indices.clone();
                v.insert(pos, index);
                Ok(Self { indices: v })
            }
        }
    }

    fn check_bounds(&self, n: usize) -> Result<()> {
        match self.indices.last() {
            Some(&max) if max >= n => Err(KernelError::IndexOutOfBounds { index: max, n }),
            _ => Ok(()),
        }
    }
}

// ───────────────────────── operations ─────────────────────────

/// Scale every row to unit L2 norm. Rows with norm below `1e-12` are
/// rejected rather than silently zeroed.
pub fn normalize_rows(e: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = e.data.clone();
    for (row, mut r) in data.rows_mut().into_iter().enumerate() {
        let norm = r.dot(&r).sqrt();
        if norm < 1e-12 {
            return Err(KernelError::ZeroNormRow { row, norm });
        }
        r.mapv_inplace(|v| v / norm);
    }
    Ok(EmbeddingMatrix { data })
}

/// Gram kernel `L = E E^T` of unit-normalized embeddings. Rows that are not
/// unit-norm (diagonal off by more than [`UNIT_DIAG_TOL`]) are rejected;
/// run [`normalize_rows`] first. The result is exactly symmetric: the upper
/// triangle is mirrored from the computed lower triangle.
pub fn build_kernel(e: &EmbeddingMatrix) -> Result<KernelMatrix> {
    let mut gram = e.data.dot(&e.data.t());
    let n = gram.nrows();
    for i in 0..n {
        let diag = gram[[i, i]];
        if (diag - 1.0).abs() > UNIT_DIAG_TOL {
            return Err(KernelError::NotNormalized {
                row: i,
                diag,
                tol: UNIT_DIAG_TOL,
            });
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = gram[[i, j]];
            gram[[j, i]] = v;
        }
    }
    Ok(KernelMatrix::from_symmetric_unchecked(gram))
}

/// Quality weights from retrieval scores: `q[i] = sqrt(max(score, floor))`.
/// Returns the weights plus the indices that hit the floor so callers can
/// surface a warning.
pub fn quality_from_scores(scores: &[f64], floor: f64) -> Result<(QualityVector, Vec<usize>)> {
    if !floor.is_finite() || floor <= 0.0 {
        return Err(KernelError::InvalidFloor { floor });
    }
    let mut values = Vec::with_capacity(scores.len());
    let mut clamped = Vec::new();
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(KernelError::NonFiniteScore { index: i });
        }
        let s = if s < floor {
            clamped.push(i);
            floor
        } else {
            s
        };
        values.push(s.sqrt());
    }
    Ok((QualityVector::new(values)?, clamped))
}

/// Fuse quality into the kernel: `G[i][j] = q[i] * q[j] * L[i][j]`.
/// A congruence by a positive diagonal, so PSD-ness and subset ranking
/// structure are preserved while `det(G_S) = det(L_S) * prod(q^2)`.
pub fn fuse_quality(l: &KernelMatrix, q: &QualityVector) -> Result<KernelMatrix> {
    let n = l.n();
    if q.len() != n {
        return Err(KernelError::DimensionMismatch {
            expected: n,
            got: q.len(),
        });
    }
    let qs = q.as_slice();
    let mut data = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = qs[i] * qs[j] * l.data[[i, j]];
            data[[i, j]] = v;
            data[[j, i]] = v;
        }
    }
    Ok(KernelMatrix::from_symmetric_unchecked(data))
}

/// Determinant of the principal submatrix `K_S`.
///
/// The empty subset is rejected; its determinant is [`EMPTY_SET_DET`] by
/// convention and handled by callers. Near-singular subsets come back as
/// (approximately) zero via the clip fallback rather than as an error.
pub fn det_submatrix(k: &KernelMatrix, s: &SubsetIndex) -> Result<f64> {
    if s.is_empty() {
        return Err(KernelError::EmptySubset);
    }
    s.check_bounds(k.n())?;
    det_of_indices(k, s.as_slice())
}

/// Same as [`det_submatrix`] but on a raw sorted index slice; shared with
/// the enumeration-heavy callers that avoid building a `SubsetIndex` per
/// candidate subset.
pub(crate) fn det_of_indices(k: &KernelMatrix, idx: &[usize]) -> Result<f64> {
    let sub = k.gather(idx);
    linalg::psd_det(&sub, idx.len()).ok_or_else(|| {
        KernelError::NumericalFailure(format!(
            "determinant of {}-element subset did not converge",
            idx.len()
        ))
    })
}

/// `log det(L + I)`, the normalizer of the subset probability distribution.
/// `L + I` is positive definite for any PSD `L`, so Cholesky failure here
/// means the input was not a valid kernel.
pub fn log_det_plus_identity(l: &KernelMatrix) -> Result<f64> {
    let n = l.n();
    let mut a = l.data.as_slice().expect("kernel is standard layout").to_vec();
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    linalg::spd_logdet(&a, n).ok_or_else(|| {
        KernelError::NumericalFailure("log det(L + I) failed: kernel is not PSD".into())
    })
}

/// `(L + I)^{-1}`, used by the likelihood gradient.
pub(crate) fn inverse_plus_identity(l: &KernelMatrix) -> Result<Array2<f64>> {
    let n = l.n();
    let mut a = l.data.as_slice().expect("kernel is standard layout").to_vec();
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    let inv = linalg::spd_inverse(&a, n).ok_or_else(|| {
        KernelError::NumericalFailure("inverse of L + I failed: kernel is not PSD".into())
    })?;
    Ok(Array2::from_shape_vec((n, n), inv).expect("square buffer"))
}

/// Probability the process selects exactly `S`: `det(L_S) / det(L + I)`.
/// The denominator is computed in log space and the result clamped into
/// `[0, 1]` against last-bit round-off.
pub fn dpp_probability(l: &KernelMatrix, s: &SubsetIndex) -> Result<f64> {
    s.check_bounds(l.n())?;
    let num = if s.is_empty() {
        EMPTY_SET_DET
    } else {
        det_of_indices(l, s.as_slice())?
    };
    let logdet = log_det_plus_identity(l)?;
    if num <= 0.0 {
        return Ok(0.0);
    }
    Ok((num.ln() - logdet).exp().clamp(0.0, 1.0))
}

/// Maximum kernel size accepted by [`partition_check`].
pub const PARTITION_CHECK_LIMIT: usize = 12;

/// Brute-force check of the normalization identity
/// `sum over all subsets of det(L_S) = det(L + I)`.
///
/// Returns `(subset_sum, det_plus_identity)`; callers compare the two at
/// their own tolerance. Exponential in `n`, hence the size limit.
pub fn partition_check(l: &KernelMatrix) -> Result<(f64, f64)> {
    let n = l.n();
    if n > PARTITION_CHECK_LIMIT {
        return Err(KernelError::TooLarge {
            n,
            limit: PARTITION_CHECK_LIMIT,
        });
    }
    let mut sum = EMPTY_SET_DET; // empty subset
    let mut idx = Vec::with_capacity(n);
    for mask in 1u32..(1u32 << n) {
        idx.clear();
        for i in 0..n {
            if mask & (1 << i) != 0 {
                idx.push(i);
            }
        }
        sum += det_of_indices(l, &idx)?;
    }
    let rhs = log_det_plus_identity(l)?.exp();
    Ok((sum, rhs))
}

// ───────────────────────── tests ─────────────────────────
