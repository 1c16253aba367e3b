//! Dense helpers for the small symmetric matrices that subset determinants,
//! adjugates, and likelihood terms operate on.
//!
//! Matrices are row-major `&[f64]` slices with an explicit dimension. These
//! routines target submatrices of a few dozen rows at most; nothing here is
//! blocked or parallel on purpose.

/// In-place lower Cholesky factorization. Returns `false` when a pivot is
/// non-positive or non-finite; the buffer is then partially overwritten.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut diag = a[j * n + j];
        for t in 0..j {
            diag -= a[j * n + t] * a[j * n + t];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return false;
        }
        let root = diag.sqrt();
        a[j * n + j] = root;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for t in 0..j {
                v -= a[i * n + t] * a[j * n + t];
            }
            a[i * n + j] = v / root;
        }
    }
    true
}

/// Determinant of a notionally PSD matrix.
///
/// Policy: plain Cholesky first; on failure retry once with a diagonal
/// jitter of `1e-10 * trace / n`; if that also fails, fall back to clipping
/// negative eigenvalues to zero and taking the product of the rest. Exactly
/// singular inputs therefore come back as 0 rather than an error.
pub(crate) fn psd_det(a: &[f64], n: usize) -> Option<f64> {
    if n == 0 {
        return Some(1.0);
    }
    let mut work = a.to_vec();
    if cholesky_in_place(&mut work, n) {
        return Some(det_from_factor(&work, n));
    }
    let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let jitter = 1e-10 * trace / n as f64;
    if jitter.is_finite() && jitter > 0.0 {
        work.copy_from_slice(a);
        for i in 0..n {
            work[i * n + i] += jitter;
        }
        if cholesky_in_place(&mut work, n) {
            return Some(det_from_factor(&work, n));
        }
    }
    let mut det = 1.0;
    for lambda in jacobi_eigenvalues(a, n) {
        if !lambda.is_finite() {
            return None;
        }
        det *= lambda.max(0.0);
    }
    det.is_finite().then_some(det)
}

fn det_from_factor(l: &[f64], n: usize) -> f64 {
    let mut det = 1.0;
    for i in 0..n {
        let v = l[i * n + i];
        det *= v * v;
    }
    det
}

/// log det of a symmetric positive definite matrix, or `None` when the
/// Cholesky factorization fails.
pub(crate) fn spd_logdet(a: &[f64], n: usize) -> Option<f64> {
    let mut work = a.to_vec();
    if !cholesky_in_place(&mut work, n) {
        return None;
    }
    Some(2.0 * (0..n).map(|i| work[i * n + i].ln()).sum::<f64>())
}

/// Inverse of a symmetric positive definite matrix via Cholesky solves.
pub(crate) fn spd_inverse(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = a.to_vec();
    if !cholesky_in_place(&mut l, n) {
        return None;
    }
    let mut inv = vec![0.0; n * n];
    let mut y = vec![0.0; n];
    for col in 0..n {
        for i in 0..n {
            let mut v = if i == col { 1.0 } else { 0.0 };
            for t in 0..i {
                v -= l[i * n + t] * y[t];
            }
            y[i] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = y[i];
            for t in (i + 1)..n {
                v -= l[t * n + i] * inv[t * n + col];
            }
            inv[i * n + col] = v / l[i * n + i];
        }
    }
    Some(inv)
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi sweeps.
pub(crate) fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    let mut m = a.to_vec();
    let fro: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let stop = 1e-13 * (fro + 1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                // Stable tangent of the rotation angle; theta == 0 means a
                // 45-degree rotation, not a no-op.
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Determinant via LU with partial pivoting. Handles indefinite matrices;
/// used for cofactor minors and as an algebraically independent cross-check
/// of the Cholesky route.
pub(crate) fn lu_det(a: &[f64], n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let mut piv = col;
        let mut best = m[col * n + col].abs();
        for r in (col + 1)..n {
            let v = m[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 {
            return 0.0;
        }
        if piv != col {
            for c2 in 0..n {
                m.swap(col * n + c2, piv * n + c2);
            }
            det = -det;
        }
        let pivot = m[col * n + col];
        det *= pivot;
        for r in (col + 1)..n {
            let f = m[r * n + col] / pivot;
            if f == 0.0 {
                continue;
            }
            for c2 in (col + 1)..n {
                m[r * n + c2] -= f * m[col * n + c2];
            }
        }
    }
    det
}

/// Cofactor matrix C with `C[i][j] = d det(A) / d A[i][j]`, computed from
/// first principles so it stays valid for singular inputs.
pub(crate) fn cofactor_matrix(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    if n == 1 {
        return vec![1.0];
    }
    let mut c = vec![0.0; n * n];
    let m = n - 1;
    let mut minor = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            let mut w = 0;
            for r in 0..n {
                if r == i {
                    continue;
                }
                for col in 0..n {
                    if col == j {
                        continue;
                    }
                    minor[w] = a[r * n + col];
                    w += 1;
                }
            }
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            c[i * n + j] = sign * lu_det(&minor, m);
        }
    }
    c
}
