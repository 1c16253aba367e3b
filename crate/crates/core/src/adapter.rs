//! Bottleneck adapter that re-embeds candidates before kernel construction.
//!
//! The map is a two-layer MLP with an expansion factor of four and no
//! residual connection:
//!
//! ```text
//! out = W2 * gelu(layer_norm(W1 * v + b1)) + b2
//! ```
//!
//! `W1` is `4d x d`, `W2` is `d x 4d`. The layer norm carries a learnable
//! affine (scale, shift) and a variance guard of 1e-5; the GELU is the tanh
//! approximation. [`adapter_backward`] is an exact analytic transpose of
//! [`adapter_forward`] — every expression below has its derivative written
//! out by hand and is validated against central finite differences in the
//! test suite and the oracle module.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Variance guard inside the layer norm.
pub const LN_VARIANCE_GUARD: f64 = 1e-5;

/// Hidden width multiplier.
pub const EXPANSION: usize = 4;

/// On-disk format version accepted by [`load_params`].
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("input has dimension {got}, adapter expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cache does not match the adapter shape: {0}")]
    StaleCache(String),
    #[error("parameter file is malformed: {0}")]
    BadFormat(String),
    #[error("unsupported parameter format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AdapterError>;

/// Adapter weights. `d` is the embedding dimension; hidden width is `4d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub d: usize,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub ln_scale: Array1<f64>,
    pub ln_shift: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Gradients with the same shapes as [`AdapterParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub ln_scale: Array1<f64>,
    pub ln_shift: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl AdapterGradients {
    pub fn zeros(d: usize) -> Self {
        let h = EXPANSION * d;
        Self {
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            ln_scale: Array1::zeros(h),
            ln_shift: Array1::zeros(h),
            w2: Array2::zeros((d, h)),
            b2: Array1::zeros(d),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.ln_scale += &other.ln_scale;
        self.ln_shift += &other.ln_shift;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn scale(&mut self, factor: f64) {
        self.w1 *= factor;
        self.b1 *= factor;
        self.ln_scale *= factor;
        self.ln_shift *= factor;
        self.w2 *= factor;
        self.b2 *= factor;
    }

    /// Largest absolute entry across all blocks.
    pub fn max_abs(&self) -> f64 {
        self.blocks()
            .into_iter()
            .flat_map(|b| b.iter().copied())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    pub(crate) fn blocks(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.ln_scale.as_slice().expect("standard layout"),
            self.ln_shift.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.ln_scale.as_slice_mut().expect("standard layout"),
            self.ln_shift.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

impl AdapterParams {
    pub fn hidden(&self) -> usize {
        EXPANSION * self.d
    }

    pub(crate) fn blocks(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.ln_scale.as_slice().expect("standard layout"),
            self.ln_shift.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn blocks_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.ln_scale.as_slice_mut().expect("standard layout"),
            self.ln_shift.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}

/// Forward activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array1<f64>,
    normalized: Array1<f64>,
    inv_std: f64,
    ln_out: Array1<f64>,
    gelu_out: Array1<f64>,
}

// ───────────────────────── activation ─────────────────────────

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

const GELU_CUBIC: f64 = 0.044715;

/// tanh-approximated GELU.
fn gelu(x: f64) -> f64 {
    let u = sqrt_2_over_pi() * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let s = sqrt_2_over_pi();
    let u = s * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * s * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

// ───────────────────────── forward / backward ─────────────────────────

/// Apply the adapter to one embedding row.
pub fn adapter_forward(p: &AdapterParams, v: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if v.len() != p.d {
        return Err(AdapterError::DimensionMismatch {
            expected: p.d,
            got: v.len(),
        });
    }
    let input = Array1::from(v.to_vec());
    let hidden = p.w1.dot(&input) + &p.b1;
    let m = hidden.len() as f64;
    let mean = hidden.sum() / m;
    let centered = hidden.mapv(|z| z - mean);
    let var = centered.dot(&centered) / m;
    let inv_std = 1.0 / (var + LN_VARIANCE_GUARD).sqrt();
    let normalized = centered.mapv(|z| z * inv_std);
    let ln_out = &normalized * &p.ln_scale + &p.ln_shift;
    let gelu_out = ln_out.mapv(gelu);
    let out = p.w2.dot(&gelu_out) + &p.b2;
    let cache = ForwardCache {
        input,
        normalized,
        inv_std,
        ln_out,
        gelu_out,
    };
    Ok((out.to_vec(), cache))
}

/// Exact gradients of a scalar loss with upstream derivative `upstream`
/// (d loss / d out) through the forward pass that produced `cache`.
/// Returns the parameter gradients and d loss / d input.
pub fn adapter_backward(
    p: &AdapterParams,
    cache: &ForwardCache,
    upstream: &[f64],
) -> Result<(AdapterGradients, Vec<f64>)> {
    if upstream.len() != p.d {
        return Err(AdapterError::DimensionMismatch {
            expected: p.d,
            got: upstream.len(),
        });
    }
    let h = p.hidden();
    if cache.input.len() != p.d || cache.gelu_out.len() != h {
        return Err(AdapterError::StaleCache(format!(
            "cache built for d = {}, hidden = {}; adapter has d = {}, hidden = {}",
            cache.input.len(),
            cache.gelu_out.len(),
            p.d,
            h,
        )));
    }
    let up = Array1::from(upstream.to_vec());

    // out = W2 * g + b2
    let grad_b2 = up.clone();
    let mut grad_w2 = Array2::zeros((p.d, h));
    for i in 0..p.d {
        let ui = up[i];
        if ui != 0.0 {
            for j in 0..h {
                grad_w2[[i, j]] = ui * cache.gelu_out[j];
            }
        }
    }
    let d_gelu_out = p.w2.t().dot(&up);

    // g = gelu(y)
    let d_ln_out = &d_gelu_out * &cache.ln_out.mapv(gelu_derivative);

    // y = scale ⊙ x̂ + shift
    let grad_ln_scale = &d_ln_out * &cache.normalized;
    let grad_ln_shift = d_ln_out.clone();
    let d_normalized = &d_ln_out * &p.ln_scale;

    // x̂ = (h - mean) * inv_std, with inv_std covering the variance guard.
    // The guard folds into inv_std and x̂, so the textbook layer-norm
    // Jacobian applies verbatim:
    //   d_h = inv_std * (d_x̂ - mean(d_x̂) - x̂ * mean(d_x̂ ⊙ x̂))
    let m = h as f64;
    let mean_dn = d_normalized.sum() / m;
    let mean_dn_x = (&d_normalized * &cache.normalized).sum() / m;
    let d_hidden = (0..h)
        .map(|i| cache.inv_std * (d_normalized[i] - mean_dn - cache.normalized[i] * mean_dn_x))
        .collect::<Array1<f64>>();

    // hidden = W1 * v + b1
    let grad_b1 = d_hidden.clone();
    let mut grad_w1 = Array2::zeros((h, p.d));
    for i in 0..h {
        let di = d_hidden[i];
        if di != 0.0 {
            for j in 0..p.d {
                grad_w1[[i, j]] = di * cache.input[j];
            }
        }
    }
    let input_grad = p.w1.t().dot(&d_hidden);

    Ok((
        AdapterGradients {
            w1: grad_w1,
            b1: grad_b1,
            ln_scale: grad_ln_scale,
            ln_shift: grad_ln_shift,
            w2: grad_w2,
            b2: grad_b2,
        },
        input_grad.to_vec(),
    ))
}

/// Fresh parameters: weights from the uniform Xavier range
/// `±sqrt(6 / (fan_in + fan_out))`, biases and shifts zero, scales one.
/// The same seed always yields bit-identical parameters; entries are drawn
/// row-major, `w1` first, then `w2`.
pub fn init_params(d: usize, seed: u64) -> AdapterParams {
    assert!(d >= 1, "adapter dimension must be at least 1");
    let h = EXPANSION * d;
    let bound = (6.0 / (d + h) as f64).sqrt();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draw = |rows: usize, cols: usize| -> Array2<f64> {
        let mut m = Array2::zeros((rows, cols));
        for i in 0..rows {
            for j in 0..cols {
                m[[i, j]] = rng.gen_range(-bound..bound);
            }
        }
        m
    };
    let w1 = draw(h, d);
    let w2 = draw(d, h);
    AdapterParams {
        d,
        w1,
        b1: Array1::zeros(h),
        ln_scale: Array1::ones(h),
        ln_shift: Array1::zeros(h),
        w2,
        b2: Array1::zeros(d),
    }
}

// ───────────────────────── serialization ─────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    format_version: u32,
    d: usize,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    ln_scale: Vec<f64>,
    ln_shift: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

fn to_nested(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_nested(rows: &[Vec<f64>], want_rows: usize, want_cols: usize, name: &str) -> Result<Array2<f64>> {
    if rows.len() != want_rows || rows.iter().any(|r| r.len() != want_cols) {
        return Err(AdapterError::BadFormat(format!(
            "{name} must be {want_rows} x {want_cols}"
        )));
    }
    let mut m = Array2::zeros((want_rows, want_cols));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    Ok(m)
}

/// Serialize parameters as JSON to any writer.
pub fn write_params<W: Write>(p: &AdapterParams, writer: W) -> Result<()> {
    let file = ParamsFile {
        format_version: FORMAT_VERSION,
        d: p.d,
        w1: to_nested(&p.w1),
        b1: p.b1.to_vec(),
        ln_scale: p.ln_scale.to_vec(),
        ln_shift: p.ln_shift.to_vec(),
        w2: to_nested(&p.w2),
        b2: p.b2.to_vec(),
    };
    let mut writer = writer;
    serde_json::to_writer(&mut writer, &file)
        .map_err(|e| AdapterError::BadFormat(e.to_string()))?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Parse parameters from a JSON reader, validating version and shapes.
pub fn read_params<R: Read>(reader: R) -> Result<AdapterParams> {
    let file: ParamsFile =
        serde_json::from_reader(reader).map_err(|e| AdapterError::BadFormat(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(AdapterError::VersionMismatch {
            found: file.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if file.d == 0 {
        return Err(AdapterError::BadFormat("d must be at least 1".into()));
    }
    let h = EXPANSION * file.d;
    let check_vec = |v: &[f64], want: usize, name: &str| -> Result<()> {
        if v.len() != want {
            return Err(AdapterError::BadFormat(format!(
                "{name} must have length {want}, got {}",
                v.len()
            )));
        }
        Ok(())
    };
    check_vec(&file.b1, h, "b1")?;
    check_vec(&file.ln_scale, h, "ln_scale")?;
    check_vec(&file.ln_shift, h, "ln_shift")?;
    check_vec(&file.b2, file.d, "b2")?;
    let params = AdapterParams {
        d: file.d,
        w1: from_nested(&file.w1, h, file.d, "W1")?,
        b1: Array1::from(file.b1),
        ln_scale: Array1::from(file.ln_scale),
        ln_shift: Array1::from(file.ln_shift),
        w2: from_nested(&file.w2, file.d, h, "W2")?,
        b2: Array1::from(file.b2),
    };
    for block in params.blocks() {
        if block.iter().any(|v| !v.is_finite()) {
            return Err(AdapterError::BadFormat(
                "parameters contain non-finite values".into(),
            ));
        }
    }
    Ok(params)
}

pub fn save_params(p: &AdapterParams, path: &Path) -> Result<()> {
    write_params(p, BufWriter::new(File::create(path)?))
}

pub fn load_params(path: &Path) -> Result<AdapterParams> {
    read_params(BufReader::new(File::open(path)?))
}

// ───────────────────────── tests ─────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(d: usize) -> AdapterParams {
        let h = EXPANSION * d;
        AdapterParams {
            d,
            w1: Array2::zeros((h, d)),
            b1: Array1::zeros(h),
            ln_scale: Array1::ones(h),
            ln_shift: Array1::zeros(h),
            w2: Array2::zeros((d, h)),
            b2: Array1::zeros(d),
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let p = zeroed(3);
        let (out, _) = adapter_forward(&p, &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn output_bias_passes_through_zero_network() {
        let mut p = zeroed(2);
        p.b2 = Array1::from(vec![3.5, -1.25]);
        let (out, _) = adapter_forward(&p, &[0.7, 0.1]).unwrap();
        assert_eq!(out, vec![3.5, -1.25]);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let p = init_params(3, 1);
        assert!(matches!(
            adapter_forward(&p, &[1.0, 2.0]),
            Err(AdapterError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params(8, 42);
        let b = init_params(8, 42);
        assert_eq!(a, b);
        let c = init_params(8, 43);
        assert_ne!(a, c);
        let bound = (6.0f64 / (8.0 + 32.0)).sqrt();
        for block in [&a.w1, &a.w2] {
            for &v in block.iter() {
                assert!(v.abs() <= bound);
            }
        }
        assert!(a.b1.iter().all(|&v| v == 0.0));
        assert!(a.ln_scale.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn grad_b2_equals_upstream() {
        let p = init_params(4, 7);
        let v = [0.3, -0.2, 0.9, 0.05];
        let (_, cache) = adapter_forward(&p, &v).unwrap();
        let upstream = [1.0, -2.0, 0.25, 0.0];
        let (g, _) = adapter_backward(&p, &cache, &upstream).unwrap();
        assert_eq!(g.b2.to_vec(), upstream.to_vec());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init_params(4, 11);
        let v = [0.3, -0.2, 0.9, 0.05];
        let (_, cache) = adapter_forward(&p, &v).unwrap();
        let (g, input_grad) = adapter_backward(&p, &cache, &[0.0; 4]).unwrap();
        assert_eq!(g.max_abs(), 0.0);
        assert!(input_grad.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_mismatched_cache() {
        let p3 = init_params(3, 1);
        let p4 = init_params(4, 1);
        let (_, cache) = adapter_forward(&p3, &[0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(
            adapter_backward(&p4, &cache, &[0.0; 4]),
            Err(AdapterError::StaleCache(_))
        ));
    }

    /// Scalar probe loss: sum(out ⊙ probe). Central finite differences on
    /// every parameter entry and the input against the analytic gradients.
    #[test]
    fn gradients_match_finite_differences() {
        let d = 6;
        let h = 1e-5;
        for seed in 0..5u64 {
            let p = init_params(d, seed);
            let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5EED);
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let probe: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |p: &AdapterParams| -> f64 {
                let (out, _) = adapter_forward(p, &v).unwrap();
                out.iter().zip(&probe).map(|(o, w)| o * w).sum()
            };
            let (_, cache) = adapter_forward(&p, &v).unwrap();
            let (analytic, input_grad) = adapter_backward(&p, &cache, &probe).unwrap();

            // parameter gradients
            let analytic_blocks = analytic.blocks();
            for (block_id, block) in analytic_blocks.iter().enumerate() {
                for idx in 0..block.len() {
                    let mut plus = p.clone();
                    plus.blocks_mut()[block_id][idx] += h;
                    let mut minus = p.clone();
                    minus.blocks_mut()[block_id][idx] -= h;
                    let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let a = block[idx];
                    let denom = a.abs().max(fd.abs()).max(1e-6);
                    assert!(
                        (a - fd).abs() / denom <= 1e-6 || (a - fd).abs() <= 1e-9,
                        "seed {seed} block {block_id} idx {idx}: analytic {a} vs fd {fd}"
                    );
                }
            }

            // input gradient
            for idx in 0..d {
                let mut vp = v.clone();
                vp[idx] += h;
                let mut vm = v.clone();
                vm[idx] -= h;
                let f = |vv: &[f64]| -> f64 {
                    let (out, _) = adapter_forward(&p, vv).unwrap();
                    out.iter().zip(&probe).map(|(o, w)| o * w).sum()
                };
                let fd = (f(&vp) - f(&vm)) / (2.0 * h);
                let a = input_grad[idx];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom <= 1e-6,
                    "input grad {idx}: analytic {a} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let p = init_params(5, 99);
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let q = read_params(buf.as_slice()).unwrap();
        assert_eq!(p, q); // serde_json preserves f64 round-trips bit-exactly
    }

    #[test]
    fn load_rejects_other_versions() {
        let p = init_params(2, 1);
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace(
            "\"format_version\":1",
            "\"format_version\":2",
        );
        assert!(matches!(
            read_params(text.as_bytes()),
            Err(AdapterError::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn load_rejects_truncated_input() {
        let p = init_params(2, 1);
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(matches!(
            read_params(buf.as_slice()),
            Err(AdapterError::BadFormat(_))
        ));
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let p = init_params(2, 1);
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        // claim d = 3 while shipping d = 2 blocks
        let text = String::from_utf8(buf).unwrap().replace("\"d\":2", "\"d\":3");
        assert!(matches!(
            read_params(text.as_bytes()),
            Err(AdapterError::BadFormat(_))
        ));
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn forward_is_finite_on_finite_input(
                seed in 0u64..1000,
                v in proptest::collection::vec(-100.0f64..100.0, 4),
            ) {
                let p = init_params(4, seed);
                let (out, _) = adapter_forward(&p, &v).unwrap();
                prop_assert!(out.iter().all(|x| x.is_finite()));
            }

            #[test]
            fn roundtrip_preserves_params(seed in 0u64..1000, d in 1usize..6) {
                let p = init_params(d, seed);
                let mut buf = Vec::new();
                write_params(&p, &mut buf).unwrap();
                let q = read_params(buf.as_slice()).unwrap();
                prop_assert_eq!(p, q);
            }
        }
    }
}
