//! Independent verification oracles.
//!
//! Every check here recomputes a quantity the selection or training stack
//! produces, by a different route: brute-force subset enumeration against
//! the closed-form normalizer, Schur-complement conditional gains against
//! the incremental factor updates, LU determinants against telescoped
//! Cholesky log-dets, finite differences against analytic gradients. The
//! suite is deterministic per (trials, seed) and scales its trial counts
//! from one knob.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapter::{adapter_backward, adapter_forward, init_params, AdapterParams};
use crate::kernel::{
    build_kernel, det_submatrix, dpp_probability, normalize_rows, partition_check,
    EmbeddingMatrix, KernelMatrix, SubsetIndex,
};
use crate::linalg;
use crate::map_infer::{conditional_gain, exact_map, greedy_map, GreedyConfig, SelectionResult};
use crate::objective::{
    dml_eval_from_dets, hinge_from_dets, log_sum_exp, loss_and_grads, nll_loss, LossConfig,
    LossKind, TrainingExample,
};

// ───────────────────────── tolerances ─────────────────────────

pub const PARTITION_REL_TOL: f64 = 1e-9;
pub const GAIN_ABS_TOL: f64 = 1e-8;
pub const LOGDET_REL_TOL: f64 = 1e-7;
/// Greedy must reach at least this fraction of the exact MAP determinant…
pub const GREEDY_RATIO_FLOOR: f64 = 0.5;
/// …in at least this fraction of trials.
pub const GREEDY_PASS_RATE: f64 = 0.95;
pub const BOUND_SLACK: f64 = 1e-12;
pub const CONVEXITY_TOL: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradients this small are compared absolutely, not relatively.
pub const FD_ABS_GUARD: f64 = 1e-8;
pub const NLL_CONSISTENCY_TOL: f64 = 1e-10;
pub const NLL_IDENTITY_TOL: f64 = 1e-12;

// ───────────────────────── report types ─────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub trials: usize,
    pub failures: usize,
    /// Worst observed statistic (error, violation, or ratio — see `detail`).
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} ({} trials, {} failures)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.trials,
            self.failures
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
}

impl CheckReport {
    pub fn new(checks: Vec<CheckOutcome>) -> Self {
        let all_passed = checks.iter().all(|c| c.passed);
        Self { checks, all_passed }
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(
            f,
            "{}: {}/{} checks passed",
            if self.all_passed { "OK" } else { "FAILED" },
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        )
    }
}

// ───────────────────────── shared generators ─────────────────────────

/// Full-rank Gram kernel of `n` random unit vectors in `d` dimensions.
pub fn random_gram_kernel(n: usize, d: usize, rng: &mut ChaCha20Rng) -> KernelMatrix {
    let mut rows = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let emb = EmbeddingMatrix::new(rows).expect("gaussian rows are finite");
    let unit = normalize_rows(&emb).expect("gaussian rows have positive norm");
    build_kernel(&unit).expect("unit rows build a kernel")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Finite-difference vs analytic comparison with an absolute guard for
/// near-zero gradients.
fn fd_mismatch(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < FD_ABS_GUARD {
        return 0.0;
    }
    (analytic - numeric).abs() / scale
}

// ───────────────────────── individual checks ─────────────────────────

/// Subset-sum normalization: sum of det(L_S) over all S equals det(L + I).
pub fn check_partition_identity(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for t in 0..trials {
        let n = 1 + t % 10;
        let kernel = random_gram_kernel(n, n + 2, &mut rng);
        let (sum, direct) = partition_check(&kernel).expect("within enumeration limit");
        let rel = (sum - direct).abs() / direct; // det(L + I) ≥ 1
        worst = worst.max(rel);
        if rel >= PARTITION_REL_TOL {
            failures += 1;
        }
    }
    CheckOutcome {
        name: "partition-identity".into(),
        passed: failures == 0,
        trials,
        failures,
        worst,
        tolerance: PARTITION_REL_TOL,
        detail: format!("worst relative error {worst:.3e}, tolerance {PARTITION_REL_TOL:.0e}"),
    }
}

/// Worst per-step gain error vs Schur-complement recomputation, and the
/// relative error of the telescoped log-det against an independent LU
/// determinant of the selected submatrix.
fn greedy_discrepancy(kernel: &KernelMatrix, result: &SelectionResult) -> (f64, f64) {
    let mut gain_err = 0.0f64;
    for (i, &item) in result.order.iter().enumerate() {
        let prefix = SubsetIndex::new(result.order[..i].to_vec()).expect("greedy never repeats");
        let schur = conditional_gain(kernel, &prefix, item).expect("selected items are in range");
        gain_err = gain_err.max((schur - result.step_gain[i]).abs());
    }
    let selected = result.selected();
    let sub = kernel.gather(selected.as_slice());
    let direct = linalg::lu_det(&sub, selected.len());
    let logdet_rel = rel_err(result.logdet_final, direct.ln());
    (gain_err, logdet_rel)
}

/// Greedy step gains vs Schur complements; telescoped log-det vs LU det.
pub fn check_greedy_gains(trials: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst_gain = 0.0f64;
    let mut worst_logdet = 0.0f64;
    let mut gain_failures = 0;
    let mut logdet_failures = 0;
    for _ in 0..trials {
        let n = rng.gen_range(5..=50);
        let kernel = random_gram_kernel(n, n + 3, &mut rng);
        let k = 10.min(n);
        let result = greedy_map(&kernel, &GreedyConfig::new(k)).expect("valid config");
        let (gain_err, logdet_rel) = greedy_discrepancy(&kernel, &result);
        worst_gain = worst_gain.max(gain_err);
        worst_logdet = worst_logdet.max(logdet_rel);
        if gain_err >= GAIN_ABS_TOL {
            gain_failures += 1;
        }
        if logdet_rel >= LOGDET_REL_TOL {
            logdet_failures += 1;
        }
    }
    vec![
        CheckOutcome {
            name: "greedy-gain-schur".into(),
            passed: gain_failures == 0,
            trials,
            failures: gain_failures,
            worst: worst_gain,
            tolerance: GAIN_ABS_TOL,
            detail: format!("worst gain error {worst_gain:.3e}, tolerance {GAIN_ABS_TOL:.0e}"),
        },
        CheckOutcome {
            name: "greedy-logdet-telescope".into(),
            passed: logdet_failures == 0,
            trials,
            failures: logdet_failures,
            worst: worst_logdet,
            tolerance: LOGDET_REL_TOL,
            detail: format!(
                "worst log-det relative error {worst_logdet:.3e}, tolerance {LOGDET_REL_TOL:.0e}"
            ),
        },
    ]
}

/// Greedy determinant vs exhaustive MAP, plus the fixed 3×3 case where
/// the top-scoring pair is redundant and the right answer is {0, 2}.
pub fn check_greedy_vs_exact(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst_ratio = f64::INFINITY;
    let mut successes = 0usize;
    for _ in 0..trials {
        let n = rng.gen_range(4..=12);
        let k = rng.gen_range(1..=4usize.min(n));
        let kernel = random_gram_kernel(n, n + 3, &mut rng);
        let greedy = greedy_map(&kernel, &GreedyConfig::new(k)).expect("valid config");
        let exact = exact_map(&kernel, k).expect("within enumeration limit");
        let greedy_det = det_submatrix(&kernel, &greedy.selected()).expect("in range");
        let exact_det = det_submatrix(&kernel, &exact).expect("in range");
        let ratio = greedy_det / exact_det;
        worst_ratio = worst_ratio.min(ratio);
        if ratio >= GREEDY_RATIO_FLOOR - BOUND_SLACK {
            successes += 1;
        }
    }
    let rate = successes as f64 / trials as f64;

    let fixture = KernelMatrix::new(ndarray::array![
        [1.0, 0.9, 0.1],
        [0.9, 1.0, 0.1],
        [0.1, 0.1, 1.0]
    ])
    .expect("fixture is symmetric");
    let greedy_pick = greedy_map(&fixture, &GreedyConfig::new(2)).expect("valid config");
    let exact_pick = exact_map(&fixture, 2).expect("tiny");
    let fixture_ok =
        greedy_pick.selected().as_slice() == [0, 2] && exact_pick.as_slice() == [0, 2];

    let passed = rate >= GREEDY_PASS_RATE && fixture_ok;
    CheckOutcome {
        name: "greedy-vs-exact".into(),
        passed,
        trials,
        failures: trials - successes,
        worst: worst_ratio,
        tolerance: GREEDY_RATIO_FLOOR,
        detail: format!(
            "ratio ≥ {GREEDY_RATIO_FLOOR} in {:.1}% of trials (need ≥ {:.0}%), worst ratio {worst_ratio:.4}, 3×3 fixture {}",
            rate * 100.0,
            GREEDY_PASS_RATE * 100.0,
            if fixture_ok { "selects {0,2}" } else { "WRONG" }
        ),
    }
}

/// Two-sided envelope: max ≤ smooth-max ≤ max + log(m)/γ.
pub fn check_lse_bounds(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let m = rng.gen_range(1..=8);
        let xs: Vec<f64> = (0..m).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let max = xs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut bad = false;
        for gamma in [0.5, 1.0, 4.0] {
            let lse = log_sum_exp(&xs, gamma);
            let lower_violation = max - lse;
            let upper_violation = lse - (max + (m as f64).ln() / gamma);
            worst = worst.max(lower_violation).max(upper_violation);
            if lower_violation > BOUND_SLACK || upper_violation > BOUND_SLACK {
                bad = true;
            }
        }
        if bad {
            failures += 1;
        }
    }
    CheckOutcome {
        name: "lse-bounds".into(),
        passed: failures == 0,
        trials,
        failures,
        worst,
        tolerance: BOUND_SLACK,
        detail: format!("worst bound violation {worst:.3e}, slack {BOUND_SLACK:.0e}"),
    }
}

/// The smooth objective dominates the raw hinge on random determinants.
pub fn check_smooth_dominance(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let m = rng.gen_range(1..=20);
        let negs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let pos: f64 = rng.gen_range(0.0..1.0);
        let gamma = [0.5, 1.0, 4.0][rng.gen_range(0..3)];
        let smooth = dml_eval_from_dets(&negs, pos, gamma).loss;
        let raw = hinge_from_dets(&negs, pos);
        let violation = raw - smooth;
        worst = worst.max(violation);
        if violation > BOUND_SLACK {
            failures += 1;
        }
    }
    CheckOutcome {
        name: "smooth-dominance".into(),
        passed: failures == 0,
        trials,
        failures,
        worst,
        tolerance: BOUND_SLACK,
        detail: format!("worst raw-over-smooth excess {worst:.3e}, slack {BOUND_SLACK:.0e}"),
    }
}

/// Midpoint convexity of the smooth objective in determinant space.
pub fn check_midpoint_convexity(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let m = rng.gen_range(1..=10);
        let gamma = [0.5, 1.0, 4.0][rng.gen_range(0..3)];
        let a_negs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b_negs: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a_pos: f64 = rng.gen_range(0.0..1.0);
        let b_pos: f64 = rng.gen_range(0.0..1.0);
        let mid_negs: Vec<f64> = a_negs
            .iter()
            .zip(&b_negs)
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        let mid = dml_eval_from_dets(&mid_negs, 0.5 * (a_pos + b_pos), gamma).loss;
        let avg = 0.5
            * (dml_eval_from_dets(&a_negs, a_pos, gamma).loss
                + dml_eval_from_dets(&b_negs, b_pos, gamma).loss);
        let violation = mid - avg;
        worst = worst.max(violation);
        if violation > CONVEXITY_TOL {
            failures += 1;
        }
    }
    CheckOutcome {
        name: "midpoint-convexity".into(),
        passed: failures == 0,
        trials,
        failures,
        worst,
        tolerance: CONVEXITY_TOL,
        detail: format!("worst midpoint excess {worst:.3e}, tolerance {CONVEXITY_TOL:.0e}"),
    }
}

/// Adapter backward pass vs central finite differences: parameter blocks
/// and the input gradient, through a random linear functional of the
/// output.
pub fn check_adapter_fd(seeds: usize, seed0: u64) -> CheckOutcome {
    let d = 6;
    let mut worst = 0.0f64;
    let mut failures = 0;
    for s in 0..seeds {
        let mut rng = ChaCha20Rng::seed_from_u64(seed0.wrapping_add(s as u64));
        let params = init_params(d, rng.gen());
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let scalar = |p: &AdapterParams, v: &[f64]| -> f64 {
            let (out, _) = adapter_forward(p, v).expect("shapes match");
            out.iter().zip(&u) .map(|(o, ui)| o * ui).sum()
        };
        let (_, cache) = adapter_forward(&params, &v).expect("shapes match");
        let (grads, input_grad) = adapter_backward(&params, &cache, &u).expect("fresh cache");

        let mut bad = false;
        // a sample of coordinates from every parameter block
        for (b, block) in grads.blocks().into_iter().enumerate() {
            let stride = (block.len() / 3).max(1);
            for c in (0..block.len()).step_by(stride) {
                let mut plus = params.clone();
                plus.blocks_mut()[b][c] += FD_STEP;
                let mut minus = params.clone();
                minus.blocks_mut()[b][c] -= FD_STEP;
                let numeric = (scalar(&plus, &v) - scalar(&minus, &v)) / (2.0 * FD_STEP);
                let err = fd_mismatch(block[c], numeric);
                worst = worst.max(err);
                if err >= FD_REL_TOL {
                    bad = true;
                }
            }
        }
        for c in 0..d {
            let mut vp = v.clone();
            vp[c] += FD_STEP;
            let mut vm = v.clone();
            vm[c] -= FD_STEP;
            let numeric = (scalar(&params, &vp) - scalar(&params, &vm)) / (2.0 * FD_STEP);
            let err = fd_mismatch(input_grad[c], numeric);
            worst = worst.max(err);
            if err >= FD_REL_TOL {
                bad = true;
            }
        }
        if bad {
            failures += 1;
        }
    }
    CheckOutcome {
        name: "adapter-gradient-fd".into(),
        passed: failures == 0,
        trials: seeds,
        failures,
        worst,
        tolerance: FD_REL_TOL,
        detail: format!("worst relative error {worst:.3e}, tolerance {FD_REL_TOL:.0e}"),
    }
}

/// Full training chain (adapter → normalization → kernel → determinants →
/// loss) vs central finite differences, for both loss kinds.
pub fn check_chain_fd(seeds: usize, seed0: u64) -> CheckOutcome {
    let (d, n) = (6, 6);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for s in 0..seeds {
        let mut rng = ChaCha20Rng::seed_from_u64(seed0.wrapping_add(1000 + s as u64));
        let mut rows = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                rows[[i, j]] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let example = TrainingExample::new(
            format!("fd-{s}"),
            EmbeddingMatrix::new(rows).expect("finite"),
            SubsetIndex::new(vec![0, 1]).expect("sorted"),
            SubsetIndex::new(vec![2, 3, 4, 5]).expect("sorted"),
        )
        .expect("disjoint");
        let params = init_params(d, rng.gen());

        let mut bad = false;
        for kind in [LossKind::Dml, LossKind::Nll] {
            let mut cfg = LossConfig::default();
            cfg.loss_kind = kind;
            let (_, grads) = loss_and_grads(&params, &example, &cfg).expect("well-posed");
            for (b, block) in grads.blocks().into_iter().enumerate() {
                let stride = (block.len() / 3).max(1);
                for c in (0..block.len()).step_by(stride) {
                    let mut plus = params.clone();
                    plus.blocks_mut()[b][c] += FD_STEP;
                    let mut minus = params.clone();
                    minus.blocks_mut()[b][c] -= FD_STEP;
                    let lp = loss_and_grads(&plus, &example, &cfg).expect("well-posed").0;
                    let lm = loss_and_grads(&minus, &example, &cfg).expect("well-posed").0;
                    let numeric = (lp - lm) / (2.0 * FD_STEP);
                    let err = fd_mismatch(block[c], numeric);
                    worst = worst.max(err);
                    if err >= FD_REL_TOL {
                        bad = true;
                    }
                }
            }
        }
        if bad {
            failures += 1;
        }
    }
    CheckOutcome {
        name: "chain-gradient-fd".into(),
        passed: failures == 0,
        trials: seeds,
        failures,
        worst,
        tolerance: FD_REL_TOL,
        detail: format!("worst relative error {worst:.3e}, tolerance {FD_REL_TOL:.0e}"),
    }
}

/// The likelihood loss equals −log of the subset probability, and on the
/// identity kernel it equals n·ln 2 for any subset.
pub fn check_nll_consistency(trials: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for _ in 0..trials {
        let n = rng.gen_range(2..=8);
        let kernel = random_gram_kernel(n, n + 2, &mut rng);
        let size = rng.gen_range(1..=3usize.min(n));
        let mut pick: Vec<usize> = (0..n).collect();
        for i in (1..pick.len()).rev() {
            let j = rng.gen_range(0..=i);
            pick.swap(i, j);
        }
        pick.truncate(size);
        let y = SubsetIndex::new(pick).expect("distinct");
        let nll = nll_loss(&kernel, &y).expect("full-rank kernel");
        let p = dpp_probability(&kernel, &y).expect("full-rank kernel");
        let err = (nll - (-p.ln())).abs();
        worst = worst.max(err);
        if err >= NLL_CONSISTENCY_TOL {
            failures += 1;
        }
    }

    let mut identity_worst = 0.0f64;
    for n in 1..=12 {
        let kernel = KernelMatrix::new(Array2::eye(n)).expect("identity is a kernel");
        let y = SubsetIndex::new(vec![0]).expect("nonempty");
        let nll = nll_loss(&kernel, &y).expect("identity is full-rank");
        identity_worst = identity_worst.max((nll - n as f64 * std::f64::consts::LN_2).abs());
    }
    let identity_ok = identity_worst < NLL_IDENTITY_TOL;

    CheckOutcome {
        name: "nll-consistency".into(),
        passed: failures == 0 && identity_ok,
        trials,
        failures,
        worst,
        tolerance: NLL_CONSISTENCY_TOL,
        detail: format!(
            "worst |nll + log p| {worst:.3e} (tol {NLL_CONSISTENCY_TOL:.0e}); identity-kernel worst {identity_worst:.3e} (tol {NLL_IDENTITY_TOL:.0e})"
        ),
    }
}

// ───────────────────────── the suite ─────────────────────────

/// Run every check, scaling trial counts from `trials` (the count given to
/// the largest checks; the default 1000 yields 100 partition kernels, 200
/// greedy kernels, 20 finite-difference seeds, and so on).
pub fn run_suite(trials: usize, seed: u64) -> CheckReport {
    let base = trials.max(1);
    let fd_seeds = (base / 50).clamp(4, 40);
    let mut checks = Vec::new();
    checks.push(check_partition_identity((base / 10).max(1), seed));
    checks.extend(check_greedy_gains((base / 5).max(1), seed ^ 0x9E3779B9));
    checks.push(check_greedy_vs_exact(base, seed ^ 0x7F4A7C15));
    checks.push(check_lse_bounds(base, seed ^ 0x2545F491));
    checks.push(check_smooth_dominance(base, seed ^ 0x13198A2E));
    checks.push(check_midpoint_convexity(base, seed ^ 0x243F6A88));
    checks.push(check_adapter_fd(fd_seeds, seed ^ 0xB7E15162));
    checks.push(check_chain_fd(fd_seeds, seed ^ 0x38D01377));
    checks.push(check_nll_consistency((base / 10).max(1), seed ^ 0xA4093822));
    CheckReport::new(checks)
}

// ───────────────────────── tests ─────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_identity_passes_at_default_scale() {
        let out = check_partition_identity(100, 11);
        assert!(out.passed, "{out}");
        assert!(out.worst < PARTITION_REL_TOL);
    }

    #[test]
    fn greedy_gain_checks_pass() {
        for out in check_greedy_gains(50, 12) {
            assert!(out.passed, "{out}");
        }
    }

    #[test]
    fn greedy_vs_exact_passes() {
        let out = check_greedy_vs_exact(200, 13);
        assert!(out.passed, "{out}");
        assert!(out.worst > 0.5, "worst ratio {}", out.worst);
    }

    #[test]
    fn bound_checks_pass() {
        assert!(check_lse_bounds(500, 14).passed);
        assert!(check_smooth_dominance(500, 15).passed);
        assert!(check_midpoint_convexity(500, 16).passed);
    }

    #[test]
    fn gradient_checks_pass() {
        let a = check_adapter_fd(5, 17);
        assert!(a.passed, "{a}");
        let c = check_chain_fd(5, 18);
        assert!(c.passed, "{c}");
    }

    #[test]
    fn nll_consistency_passes() {
        let out = check_nll_consistency(100, 19);
        assert!(out.passed, "{out}");
    }

    #[test]
    fn corrupted_gains_are_detected() {
        // sensitivity: a perturbed gain sequence must trip the comparison
        let mut rng = ChaCha20Rng::seed_from_u64(20);
        let kernel = random_gram_kernel(12, 15, &mut rng);
        let mut result = greedy_map(&kernel, &GreedyConfig::new(4)).unwrap();
        let (clean_gain, clean_logdet) = greedy_discrepancy(&kernel, &result);
        assert!(clean_gain < GAIN_ABS_TOL);
        assert!(clean_logdet < LOGDET_REL_TOL);
        result.step_gain[1] += 1e-6;
        let (corrupt_gain, _) = greedy_discrepancy(&kernel, &result);
        assert!(corrupt_gain > GAIN_ABS_TOL, "gain error {corrupt_gain}");
        result.step_gain[1] -= 1e-6;
        result.logdet_final += 1e-4;
        let (_, corrupt_logdet) = greedy_discrepancy(&kernel, &result);
        assert!(corrupt_logdet > LOGDET_REL_TOL, "logdet error {corrupt_logdet}");
    }

    #[test]
    fn suite_is_deterministic() {
        let a = run_suite(60, 21);
        let b = run_suite(60, 21);
        assert!(a.all_passed, "\n{a}");
        assert_eq!(a.checks.len(), b.checks.len());
        for (x, y) in a.checks.iter().zip(&b.checks) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.worst.to_bits(), y.worst.to_bits());
            assert_eq!(x.failures, y.failures);
        }
    }

    #[test]
    fn suite_scales_trial_counts() {
        let r = run_suite(100, 22);
        let partition = r.checks.iter().find(|c| c.name == "partition-identity").unwrap();
        assert_eq!(partition.trials, 10);
        let exact = r.checks.iter().find(|c| c.name == "greedy-vs-exact").unwrap();
        assert_eq!(exact.trials, 100);
    }

    #[test]
    fn report_formats_one_line_per_check() {
        let r = run_suite(30, 23);
        let text = r.to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), r.checks.len() + 1); // checks + summary
        assert!(lines.last().unwrap().contains("checks passed"));
        for (line, check) in lines.iter().zip(&r.checks) {
            assert!(line.starts_with("PASS") || line.starts_with("FAIL"));
            assert!(line.contains(&check.name));
        }
    }
}
