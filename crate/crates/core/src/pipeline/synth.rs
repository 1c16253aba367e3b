//! Synthetic retrieval pools with controlled redundancy.
//!
//! Each query gets `k_pos` genuinely complementary evidence vectors plus a
//! crowd of distractors that are near-copies of that evidence. The
//! construction is engineered so that the pathology the selector must
//! overcome — redundant copies out-scoring and out-volume-ing the true
//! evidence chain — is present by design, and so that a *small, learnable*
//! embedding correction removes it:
//!
//! - All vectors live in a seeded random orthonormal basis, so nothing is
//!   axis-aligned.
//! - Positives are an exact orthonormal frame plus correlated noise along a
//!   single dataset-global direction `z`. The shared direction is what a
//!   per-item map can discover and suppress from data: every query's
//!   gradient pushes the same way. The noise makes the gold subset's
//!   pairwise cosines equal `noise² / (1 + noise²)` in magnitude —
//!   deterministic, not luck-of-the-draw.
//! - Distractors blend a positive's clean frame direction with a
//!   perturbation split three ways: a dataset-global direction `t` shared
//!   by every distractor (a fixed correlation floor between any two
//!   distractors of different sources), a per-distractor unique direction
//!   (volume negatives keep even after training), and a fresh random tail
//!   whose weight grows as redundancy falls.
//!
//! With the default scales the floor sits *below* the raw gold penalty —
//! redundant subsets out-volume the gold set in the raw space — and
//! *above* the suppressed gold penalty, so the ordering flips once the
//! noise direction is even partially removed. Distractors deliberately do
//! not inherit `z`: they are copies of the claim, not of the noise.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::{CandidatePool, PipelineError, Result};
use crate::kernel::{EmbeddingMatrix, SubsetIndex};
use crate::objective::TrainingExample;

/// Default amplitude of the shared noise direction on positives.
pub const DEFAULT_NOISE: f64 = 0.3;

/// Share of a distractor's structured perturbation spent on the common
/// direction `t` (the rest goes to its unique direction).
const SHARED_FLOOR_SHARE: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub d: usize,
    pub k_pos: usize,
    pub n_distractors: usize,
    /// In [0,1]: 1 duplicates a positive exactly, 0 yields fresh vectors.
    pub redundancy: f64,
    /// Amplitude of the shared noise direction mixed into positives.
    pub noise: f64,
    /// When set, query q uses `k_cycle[q % len]` positives instead of
    /// `k_pos`, with distractors padded so every pool keeps the same total
    /// size `k_pos + n_distractors`. Gives a multi-hop mix in one dataset.
    pub k_cycle: Option<Vec<usize>>,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(
        n_queries: usize,
        d: usize,
        k_pos: usize,
        n_distractors: usize,
        redundancy: f64,
        seed: u64,
    ) -> Self {
        Self {
            n_queries,
            d,
            k_pos,
            n_distractors,
            redundancy,
            noise: DEFAULT_NOISE,
            k_cycle: None,
            seed,
        }
    }

    #[must_use]
    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    #[must_use]
    pub fn with_k_cycle(mut self, ks: Vec<usize>) -> Self {
        self.k_cycle = Some(ks);
        self
    }

    /// Total candidates per pool (constant across queries).
    pub fn pool_total(&self) -> usize {
        self.k_pos + self.n_distractors
    }

    /// Largest positive-set size any query uses.
    fn max_k(&self) -> usize {
        self.k_cycle
            .as_ref()
            .and_then(|ks| ks.iter().copied().max())
            .unwrap_or(self.k_pos)
            .max(self.k_pos)
    }

    fn k_for_query(&self, q: usize) -> usize {
        match &self.k_cycle {
            Some(ks) => ks[q % ks.len()],
            None => self.k_pos,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(PipelineError::InvalidConfig(
                "n_queries must be at least 1".into(),
            ));
        }
        if self.k_pos == 0 {
            return Err(PipelineError::InvalidConfig(
                "k_pos must be at least 1".into(),
            ));
        }
        if let Some(ks) = &self.k_cycle {
            if ks.is_empty() || ks.iter().any(|&k| k == 0) {
                return Err(PipelineError::InvalidConfig(
                    "k_cycle must be non-empty with every entry ≥ 1".into(),
                ));
            }
            if ks.iter().any(|&k| k >= self.pool_total()) {
                return Err(PipelineError::InvalidConfig(
                    "every k_cycle entry must leave room for at least one distractor".into(),
                ));
            }
        }
        let max_k = self.max_k();
        if max_k > self.d {
            return Err(PipelineError::InvalidConfig(format!(
                "k_pos {} exceeds dimension {}",
                max_k, self.d
            )));
        }
        // the construction reserves one shared-floor direction, one noise
        // direction, and at least one unique direction beyond the frame
        if self.d < max_k + 3 {
            return Err(PipelineError::InvalidConfig(format!(
                "dimension {} too small for k_pos {} (need k_pos + 3)",
                self.d, max_k
            )));
        }
        if !(0.0..=1.0).contains(&self.redundancy) {
            return Err(PipelineError::InvalidConfig(format!(
                "redundancy must lie in [0, 1], got {}",
                self.redundancy
            )));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(PipelineError::InvalidConfig(format!(
                "noise must be finite and non-negative, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

// ───────────────────────── linear-algebra helpers ─────────────────────────

fn gaussian_vec(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Random orthonormal set of `count` vectors in R^n (Gram–Schmidt with
/// resampling on near-degenerate draws).
fn random_orthonormal(rng: &mut ChaCha20Rng, count: usize, n: usize) -> Vec<Vec<f64>> {
    assert!(count <= n, "cannot fit {count} orthonormal vectors in R^{n}");
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, n);
        for b in &basis {
            let p = dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= p * bi;
            }
        }
        let len = norm(&v);
        if len < 1e-8 {
            continue; // resample: the draw fell into the current span
        }
        for vi in &mut v {
            *vi /= len;
        }
        basis.push(v);
    }
    basis
}

/// v += c * b
fn axpy(v: &mut [f64], c: f64, b: &[f64]) {
    for (vi, bi) in v.iter_mut().zip(b) {
        *vi += c * bi;
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let len = norm(&v);
    for vi in &mut v {
        *vi /= len;
    }
    v
}

// ───────────────────────── generation ─────────────────────────

/// Generate `n_queries` candidate pools plus matching training examples.
///
/// Candidate order mimics a reranker's output: the strongest positive
/// first, then every distractor (scores 0.95 down to 0.80), then the
/// remaining positives (scores 0.70 down to 0.55) — surface relevance
/// favors the redundant copies. Gold indices point at the positives,
/// negative indices at the distractors. Fully deterministic per seed.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<(Vec<CandidatePool>, Vec<TrainingExample>)> {
    cfg.validate()?;
    let d = cfg.d;
    let r = cfg.redundancy;
    let max_k = cfg.max_k();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // dataset-global geometry: a hidden rotation assigning roles to
    // directions — the frame block, the shared floor t, the noise z, and a
    // block of unique directions for distractors
    let basis = random_orthonormal(&mut rng, d, d);
    let (frame_block, rest) = basis.split_at(max_k);
    let t_dir = &rest[0];
    let z_dir = &rest[1];
    let unique_block = &rest[2..];

    let perp = (1.0 - r * r).sqrt();
    let fresh_w = 1.0 - r;
    let structured = (1.0 - fresh_w * fresh_w).max(0.0);
    let t_w = (SHARED_FLOOR_SHARE * structured).sqrt();
    let e_w = ((1.0 - SHARED_FLOOR_SHARE) * structured).sqrt();

    let mut pools = Vec::with_capacity(cfg.n_queries);
    let mut examples = Vec::with_capacity(cfg.n_queries);
    for q in 0..cfg.n_queries {
        let query_id = format!("q{q:04}");
        let k = cfg.k_for_query(q);
        let m = cfg.pool_total() - k;

        // per-query frame: a random rotation within the frame block
        let coefs = random_orthonormal(&mut rng, k, max_k);
        let frames: Vec<Vec<f64>> = coefs
            .iter()
            .map(|c| {
                let mut f = vec![0.0; d];
                for (j, &cj) in c.iter().enumerate() {
                    axpy(&mut f, cj, &frame_block[j]);
                }
                f
            })
            .collect();

        let positives: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let mut p = f.clone();
                axpy(&mut p, cfg.noise * sign, z_dir);
                normalized(p)
            })
            .collect();

        let distractors: Vec<Vec<f64>> = (0..m)
            .map(|t| {
                let src = t % k;
                let e_dir = &unique_block[t % unique_block.len()];
                // fresh tail: random within the unique block, kept clear of
                // this distractor's own unique direction
                let mut g = {
                    let coef = gaussian_vec(&mut rng, unique_block.len());
                    let mut g = vec![0.0; d];
                    for (j, &cj) in coef.iter().enumerate() {
                        axpy(&mut g, cj, &unique_block[j]);
                    }
                    let p = dot(&g, e_dir);
                    axpy(&mut g, -p, e_dir);
                    g
                };
                let g_len = norm(&g);
                if g_len > 1e-12 {
                    for gi in &mut g {
                        *gi /= g_len;
                    }
                } else {
                    g.iter_mut().for_each(|x| *x = 0.0);
                }
                let mut v = vec![0.0; d];
                axpy(&mut v, r, &frames[src]);
                axpy(&mut v, perp * t_w, t_dir);
                axpy(&mut v, perp * e_w, e_dir);
                axpy(&mut v, perp * fresh_w, &g);
                normalized(v)
            })
            .collect();

        // candidate order: strongest positive, distractors, late positives
        let n = 1 + m + (k - 1);
        let mut rows = Array2::zeros((n, d));
        let mut ids = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        let put = |row: usize, v: &[f64], rows: &mut Array2<f64>| {
            for (j, &x) in v.iter().enumerate() {
                rows[[row, j]] = x;
            }
        };
        put(0, &positives[0], &mut rows);
        ids.push(format!("{query_id}-p0"));
        scores.push(1.0);
        for (j, dv) in distractors.iter().enumerate() {
            put(1 + j, dv, &mut rows);
            ids.push(format!("{query_id}-n{j}"));
            scores.push(0.95 - 0.15 * j as f64 / (m.max(2) - 1) as f64);
        }
        for i in 1..k {
            put(m + i, &positives[i], &mut rows);
            ids.push(format!("{query_id}-p{i}"));
            scores.push(0.70 - 0.15 * (i - 1) as f64 / (k.max(3) - 2) as f64);
        }

        let gold: Vec<usize> = std::iter::once(0).chain(m + 1..m + k).collect();
        let negatives: Vec<usize> = (1..=m).collect();
        let embeddings = EmbeddingMatrix::new(rows)?;
        let pool = CandidatePool::new(
            query_id.clone(),
            ids,
            embeddings.clone(),
            Some(scores),
            SubsetIndex::new(gold.clone())?,
            Some(k as u32),
        )?;
        let example = TrainingExample::new(
            query_id,
            embeddings,
            SubsetIndex::new(gold)?,
            SubsetIndex::new(negatives)?,
        )
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        pools.push(pool);
        examples.push(example);
    }
    Ok((pools, examples))
}

// ───────────────────────── splitting ─────────────────────────

/// Seeded stratified split with largest-remainder rounding per stratum.
///
/// Items are grouped by `key`, each stratum shuffled and partitioned to
/// match `ratios` as closely as integer sizes allow. Every item lands in
/// exactly one split; within a split, input order is preserved.
pub fn stratified_split<T: Clone, K: Ord, F: Fn(&T) -> K>(
    items: &[T],
    key: F,
    ratios: (usize, usize, usize),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let total_ratio = ratios.0 + ratios.1 + ratios.2;
    if total_ratio == 0 {
        return Err(PipelineError::InvalidConfig(
            "split ratios must not all be zero".into(),
        ));
    }
    let mut strata: std::collections::BTreeMap<K, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        strata.entry(key(item)).or_default().push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut buckets: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (_, mut members) in strata {
        for i in (1..members.len()).rev() {
            let j = rng.gen_range(0..=i);
            members.swap(i, j);
        }
        let n = members.len();
        let shares = [ratios.0, ratios.1, ratios.2];
        let mut sizes = [0usize; 3];
        let mut fracs = [0.0f64; 3];
        let mut assigned = 0;
        for b in 0..3 {
            let exact = n as f64 * shares[b] as f64 / total_ratio as f64;
            sizes[b] = exact.floor() as usize;
            fracs[b] = exact - exact.floor();
            assigned += sizes[b];
        }
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| fracs[b].partial_cmp(&fracs[a]).unwrap().then(a.cmp(&b)));
        for &b in order.iter().take(n - assigned) {
            sizes[b] += 1;
        }
        let mut offset = 0;
        for b in 0..3 {
            buckets[b].extend(&members[offset..offset + sizes[b]]);
            offset += sizes[b];
        }
    }
    let mut out: Vec<Vec<T>> = Vec::with_capacity(3);
    for bucket in &mut buckets {
        bucket.sort_unstable();
        out.push(bucket.iter().map(|&i| items[i].clone()).collect());
    }
    let test = out.pop().unwrap();
    let val = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok((train, val, test))
}

// ───────────────────────── tests ─────────────────────────

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, det_submatrix};

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (norm(a) * norm(b))
    }

    #[test]
    fn shapes_ids_and_determinism() {
        let cfg = SynthConfig::new(4, 16, 3, 13, 0.9, 7);
        let (pools, examples) = synth_dataset(&cfg).unwrap();
        assert_eq!(pools.len(), 4);
        assert_eq!(examples.len(), 4);
        for (pool, ex) in pools.iter().zip(&examples) {
            assert_eq!(pool.ids.len(), 16); // 1 + 13 + 2
            assert_eq!(pool.embeddings.rows(), 16);
            assert_eq!(pool.embeddings.dim(), 16);
            assert_eq!(pool.gold.len(), 3);
            assert_eq!(ex.negatives.len(), 13);
            assert_eq!(pool.hop_count, Some(3));
            let mut uniq = pool.ids.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), 16);
        }
        let (pools2, _) = synth_dataset(&cfg).unwrap();
        for (a, b) in pools.iter().zip(&pools2) {
            assert_eq!(a.embeddings.as_array(), b.embeddings.as_array());
            assert_eq!(a.scores, b.scores);
        }
    }

    #[test]
    fn rows_are_unit_norm() {
        let cfg = SynthConfig::new(2, 16, 3, 13, 0.95, 3);
        let (pools, _) = synth_dataset(&cfg).unwrap();
        for pool in &pools {
            for i in 0..pool.embeddings.rows() {
                let row = pool.embeddings.row(i);
                let n = row.dot(&row).sqrt();
                assert!((n - 1.0).abs() < 1e-12, "row {i} has norm {n}");
            }
        }
    }

    #[test]
    fn full_redundancy_zero_noise_duplicates_a_positive() {
        let cfg = SynthConfig::new(1, 12, 2, 6, 1.0, 5).with_noise(0.0);
        let (pools, ex) = synth_dataset(&cfg).unwrap();
        let pool = &pools[0];
        let gold = ex[0].positives.as_slice();
        for &j in ex[0].negatives.as_slice() {
            let dv = pool.embeddings.row(j).to_vec();
            let best = gold
                .iter()
                .map(|&g| cos(&dv, &pool.embeddings.row(g).to_vec()))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - 1.0).abs() < 1e-10, "distractor {j} cosine {best}");
        }
    }

    #[test]
    fn zero_redundancy_gives_unstructured_distractors() {
        let cfg = SynthConfig::new(1, 16, 2, 8, 0.0, 5);
        let (pools, ex) = synth_dataset(&cfg).unwrap();
        let pool = &pools[0];
        for &j in ex[0].negatives.as_slice() {
            let dv = pool.embeddings.row(j).to_vec();
            for &g in ex[0].positives.as_slice() {
                let c = cos(&dv, &pool.embeddings.row(g).to_vec());
                assert!(c.abs() < 0.5, "distractor {j} vs gold {g}: cosine {c}");
            }
        }
    }

    #[test]
    fn gold_subset_spans_nearly_full_volume_at_small_noise() {
        let cfg = SynthConfig::new(5, 16, 3, 13, 0.95, 11).with_noise(0.05);
        let (pools, ex) = synth_dataset(&cfg).unwrap();
        for (pool, e) in pools.iter().zip(&ex) {
            let kern = build_kernel(&pool.embeddings).unwrap();
            let det = det_submatrix(&kern, &e.positives).unwrap();
            assert!(det >= 0.9, "gold det {det}");
        }
    }

    #[test]
    fn gold_pairwise_cosine_matches_noise_formula() {
        let noise = 0.2;
        let cfg = SynthConfig::new(3, 32, 4, 16, 0.95, 13).with_noise(noise);
        let (pools, ex) = synth_dataset(&cfg).unwrap();
        let expected = noise * noise / (1.0 + noise * noise);
        for (pool, e) in pools.iter().zip(&ex) {
            let gold = e.positives.as_slice();
            for (a, &i) in gold.iter().enumerate() {
                for &j in &gold[a + 1..] {
                    let c = cos(
                        &pool.embeddings.row(i).to_vec(),
                        &pool.embeddings.row(j).to_vec(),
                    );
                    assert!(
                        (c.abs() - expected).abs() < 1e-9,
                        "gold pair ({i},{j}) cosine {c}, expected ±{expected}"
                    );
                }
            }
        }
    }

    #[test]
    fn candidate_order_is_score_descending() {
        let cfg = SynthConfig::new(2, 32, 4, 16, 0.95, 1);
        let (pools, _) = synth_dataset(&cfg).unwrap();
        for pool in &pools {
            let s = pool.scores.as_ref().unwrap();
            for w in s.windows(2) {
                assert!(w[0] >= w[1], "scores not descending: {w:?}");
            }
            assert_eq!(s[0], 1.0);
        }
    }

    #[test]
    fn k_cycle_mixes_hops_at_constant_pool_size() {
        let cfg = SynthConfig::new(6, 32, 4, 16, 0.95, 3).with_k_cycle(vec![2, 3, 4]);
        let (pools, ex) = synth_dataset(&cfg).unwrap();
        let hops: Vec<u32> = pools.iter().map(|p| p.hop_count.unwrap()).collect();
        assert_eq!(hops, vec![2, 3, 4, 2, 3, 4]);
        for (pool, e) in pools.iter().zip(&ex) {
            assert_eq!(pool.len(), 20); // distractors pad every pool to the same size
            let k = pool.hop_count.unwrap() as usize;
            assert_eq!(pool.gold.len(), k);
            assert_eq!(e.negatives.len(), 20 - k);
        }
    }

    #[test]
    fn rejects_impossible_dimensions() {
        assert!(matches!(
            synth_dataset(&SynthConfig::new(1, 4, 5, 3, 0.5, 0)),
            Err(PipelineError::InvalidConfig(_))
        ));
        assert!(matches!(
            synth_dataset(&SynthConfig::new(1, 5, 4, 3, 0.5, 0)),
            Err(PipelineError::InvalidConfig(_))
        ));
        assert!(matches!(
            synth_dataset(&SynthConfig::new(1, 16, 3, 5, 1.5, 0)),
            Err(PipelineError::InvalidConfig(_))
        ));
    }

    #[test]
    fn split_exact_ratio_single_stratum() {
        let items: Vec<u32> = (0..10).collect();
        let (tr, va, te) = stratified_split(&items, |_| 0u8, (5, 1, 4), 42).unwrap();
        assert_eq!(tr.len(), 5);
        assert_eq!(va.len(), 1);
        assert_eq!(te.len(), 4);
        let mut all: Vec<u32> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
    }

    #[test]
    fn split_hundred_items_is_50_10_40() {
        let items: Vec<u32> = (0..100).collect();
        let (tr, va, te) = stratified_split(&items, |_| 0u8, (5, 1, 4), 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (50, 10, 40));
    }

    #[test]
    fn split_is_deterministic() {
        let items: Vec<u32> = (0..37).collect();
        let a = stratified_split(&items, |x| x % 3, (5, 1, 4), 9).unwrap();
        let b = stratified_split(&items, |x| x % 3, (5, 1, 4), 9).unwrap();
        assert_eq!(a, b);
        let c = stratified_split(&items, |x| x % 3, (5, 1, 4), 10).unwrap();
        assert_ne!(a, c); // different seed shuffles differently
    }

    #[test]
    fn split_respects_strata() {
        // two strata of 10: each must split 5/1/4 on its own
        let items: Vec<(u32, u32)> = (0..10)
            .map(|i| (2, i))
            .chain((0..10).map(|i| (3, i)))
            .collect();
        let (tr, va, te) = stratified_split(&items, |x| x.0, (5, 1, 4), 3).unwrap();
        for hop in [2, 3] {
            assert_eq!(tr.iter().filter(|x| x.0 == hop).count(), 5);
            assert_eq!(va.iter().filter(|x| x.0 == hop).count(), 1);
            assert_eq!(te.iter().filter(|x| x.0 == hop).count(), 4);
        }
    }

    #[test]
    fn split_handles_tiny_strata() {
        let items = vec![1u32];
        let (tr, va, te) = stratified_split(&items, |_| 0u8, (5, 1, 4), 1).unwrap();
        assert_eq!(tr.len() + va.len() + te.len(), 1);
        assert_eq!(tr.len(), 1); // largest remainder goes to train
        assert!(va.is_empty() && te.is_empty());
    }
}
