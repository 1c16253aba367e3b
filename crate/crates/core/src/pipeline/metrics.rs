//! Rank-based retrieval metrics.
//!
//! All three metrics look only at the top `k` entries of a ranking. Items
//! are compared by equality, so the functions work on ids and on indices
//! alike. Gold sets are tiny in this domain (2–4 evidence chunks), so
//! membership tests scan the slice directly.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("gold set is empty")]
    EmptyGold,
    #[error("k must be at least 1")]
    ZeroK,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Fraction of the gold set present in the top `k` ranked items.
pub fn recall_at_k<T: PartialEq>(ranked: &[T], gold: &[T], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let top = &ranked[..k.min(ranked.len())];
    let hit = gold.iter().filter(|g| top.contains(g)).count();
    Ok(hit as f64 / gold.len() as f64)
}

/// 1.0 when any gold item appears in the top `k`, else 0.0. An empty gold
/// set cannot intersect anything, so it scores 0.0 rather than erroring.
pub fn hits_at_k<T: PartialEq>(ranked: &[T], gold: &[T], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    let top = &ranked[..k.min(ranked.len())];
    Ok(if gold.iter().any(|g| top.contains(g)) {
        1.0
    } else {
        0.0
    })
}

/// Binary-relevance NDCG over the top `k`.
///
/// DCG sums 1/log2(rank+1) over gold items at 1-based ranks; the ideal DCG
/// places min(|gold|, k) gold items at the leading ranks.
pub fn ndcg_at_k<T: PartialEq>(ranked: &[T], gold: &[T], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if gold.is_empty() {
        return Err(MetricsError::EmptyGold);
    }
    let top = &ranked[..k.min(ranked.len())];
    let mut dcg = 0.0;
    // each gold entry can be credited once, so a ranking that repeats an
    // item cannot earn gain twice for it
    let mut credited = vec![false; gold.len()];
    for (idx, item) in top.iter().enumerate() {
        let slot = gold
            .iter()
            .enumerate()
            .position(|(g, v)| !credited[g] && v == item);
        if let Some(g) = slot {
            credited[g] = true;
            dcg += 1.0 / ((idx + 2) as f64).log2();
        }
    }
    let ideal = gold.len().min(k);
    let idcg: f64 = (0..ideal).map(|idx| 1.0 / ((idx + 2) as f64).log2()).sum();
    Ok(dcg / idcg)
}

// ───────────────────────── tests ─────────────────────────
