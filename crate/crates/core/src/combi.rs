//! Combination counting and enumeration shared by the exact MAP oracle and
//! negative-subset construction.

/// Number of k-combinations of n items, saturating at `cap + 1` so callers
/// can test `> cap` without overflow.
pub(crate) fn binomial_capped(n: usize, k: usize, cap: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        // Exact at every step: acc * (n-k+i) is divisible by i here.
        acc = acc * (n - k + i) as u128 / i as u128;
        if acc > cap as u128 {
            return cap.saturating_add(1);
        }
    }
    acc as u64
}

/// Visit every k-combination of `0..n` in lexicographic order.
pub(crate) fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    if k == 0 {
        f(&[]);
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // Find the rightmost slot that can still advance.
        let mut pos = k;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] != pos + n - k {
                break;
            }
        }
        idx[pos] += 1;
        for t in (pos + 1)..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_small_binomials() {
        assert_eq!(binomial_capped(3, 2, 100), 3);
        assert_eq!(binomial_capped(18, 4, 10_000), 3060);
        assert_eq!(binomial_capped(5, 0, 100), 1);
        assert_eq!(binomial_capped(4, 5, 100), 0);
    }

    #[test]
    fn saturates_above_cap() {
        assert_eq!(binomial_capped(40, 20, 5000), 5001);
    }

    #[test]
    fn enumerates_lexicographically() {
        let mut seen = Vec::new();
        for_each_combination(3, 2, |c| seen.push(c.to_vec()));
        assert_eq!(seen, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
    }

    #[test]
    fn enumeration_count_matches_binomial() {
        let mut count = 0u64;
        for_each_combination(9, 4, |_| count += 1);
        assert_eq!(count, binomial_capped(9, 4, u64::MAX - 1));
    }
}
