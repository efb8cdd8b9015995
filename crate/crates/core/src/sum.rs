//! Deterministic reductions.
//!
//! All norms and quadratures in this crate reduce through [`pairwise_sum`],
//! a fixed-tree pairwise summation. The tree depends only on the slice
//! length, never on thread count, so every reduction is bit-reproducible.

const PAIRWISE_LEAF: usize = 256;

/// Pairwise (cascade) summation over a fixed binary tree.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_LEAF {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f` mapped over `0..len` without materialising the slice.
pub fn pairwise_sum_by<F: Fn(usize) -> f64 + Copy>(len: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64 + Copy>(lo: usize, hi: usize, f: F) -> f64 {
        if hi - lo <= PAIRWISE_LEAF {
            let mut acc = 0.0;
            for i in lo..hi {
                acc += f(i);
            }
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        go(lo, mid, f) + go(mid, hi, f)
    }
    if len == 0 {
        return 0.0;
    }
    go(0, len, f)
}

/// Maximum of `f` over `0..len`; NaN entries are rejected by debug assertion.
pub fn max_by<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for i in 0..len {
        let v = f(i);
        debug_assert!(!v.is_nan());
        if v > m {
            m = v;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_by_matches_slice_version() {
        let xs: Vec<f64> = (0..100_000).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let a = pairwise_sum(&xs);
        let b = pairwise_sum_by(xs.len(), |i| xs[i]);
        assert_eq!(a, b);
    }
}
