//! Deterministic parallel reductions.
//!
//! Work is cut into fixed-size blocks independent of the thread count, each block
//! is reduced sequentially, and block results are combined pairwise in index order.
//! Sums are therefore bit-identical for any number of workers.

use rayon::prelude::*;
use std::ops::Range;

pub const BLOCK: usize = 2048;

pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Runs `f` on consecutive ranges of `block` indices and returns the results in order.
pub fn par_blocks<T, F>(n: usize, block: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let block = block.max(1);
    let nblocks = n.div_ceil(block);
    (0..nblocks)
        .into_par_iter()
        .map(|b| f(b * block..((b + 1) * block).min(n)))
        .collect()
}

/// `sum_i f(i)` with the blocked pairwise scheme.
pub fn par_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partial = par_blocks(n, BLOCK, |r| {
        let vals: Vec<f64> = r.map(&f).collect();
        pairwise_sum(&vals)
    });
    pairwise_sum(&partial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integer_sum() {
        let v: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 49_995_000.0);
        assert_eq!(par_sum(10_000, |i| i as f64), 49_995_000.0);
        assert_eq!(par_sum(0, |_| 1.0), 0.0);
    }

    #[test]
    fn order_is_independent_of_pool_size() {
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e-3 + 1.0 / (1.0 + i as f64);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| par_sum(50_000, f));
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| par_sum(50_000, f));
        assert_eq!(one.to_bits(), many.to_bits());
    }
}
