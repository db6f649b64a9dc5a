//! Deterministic grid reductions.
//!
//! All sums over grid points use a fixed pairwise (tree) order: the index
//! range is split into fixed-size blocks, each block is summed by recursive
//! halving, and the block partials are combined by the same tree. Blocks may
//! be computed in parallel; the result is bit-identical for any thread count.

use rayon::prelude::*;

/// Block size for parallel reductions. Fixed so the reduction tree does not
/// depend on the number of worker threads.
pub const BLOCK: usize = 8192;

/// Pairwise (tree) sum of a slice, sequential.
pub fn tree_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        let mut s = 0.0;
        for &v in values {
            s += v;
        }
        return s;
    }
    let mid = values.len() / 2;
    tree_sum(&values[..mid]) + tree_sum(&values[mid..])
}

/// Parallel deterministic sum of a slice.
pub fn par_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        return tree_sum(values);
    }
    let partials: Vec<f64> = values.par_chunks(BLOCK).map(tree_sum).collect();
    tree_sum(&partials)
}

/// Parallel deterministic sum of `f(i)` for i in 0..len.
pub fn par_sum_fn<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let blocks = len.div_ceil(BLOCK);
    let partials: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * BLOCK;
            let hi = (lo + BLOCK).min(len);
            tree_sum_fn(lo, hi, &f)
        })
        .collect();
    tree_sum(&partials)
}

fn tree_sum_fn<F>(lo: usize, hi: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64,
{
    if hi - lo <= 16 {
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        return s;
    }
    let mid = lo + (hi - lo) / 2;
    tree_sum_fn(lo, mid, f) + tree_sum_fn(mid, hi, f)
}

/// Mean over a slice with the deterministic tree order.
pub fn mean(values: &[f64]) -> f64 {
    par_sum(values) / values.len() as f64
}

/// Parallel max (exact; max is associative).
pub fn par_max(values: &[f64]) -> f64 {
    values
        .par_chunks(BLOCK)
        .map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

/// Parallel min (exact; min is associative).
pub fn par_min(values: &[f64]) -> f64 {
    values
        .par_chunks(BLOCK)
        .map(|c| c.iter().cloned().fold(f64::INFINITY, f64::min))
        .reduce(|| f64::INFINITY, f64::min)
}

/// Parallel sup norm.
pub fn sup_norm(values: &[f64]) -> f64 {
    values
        .par_chunks(BLOCK)
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&v), 500500.0);
        assert_eq!(par_sum(&v), 500500.0);
        assert_eq!(par_sum_fn(1000, |i| (i + 1) as f64), 500500.0);
    }

    #[test]
    fn par_sum_is_thread_count_independent() {
        let v: Vec<f64> = (0..100_000)
            .map(|i| ((i * 2654435761usize) % 1000) as f64 * 1e-3 + 1e-9)
            .collect();
        let pool1 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new()
            .num_threads(8)
            .build()
            .unwrap();
        let s1 = pool1.install(|| par_sum(&v));
        let s8 = pool8.install(|| par_sum(&v));
        assert_eq!(s1.to_bits(), s8.to_bits());
        let f1 = pool1.install(|| par_sum_fn(v.len(), |i| v[i]));
        let f8 = pool8.install(|| par_sum_fn(v.len(), |i| v[i]));
        assert_eq!(f1.to_bits(), f8.to_bits());
    }

    #[test]
    fn extrema() {
        let v = vec![3.0, -7.0, 2.5, 6.25, -1.0];
        assert_eq!(par_max(&v), 6.25);
        assert_eq!(par_min(&v), -7.0);
        assert_eq!(sup_norm(&v), 7.0);
    }
}
