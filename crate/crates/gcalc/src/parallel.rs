//! Work distribution helpers with a sequential fallback.
//!
//! Every batch loop in the crate funnels through these functions so that the
//! `parallel` feature flag (rayon) can be switched off without touching call
//! sites. Results are collected in index order and all reductions use a fixed
//! binary tree, so outputs are bitwise identical no matter how many workers
//! participate — or whether the parallel feature is compiled in at all.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Pin the global worker-pool size. Effective at most once per process;
/// calling again with a different size fails. Results never depend on the
/// pool size, so with the `parallel` feature compiled out this is a no-op
/// that accepts any positive request.
pub fn configure_workers(n: usize) -> crate::error::Result<()> {
    if n == 0 {
        return Err(crate::error::GcalcError::Config(
            "worker count must be positive".into(),
        ));
    }
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| crate::error::GcalcError::Config(format!("worker pool: {e}")))?;
    }
    Ok(())
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<R: Send>(n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Pairwise summation over a fixed binary tree (split at the midpoint).
///
/// The result depends only on the slice contents and order, never on worker
/// count, and the tree keeps rounding error at O(log n) versus O(n) for a
/// running sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Mean via pairwise summation; `NaN` on empty input.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

/// Sample mean and standard error of the mean, both from pairwise sums.
///
/// Uses the unbiased (n-1) variance; a single observation reports zero
/// standard error.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_mean(xs);
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_parallel_map_indexed_order() {
        let v = map_indexed(100, |i| i * i);
        for (i, x) in v.iter().enumerate() {
            assert_eq!(*x, i * i);
        }
    }

    #[test]
    fn test_parallel_pairwise_sum_matches_exact() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }

    #[test]
    fn test_parallel_pairwise_sum_is_deterministic() {
        let xs: Vec<f64> = (0..12345).map(|i| (i as f64).sin()).collect();
        let a = pairwise_sum(&xs);
        let b = pairwise_sum(&xs);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn test_parallel_mean_and_stderr() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_and_stderr(&xs);
        assert!((m - 2.5).abs() < 1e-15);
        // var = 5/3, se = sqrt(5/12)
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
