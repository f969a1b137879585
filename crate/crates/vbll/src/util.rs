//! Data-parallel iteration helpers.
//!
//! Per-sample evaluation (predictions, density scores, metrics inputs) is
//! embarrassingly parallel, so [`map_indices`] fans the work out with rayon
//! when the `parallel` feature is on and falls back to a plain loop
//! otherwise. Results come back in index order either way, so outputs are
//! identical — bit for bit — across both code paths; the work closure must be
//! a pure function of its index for that to hold.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, in parallel when available, preserving order.
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Map `f` over `0..n` on the current thread regardless of features — the
/// baseline the benchmark suite compares [`map_indices`] against.
pub fn map_indices_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
