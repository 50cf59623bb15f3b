//! Data-parallel execution helpers.
//!
//! The pipeline's hot loops (simulation shots, per-sample gradients, ensemble
//! members, per-image metrics) are embarrassingly parallel over an index.
//! `ordered_map` runs them on rayon when the `parallel` feature is enabled
//! and sequentially otherwise. Results are collected in index order and any
//! reduction happens afterwards in a fixed order, so outputs are bit-identical
//! regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, preserving index order in the result.
#[cfg(feature = "parallel")]
pub fn ordered_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving index order in the result.
#[cfg(not(feature = "parallel"))]
pub fn ordered_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    ordered_map_seq(n, f)
}

/// Sequential twin of [`ordered_map`]. Always available; the benchmark suite
/// uses it as the baseline when comparing against the rayon path.
pub fn ordered_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Configures the global worker pool from the `DIFFSOS_THREADS` env var.
///
/// A no-op when the variable is unset, unparsable, or the pool is already
/// built. Call once at process start.
pub fn init_thread_cap() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("DIFFSOS_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}
