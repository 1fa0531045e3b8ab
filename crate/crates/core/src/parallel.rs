//! Replication loop with a rayon backend and a sequential fallback.
//!
//! Outputs are always returned in replication order, so any reduction over
//! them is independent of scheduling.

/// How replications are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Worker pool; falls back to sequential without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "MSCP_THREADS";

/// Worker count from `MSCP_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f(0), ..., f(n - 1)` and collects the results in index order.
pub fn replicate<T, F>(n: usize, execution: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match execution {
        Execution::Sequential => (0..n as u64).map(f).collect(),
        Execution::Parallel => run_parallel(n, f),
    }
}

#[cfg(feature = "parallel")]
fn run_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let work = || (0..n as u64).into_par_iter().map(&f).collect();
    match threads_from_env().and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
        Some(pool) => pool.install(work),
        None => work(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n as u64).map(f).collect()
}
