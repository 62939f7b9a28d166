//! Worker pool for grid cells and trajectory batches.

use cpfsim_core::exec::Executor;
use rayon::prelude::*;

pub const THREADS_ENV: &str = "CPFSIM_THREADS";

/// Rayon pool with a fixed number of workers. Results come back in index
/// order, so reductions never depend on the worker count.
pub struct Pool(rayon::ThreadPool);

impl Pool {
    pub fn new(threads: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool starts");
        Pool(pool)
    }

    pub fn threads(&self) -> usize {
        self.0.current_num_threads()
    }
}

impl Executor for Pool {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.0.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

/// `--threads`, else `CPFSIM_THREADS`, else the available parallelism.
pub fn resolve_threads(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_in_index_order() {
        let pool = Pool::new(4);
        assert_eq!(pool.map(100, |i| i * i), (0..100).map(|i| i * i).collect::<Vec<_>>());
        assert_eq!(pool.threads(), 4);
    }
}
