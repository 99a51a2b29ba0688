//! Data-parallel mapping with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Parallelism::Parallel`] runs on the
//! rayon global pool. Without it every mode runs sequentially. Output order
//! always equals input order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Parallelism::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Maps `f` over `items` in consecutive batches of at most `batch_size`,
/// so no more than `batch_size` calls are in flight at once. Stops after the
/// first batch containing an error and returns that error.
pub fn try_map_batched<T, R, E, F>(items: &[T], batch_size: usize, mode: Parallelism, f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    let batch_size = batch_size.max(1);
    let run = || {
        let mut out = Vec::with_capacity(items.len());
        for batch in items.chunks(batch_size) {
            for result in map(batch, mode, &f) {
                out.push(result?);
            }
        }
        Ok(out)
    };
    // Batched calls are usually I/O bound, so they get a pool with one thread
    // per in-flight call instead of one per core.
    #[cfg(feature = "parallel")]
    if mode.is_parallel() && batch_size > 1 && items.len() > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(batch_size.min(items.len())).build() {
            return pool.install(run);
        }
    }
    run()
}
