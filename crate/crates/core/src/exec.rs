//! Sequential or data-parallel execution of independent work items.
//!
//! With the `parallel` feature disabled every mode runs sequentially, so
//! callers never need their own `cfg` branches.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
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

impl Execution {
    /// Whether this mode actually fans out in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Like [`map`](Self::map) but on a dedicated pool of at most
    /// `workers` threads, for work that blocks on I/O.
    pub fn map_bounded<T, U, F>(self, items: &[T], workers: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel && workers > 1 && items.len() > 1 {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new()
                .num_threads(workers.min(items.len()))
                .build()
            {
                Ok(pool) => return pool.install(|| items.par_iter().map(f).collect()),
                Err(e) => tracing::warn!("falling back to sequential execution: {e}"),
            }
        }
        let _ = workers;
        items.iter().map(f).collect()
    }

    /// Applies `f` to consecutive `chunk`-sized slices, concatenating the
    /// per-chunk outputs in order.
    pub fn flat_map_chunks<T, U, F>(self, items: &[T], chunk: usize, f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(usize, &[T]) -> Vec<U> + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return items
                .par_chunks(chunk)
                .enumerate()
                .flat_map_iter(|(i, c)| f(i * chunk, c))
                .collect();
        }
        items
            .chunks(chunk)
            .enumerate()
            .flat_map(|(i, c)| f(i * chunk, c))
            .collect()
    }
}
