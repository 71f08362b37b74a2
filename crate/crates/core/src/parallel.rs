//! Data-parallel helpers. With the `parallel` feature (default) work is spread
//! over rayon; without it, or with [`Execution::Sequential`], everything runs on
//! the calling thread. Results always come back in input order.

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

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`], but caps the number of concurrently running calls at
/// `max_in_flight` (used for remote backends).
pub fn map_bounded<T, R, F>(items: &[T], exec: Execution, max_in_flight: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel if max_in_flight > 1 => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(max_in_flight).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                Err(e) => {
                    log::warn!("thread pool unavailable ({e}); running sequentially");
                    items.iter().map(f).collect()
                }
            }
        }
        _ => items.iter().map(f).collect(),
    }
}
