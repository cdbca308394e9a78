//! Replicate scheduling.
//!
//! All Monte Carlo loops go through [`map_indexed`]: work item `i` is computed
//! from `i` alone and results come back in index order, so reductions over the
//! returned vector are identical for every schedule and thread count.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schedule {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    /// Rayon work stealing on the current thread pool.
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

pub fn map_indexed<T, F>(schedule: Schedule, range: Range<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match schedule {
        Schedule::Sequential => range.map(f).collect(),
        #[cfg(feature = "parallel")]
        Schedule::Parallel => {
            use rayon::prelude::*;
            range.into_par_iter().map(f).collect()
        }
    }
}

/// Like [`map_indexed`] with a per-worker scratch value built by `init`.
/// The scratch must not carry information between items.
pub fn map_indexed_init<T, S, I, F>(schedule: Schedule, range: Range<usize>, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    match schedule {
        Schedule::Sequential => {
            let mut scratch = init();
            range.map(|i| f(&mut scratch, i)).collect()
        }
        #[cfg(feature = "parallel")]
        Schedule::Parallel => {
            use rayon::prelude::*;
            range.into_par_iter().map_init(&init, |s, i| f(s, i)).collect()
        }
    }
}

/// Sum in a fixed binary tree over the slice positions.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
