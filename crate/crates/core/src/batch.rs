//! Data-parallel evaluation of independent work items.
//!
//! Every simulation, solve, and reduction in this crate is a pure function
//! of its inputs, so sweeps over scenarios or problem instances are
//! embarrassingly parallel. `batch_map` fans out over rayon when the
//! `parallel` feature is enabled; `batch_map_seq` is the sequential path
//! and is always available so the two can be benchmarked against each
//! other. Results come back in input order either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when the `parallel` feature is on.
pub fn batch_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        batch_map_seq(items, f)
    }
}

/// Sequential reference path for [`batch_map`].
pub fn batch_map_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
