//! Data-parallel map helpers.
//!
//! Batch gradients and per-video evaluation are embarrassingly parallel, but
//! every reduction in this crate must stay deterministic. Both helpers return
//! results in input order, so callers can fold sequentially and obtain
//! bit-identical output regardless of thread count or of whether the
//! `parallel` feature is enabled.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order. Runs on the rayon pool when the
/// `parallel` feature is enabled, otherwise falls back to [`ordered_map_seq`].
pub fn ordered_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ordered_map_seq(items, f)
    }
}

/// Sequential reference path for [`ordered_map`]; always available so the
/// bench suite can compare both in a single build.
pub fn ordered_map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}
