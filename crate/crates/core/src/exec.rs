//! Order-preserving batch execution helpers.
//!
//! Every batch loop in the crate (candidate scoring, per-sentence viewpoint
//! calls, augmentation pools, metric suites) funnels through [`map_ordered`],
//! which runs on the rayon thread pool when the `parallel` feature is enabled
//! and degrades to plain sequential iteration otherwise. Output order always
//! matches input order, so results are byte-identical across both modes.
//!
//! The `_seq`/`_par` variants stay public so benchmarks can compare the two
//! paths inside a single build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, preserving order. Parallel when the `parallel`
/// feature is on, sequential otherwise.
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_ordered_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_ordered_seq(items, f)
    }
}

/// Sequential map, always available.
pub fn map_ordered_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

/// Rayon-backed map; result order matches input order.
#[cfg(feature = "parallel")]
pub fn map_ordered_par<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}
