//! Rayon/sequential dispatch for the data-parallel inner loops.
//!
//! Every use is a plain order-preserving map; reductions over the mapped
//! values stay sequential so results are bit-identical regardless of the
//! feature flag or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, on rayon when the `parallel` feature is enabled
/// and `parallel` is true. Output order always matches input order.
pub(crate) fn map_slice<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(&f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Index-space variant of [`map_slice`].
pub(crate) fn map_range<U, F>(n: usize, parallel: bool, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(&f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}
