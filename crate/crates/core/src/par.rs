//! Thin switch between rayon and sequential iteration.
//!
//! Every helper preserves input order in its output, so callers get identical
//! results with or without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether data-parallel execution is compiled in.
pub const fn enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Maps `f` over `0..n`, in parallel when enabled.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible [`map_range`]. On failure, returns the error of the lowest
/// failing index under sequential execution; under parallel execution some
/// failing index's error.
pub fn try_map_range<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential counterpart of [`try_map_range`], regardless of features.
pub fn try_map_range_serial<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    F: Fn(usize) -> Result<T, E>,
{
    (0..n).map(f).collect()
}
