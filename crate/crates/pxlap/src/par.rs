//! Order-preserving data-parallel map with a sequential fallback.
//!
//! Built with the `parallel` feature (the default) the map runs on the rayon
//! thread pool; without it, on the calling thread. Both paths return results
//! in input order, so artifacts produced from the output are byte-identical
//! across the two builds.

#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}

/// True when the build actually fans work out to a thread pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
