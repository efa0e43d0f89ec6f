//! Order-preserving parallel map. Results land in input order, so callers
//! get identical output for any thread count.

#[cfg(feature = "parallel")]
pub(crate) fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().with_min_len(256).map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Runs `f` on a pool of `threads` workers (0 = library default).
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send>(_threads: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}
