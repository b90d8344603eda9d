//! Run-level data parallelism.
//!
//! With the `parallel` feature (default) independent runs are spread over
//! the rayon pool; without it they execute sequentially. Results always come
//! back in index order, so output never depends on scheduling.

/// Whether runs execute on the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// `(0..count).map(f)`, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    use rayon::prelude::*;
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_indexed_sequential(count, f)
}

/// Always sequential; used for benchmarking against [`map_indexed`].
pub fn map_indexed_sequential<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let a = map_indexed(1000, |i| i * i);
        let b = map_indexed_sequential(1000, |i| i * i);
        assert_eq!(a, b);
    }
}
