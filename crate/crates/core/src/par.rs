//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the mapping runs on the rayon
//! global pool; without it everything runs on the calling thread. Either
//! way the output order is the input order, and reductions are performed
//! sequentially over those ordered partials, so results are bit-identical
//! across the two builds and across thread counts.

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_range_seq(n, f)
    }
}

/// Sequential twin of [`map_range`], always available (used by benches).
pub fn map_range_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice in order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Split `0..n` into fixed-size chunks `[start, end)`.
///
/// Chunk boundaries depend only on `n` and `chunk`, never on the thread
/// count, which keeps chunked reductions deterministic.
pub fn chunks(n: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    (0..n.div_ceil(chunk))
        .map(|c| (c * chunk, ((c + 1) * chunk).min(n)))
        .collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
