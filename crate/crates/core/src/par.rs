//! Data-parallel helpers. With the `parallel` feature (default) work is spread
//! over the rayon pool; without it the same loops run sequentially. Output
//! order never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f)` collected in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Calls `f(row, a_row, b_row)` for each `ncols`-wide row of two buffers.
pub fn for_each_row<A, B, F>(a: &mut [A], b: &mut [B], ncols: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        a.par_chunks_mut(ncols)
            .zip(b.par_chunks_mut(ncols))
            .enumerate()
            .for_each(|(i, (ra, rb))| f(i, ra, rb));
    }
    #[cfg(not(feature = "parallel"))]
    {
        a.chunks_mut(ncols)
            .zip(b.chunks_mut(ncols))
            .enumerate()
            .for_each(|(i, (ra, rb))| f(i, ra, rb));
    }
}

/// Runs `f` with at most `threads` workers (`None` = pool default).
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> T
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
                return pool.install(f);
            }
        }
        f()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
