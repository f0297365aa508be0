//! Order-preserving data-parallel map. With the `parallel` feature the work
//! runs on a rayon pool sized by `TRACKODE_THREADS` (all cores when unset);
//! without it, or when a sequential run is requested, items are processed in
//! order on the calling thread. Results are always in input order, so
//! reductions over them are deterministic.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "TRACKODE_THREADS";

/// Worker count requested through [`THREADS_ENV`], if any.
pub fn requested_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    use std::sync::OnceLock;
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = requested_threads() {
            b = b.num_threads(n);
        }
        b.build().expect("thread pool")
    })
}

/// Map `f` over `items`, in parallel when available.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pool().install(|| items.par_iter().map(&f).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Map `f` over `items`, choosing the sequential path explicitly when
/// `parallel` is false.
pub fn map_with<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if parallel {
        map(items, f)
    } else {
        items.iter().map(f).collect()
    }
}

/// Whether the crate was built with the rayon backend.
pub fn available() -> bool {
    cfg!(feature = "parallel")
}
