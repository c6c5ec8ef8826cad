//! Batch execution of per-item work. The parallel path fans items out over
//! a dedicated rayon pool sized to the configured concurrency; the
//! sequential path is always available and is the only one compiled when
//! the `parallel` feature is off.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `items` with at most `threads` in flight. Output order
/// matches input order regardless of completion order.
#[cfg(feature = "parallel")]
pub fn map_bounded<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return map_sequential(items, f);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.min(items.len()))
        .build();
    match pool {
        Ok(pool) => pool.install(|| items.par_iter().map(|item| f(item)).collect()),
        Err(_) => map_sequential(items, f),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_bounded<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    map_sequential(items, f)
}
