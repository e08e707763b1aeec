//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves the order of its results, so outputs are identical
//! whichever execution mode is active. Reductions across work items are never
//! performed inside the parallel region.

use std::sync::atomic::{AtomicU8, Ordering};

/// Execution mode for the data-parallel helpers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(1);

/// Select the execution mode process-wide. `Parallel` silently degrades to
/// `Sequential` when the crate is built without the `parallel` feature.
pub fn set_exec(exec: Exec) {
    MODE.store(matches!(exec, Exec::Parallel) as u8, Ordering::Relaxed);
}

/// The mode that will actually be used.
pub fn current_exec() -> Exec {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 1 {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Run `f` on each `chunk`-sized piece of `data`, passing the chunk index.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    assert!(chunk > 0, "chunk size must be positive");
    #[cfg(feature = "parallel")]
    if current_exec() == Exec::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Evaluate `f(0..n)` and collect the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if current_exec() == Exec::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Map over a slice, preserving order.
pub fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Send + Sync,
{
    map_indexed(items.len(), |i| f(&items[i]))
}
