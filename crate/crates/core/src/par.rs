//! Execution-mode switch for the data-parallel kernels.
//!
//! With the `parallel` feature (default) kernels split their output into
//! fixed-size row blocks and process them on the rayon pool. Without it, or
//! with [`ExecMode::Sequential`], the same blocks are walked in order on the
//! calling thread. Block boundaries depend only on the problem size and the
//! pool width, so results are reproducible for a fixed thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    /// Whether this mode actually fans out (always false without the feature).
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

pub(crate) fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Rows per block when splitting `rows` across the pool.
pub(crate) fn block_rows(mode: ExecMode, rows: usize) -> usize {
    if mode.is_parallel() {
        rows.div_ceil(threads()).max(1)
    } else {
        rows.max(1)
    }
}

/// Calls `f(first_row, block)` for consecutive blocks of `rows_per_block`
/// rows of length `row_len`.
pub(crate) fn for_each_row_block<T, F>(
    mode: ExecMode,
    data: &mut [T],
    row_len: usize,
    rows_per_block: usize,
    f: F,
) where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    let chunk = (row_len * rows_per_block).max(1);
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, block)| f(i * rows_per_block, block));
        return;
    }
    let _ = mode;
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, block)| f(i * rows_per_block, block));
}

/// Maps `f` over `items`, in parallel when enabled. Output order matches input.
pub fn map_collect<I, O, F>(mode: ExecMode, items: Vec<I>, f: F) -> Vec<O>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        return items.into_par_iter().map(f).collect();
    }
    let _ = mode;
    items.into_iter().map(f).collect()
}
