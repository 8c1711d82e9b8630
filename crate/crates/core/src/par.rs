//! Deterministic data-parallel helpers.
//!
//! Work is split into a fixed number of contiguous partitions that depends only
//! on the input length, never on the thread count. Partial results are combined
//! in partition order, so the `parallel` feature and the sequential fallback
//! produce bit-identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Upper bound on the number of partitions used by [`map_partitions`].
pub const MAX_PARTITIONS: usize = 32;
const MIN_PARTITION_LEN: usize = 1024;

fn partition_len(len: usize) -> usize {
    let by_count = len.div_ceil(MAX_PARTITIONS);
    by_count.max(MIN_PARTITION_LEN).max(1)
}

/// Applies `f` to contiguous partitions of `items` and returns the partial
/// results in partition order. The second argument to `f` is the index of the
/// first element of the partition within `items`.
pub fn map_partitions<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    if items.is_empty() {
        return Vec::new();
    }
    let len = partition_len(items.len());
    #[cfg(feature = "parallel")]
    {
        items
            .par_chunks(len)
            .enumerate()
            .map(|(c, chunk)| f(c * len, chunk))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items
            .chunks(len)
            .enumerate()
            .map(|(c, chunk)| f(c * len, chunk))
            .collect()
    }
}

/// Ordered sum of `f(index, item)` over `items`.
pub fn sum_by<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(usize, &T) -> f64 + Sync + Send,
{
    map_partitions(items, |offset, chunk| {
        chunk
            .iter()
            .enumerate()
            .map(|(i, item)| f(offset + i, item))
            .sum::<f64>()
    })
    .into_iter()
    .sum()
}

/// Element-wise map preserving order.
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}

/// Order-preserving map over an index range.
pub fn map_range<R, F>(len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}
