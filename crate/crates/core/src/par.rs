//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into fixed-size chunks and partial results are
//! combined left to right in chunk order, whether or not the `parallel`
//! feature is enabled. Floating-point results are therefore bit-identical
//! across thread counts and across the two builds.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per work item for row-parallel kernels.
pub const ROW_CHUNK: usize = 256;

/// Elements per partial sum in reductions.
pub const SUM_CHUNK: usize = 4096;

/// Below this many scalar operations a kernel stays on the calling thread.
#[cfg(feature = "parallel")]
const MIN_PARALLEL_WORK: usize = 1 << 15;

fn chunk_ranges(len: usize, chunk: usize) -> impl Iterator<Item = Range<usize>> + Clone {
    (0..len.div_ceil(chunk)).map(move |c| c * chunk..((c + 1) * chunk).min(len))
}

/// Fills `out` (row-major, `cols` wide) by calling `f(row_index, row_slice)`.
pub fn for_each_row<F>(out: &mut [f64], cols: usize, work_per_row: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    if cols == 0 {
        return;
    }
    let rows = out.len() / cols;
    #[cfg(feature = "parallel")]
    if rows * work_per_row.max(1) >= MIN_PARALLEL_WORK {
        out.par_chunks_mut(ROW_CHUNK * cols)
            .enumerate()
            .for_each(|(c, block)| {
                for (r, row) in block.chunks_mut(cols).enumerate() {
                    f(c * ROW_CHUNK + r, row);
                }
            });
        return;
    }
    let _ = (rows, work_per_row);
    for (r, row) in out.chunks_mut(cols).enumerate() {
        f(r, row);
    }
}

/// Maps fixed chunks of `0..len` to partial results, returned in chunk order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, work_per_item: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Send + Sync,
{
    let ranges: Vec<Range<usize>> = chunk_ranges(len, chunk).collect();
    #[cfg(feature = "parallel")]
    if len * work_per_item.max(1) >= MIN_PARALLEL_WORK && ranges.len() > 1 {
        return ranges.into_par_iter().map(f).collect();
    }
    let _ = work_per_item;
    ranges.into_iter().map(f).collect()
}

/// Deterministic chunked sum of `f(i)` over `0..len`.
pub fn sum_by<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Send + Sync,
{
    map_chunks(len, SUM_CHUNK, 1, |r| r.map(&f).sum::<f64>())
        .into_iter()
        .sum()
}

/// Elementwise map into a fresh vector.
pub fn map_elems<F>(src: &[f64], f: F) -> Vec<f64>
where
    F: Fn(f64) -> f64 + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if src.len() >= MIN_PARALLEL_WORK {
        return src.par_iter().map(|&x| f(x)).collect();
    }
    src.iter().map(|&x| f(x)).collect()
}

/// Elementwise binary map into a fresh vector.
pub fn zip_elems<F>(a: &[f64], b: &[f64], f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> f64 + Send + Sync,
{
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if a.len() >= MIN_PARALLEL_WORK {
        return a
            .par_iter()
            .zip(b.par_iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
    }
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Runs independent jobs, possibly concurrently, keeping output order.
pub fn map_jobs<I, T, F>(items: Vec<I>, f: F) -> Vec<T>
where
    I: Send,
    T: Send,
    F: Fn(I) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_ranges_cover_exactly() {
        let r: Vec<_> = chunk_ranges(10, 4).collect();
        assert_eq!(r, vec![0..4, 4..8, 8..10]);
        assert_eq!(chunk_ranges(0, 4).count(), 0);
    }

    #[test]
    fn sum_matches_chunked_sequential_order() {
        let n = 3 * SUM_CHUNK + 17;
        let f = |i: usize| ((i as f64) * 0.37).sin() * 1e3;
        let expected: f64 = chunk_ranges(n, SUM_CHUNK)
            .map(|r| r.map(f).sum::<f64>())
            .sum();
        assert_eq!(sum_by(n, f).to_bits(), expected.to_bits());
    }

    #[test]
    fn row_kernel_visits_every_row_once() {
        let cols = 3;
        let mut out = vec![0.0; 1000 * cols];
        for_each_row(&mut out, cols, 1000, |r, row| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = (r * cols + c) as f64;
            }
        });
        assert!(out.iter().enumerate().all(|(i, &v)| v == i as f64));
    }
}
