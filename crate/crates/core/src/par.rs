//! Data-parallel building blocks used by the hot loops (assembly, sparse
//! matrix-vector products, quadrature sums).
//!
//! With the `parallel` feature (default) these run on the rayon thread pool;
//! without it they fall back to plain sequential loops. Either way the result
//! is bitwise deterministic: parallel maps write into index-ordered buffers
//! and all floating-point reductions are combined in a fixed order that does
//! not depend on the thread count.

/// Chunk length for parallel reductions. Fixed (not derived from the thread
/// count) so that partial sums are always combined in the same order.
const CHUNK: usize = 8192;

/// Below this size the thread-pool dispatch costs more than the loop.
const SEQ_CUTOFF: usize = 16_384;

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if n < SEQ_CUTOFF {
        return (0..n).map(f).collect();
    }
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Applies `f` to every element of `out`, passing the element index.
#[cfg(feature = "parallel")]
pub fn for_each_indexed<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    use rayon::prelude::*;
    if out.len() < SEQ_CUTOFF {
        for (i, x) in out.iter_mut().enumerate() {
            f(i, x);
        }
        return;
    }
    out.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_indexed<T, F>(out: &mut [T], f: F)
where
    F: Fn(usize, &mut T),
{
    for (i, x) in out.iter_mut().enumerate() {
        f(i, x);
    }
}

/// Calls `f(r, slice)` for every row r, where `slice` is
/// `values[offsets[r]..offsets[r+1]]`. Rows are processed independently, so
/// the parallel version splits the value buffer recursively along row
/// boundaries.
#[cfg(feature = "parallel")]
pub fn for_each_row_slice<F>(values: &mut [f64], offsets: &[usize], f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    fn rec<F: Fn(usize, &mut [f64]) + Sync>(
        vals: &mut [f64],
        base: usize,
        rows: std::ops::Range<usize>,
        offsets: &[usize],
        f: &F,
    ) {
        let n_rows = rows.len();
        if n_rows <= 256 {
            let mut rest = vals;
            for r in rows {
                let len = offsets[r + 1] - offsets[r];
                let (head, tail) = rest.split_at_mut(len);
                f(r, head);
                rest = tail;
            }
            return;
        }
        let mid = rows.start + n_rows / 2;
        let (a, b) = vals.split_at_mut(offsets[mid] - base);
        rayon::join(
            || rec(a, base, rows.start..mid, offsets, f),
            || rec(b, offsets[mid], mid..rows.end, offsets, f),
        );
    }
    let n_rows = offsets.len() - 1;
    if n_rows < SEQ_CUTOFF {
        for r in 0..n_rows {
            f(r, &mut values[offsets[r]..offsets[r + 1]]);
        }
        return;
    }
    rec(values, offsets[0], 0..n_rows, offsets, &f);
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_row_slice<F>(values: &mut [f64], offsets: &[usize], f: F)
where
    F: Fn(usize, &mut [f64]),
{
    for r in 0..offsets.len() - 1 {
        f(r, &mut values[offsets[r]..offsets[r + 1]]);
    }
}

/// Sum of `f(i)` for `i in 0..n`. Large sums are always combined in fixed
/// chunk order, so the result is bitwise identical across thread counts
/// and across the parallel/sequential builds.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n < 2 * CHUNK {
        return (0..n).map(f).sum();
    }
    let n_chunks = n.div_ceil(CHUNK);
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let chunk_sums: Vec<f64> = (0..n_chunks).into_par_iter().map(chunk_sum).collect();
        chunk_sums.iter().sum()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks).map(chunk_sum).sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_indexed(a.len(), |i| a[i] * b[i])
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
