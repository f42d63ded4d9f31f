//! Chunked data-parallel helpers.
//!
//! Work is always split into chunks whose boundaries depend only on the input
//! length, never on the number of workers. Per-chunk results come back in chunk
//! order, so any reduction the caller performs over them is reproducible. With
//! the `parallel` feature disabled the same chunks are processed sequentially.

/// Default number of rows per chunk for kernel sums and sampling.
pub const CHUNK_ROWS: usize = 64;

/// Applies `f` to each `[start, end)` range of a `0..len` split into chunks of
/// `chunk` items and returns the results in range order.
pub fn map_chunks<T, F>(len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    assert!(chunk > 0, "chunk size must be positive");
    let n_chunks = len.div_ceil(chunk);
    let range = move |c: usize| (c * chunk, ((c + 1) * chunk).min(len));

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let (s, e) = range(c);
                f(s, e)
            })
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_chunks)
            .map(|c| {
                let (s, e) = range(c);
                f(s, e)
            })
            .collect()
    }
}

/// Applies `f` to every index in `0..len`, returning results in index order.
pub fn map_indices<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Fills the rows of a row-major buffer (`cols` values per row) chunk by chunk.
/// `f` receives the first row index of the chunk and the chunk's slice.
pub fn fill_rows<F>(data: &mut [f64], cols: usize, chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    assert!(chunk > 0 && cols > 0);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk * cols)
            .enumerate()
            .for_each(|(c, block)| f(c * chunk, block));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk * cols)
            .enumerate()
            .for_each(|(c, block)| f(c * chunk, block));
    }
}

/// Sum of `values` in a fixed pairwise order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (a, b) = values.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
