//! Data-parallel execution helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the pointwise loops run on rayon;
//! without it everything is sequential. Reductions always use a fixed
//! chunked tree: per-chunk partials are combined in chunk order, so results
//! are bit-identical for a given grid size no matter how many threads run.

/// Chunk length for deterministic reductions. Independent of thread count.
pub const REDUCE_CHUNK: usize = 8192;

#[cfg(feature = "parallel")]
pub use rayon::prelude::*;

/// Apply `f` to every element of `out`, passing the flat index.
pub fn fill_indexed<T: Send, F: Fn(usize) -> T + Sync>(out: &mut [T], f: F) {
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }
}

/// In-place update of every element (index passed along).
pub fn update_indexed<T: Send, F: Fn(usize, &mut T) + Sync>(out: &mut [T], f: F) {
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut().enumerate().for_each(|(i, v)| f(i, v));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, v) in out.iter_mut().enumerate() {
            f(i, v);
        }
    }
}

/// Process disjoint chunks of `data` in parallel. `f` receives the chunk
/// index and the chunk; chunk boundaries are fixed by `chunk_len`.
pub fn for_each_chunk_mut<T: Send, F: Fn(usize, &mut [T]) + Sync>(
    data: &mut [T],
    chunk_len: usize,
    f: F,
) {
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, c) in data.chunks_mut(chunk_len).enumerate() {
            f(i, c);
        }
    }
}

/// Neumaier-compensated accumulator: error stays at a few ulps regardless
/// of the term count, with a fixed summation order.
#[derive(Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Deterministic sum of `f(i)` over `0..len`: compensated per-chunk
/// partials combined in chunk order, compensated again.
pub fn sum_indexed<F: Fn(usize) -> f64 + Sync>(len: usize, f: F) -> f64 {
    let nchunks = len.div_ceil(REDUCE_CHUNK);
    let partial = |c: usize| -> f64 {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(len);
        let mut s = Compensated::default();
        for i in lo..hi {
            s.add(f(i));
        }
        s.value()
    };
    let partials: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            (0..nchunks).into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..nchunks).map(partial).collect()
        }
    };
    let mut total = Compensated::default();
    for p in partials {
        total.add(p);
    }
    total.value()
}

/// Deterministic maximum of `f(i)` over `0..len`. Returns `f64::NEG_INFINITY`
/// for an empty range.
pub fn max_indexed<F: Fn(usize) -> f64 + Sync>(len: usize, f: F) -> f64 {
    let nchunks = len.div_ceil(REDUCE_CHUNK);
    let partial = |c: usize| -> f64 {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(len);
        let mut m = f64::NEG_INFINITY;
        for i in lo..hi {
            let v = f(i);
            if v > m {
                m = v;
            }
        }
        m
    };
    let partials: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            (0..nchunks).into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..nchunks).map(partial).collect()
        }
    };
    partials.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Deterministic minimum of `f(i)` over `0..len`.
pub fn min_indexed<F: Fn(usize) -> f64 + Sync>(len: usize, f: F) -> f64 {
    -max_indexed(len, |i| -f(i))
}

/// Index attaining the maximum of `f` (first such index) together with the
/// value. Deterministic.
pub fn argmax_indexed<F: Fn(usize) -> f64 + Sync>(len: usize, f: F) -> (usize, f64) {
    let nchunks = len.div_ceil(REDUCE_CHUNK);
    let partial = |c: usize| -> (usize, f64) {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(len);
        let mut best = (lo, f64::NEG_INFINITY);
        for i in lo..hi {
            let v = f(i);
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    };
    let partials: Vec<(usize, f64)> = {
        #[cfg(feature = "parallel")]
        {
            (0..nchunks).into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..nchunks).map(partial).collect()
        }
    };
    let mut best = (0usize, f64::NEG_INFINITY);
    for p in partials {
        if p.1 > best.1 {
            best = p;
        }
    }
    best
}

/// Sequential reference implementations; the benches compare these against
/// the default (possibly parallel) versions above.
pub mod seq {
    use super::{Compensated, REDUCE_CHUNK};

    pub fn fill_indexed<T, F: Fn(usize) -> T>(out: &mut [T], f: F) {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }

    pub fn sum_indexed<F: Fn(usize) -> f64>(len: usize, f: F) -> f64 {
        let nchunks = len.div_ceil(REDUCE_CHUNK);
        let mut total = Compensated::default();
        for c in 0..nchunks {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(len);
            let mut s = Compensated::default();
            for i in lo..hi {
                s.add(f(i));
            }
            total.add(s.value());
        }
        total.value()
    }
}
