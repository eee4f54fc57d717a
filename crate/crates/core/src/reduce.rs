//! Summation whose result does not depend on the number of worker threads.
//!
//! Input is cut into fixed-size blocks, each block is summed left to right,
//! and block partials are combined by a pairwise tree. Block boundaries depend
//! only on the input length, so any schedule gives the same bits.

use rayon::prelude::*;

const BLOCK: usize = 1024;
const PARALLEL_MIN: usize = 64 * BLOCK;

pub fn sum(xs: &[f64]) -> f64 {
    let partials: Vec<f64> = if xs.len() >= PARALLEL_MIN {
        xs.par_chunks(BLOCK).map(|c| c.iter().sum()).collect()
    } else {
        xs.chunks(BLOCK).map(|c| c.iter().sum()).collect()
    };
    tree(&partials)
}

/// Sum of `f(i)` for `i` in `0..n`, with the same blocking as [`sum`].
pub fn sum_map<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let block = |b: usize| -> f64 {
        let lo = b * BLOCK;
        let hi = (lo + BLOCK).min(n);
        (lo..hi).map(&f).sum()
    };
    let blocks = n.div_ceil(BLOCK);
    let partials: Vec<f64> = if n >= PARALLEL_MIN {
        (0..blocks).into_par_iter().map(block).collect()
    } else {
        (0..blocks).map(block).collect()
    };
    tree(&partials)
}

pub fn norm(xs: &[f64]) -> f64 {
    sum_map(xs.len(), |i| xs[i] * xs[i]).sqrt()
}

fn tree(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let (a, b) = xs.split_at(n / 2);
            tree(a) + tree(b)
        }
    }
}
