//! Thin wrappers so frame-wise loops run on rayon when the `parallel`
//! feature is enabled and sequentially otherwise. Only independent chunks are
//! processed in parallel; reductions stay sequential in callers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub(crate) fn chunks_mut<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

pub(crate) fn chunks_mut_with<F>(out: &mut [f64], input: &[f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64], &[f64]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(chunk)
        .zip(input.par_chunks(chunk))
        .enumerate()
        .for_each(|(i, (o, x))| f(i, o, x));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(chunk)
        .zip(input.chunks(chunk))
        .enumerate()
        .for_each(|(i, (o, x))| f(i, o, x));
}
