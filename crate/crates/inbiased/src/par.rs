//! Data-parallel helpers with a sequential fallback.
//!
//! All parallelism in this crate maps independent work items onto disjoint
//! outputs; no floating-point reduction order ever depends on the thread
//! count, so parallel and sequential execution produce bit-identical
//! results. The `parallel` feature (default on) enables rayon; without it
//! everything runs sequentially. [`force_sequential`] additionally disables
//! parallelism at runtime, which the benchmarks use to compare both paths
//! within one build.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Globally disable (or re-enable) parallel execution at runtime.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// True when work should run on the current thread only.
pub fn is_sequential() -> bool {
    if cfg!(not(feature = "parallel")) {
        return true;
    }
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Apply `f` to every element of `items`, in parallel when enabled.
pub fn for_each_mut<T, F>(items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            items
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, item)| f(i, item));
            return;
        }
    }
    for (i, item) in items.iter_mut().enumerate() {
        f(i, item);
    }
}

/// Collect `f(0..n)` preserving index order.
pub fn map_collect<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Apply `f` to equally sized disjoint chunks of `data`, in parallel when
/// enabled. `chunk` must evenly divide `data.len()`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    debug_assert!(chunk > 0 && data.len() % chunk == 0);
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
    }
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_preserves_order() {
        let v = map_collect(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let mut a: Vec<f64> = (0..256).map(|i| i as f64 * 0.37).collect();
        let mut b = a.clone();
        force_sequential(false);
        for_each_mut(&mut a, |i, x| *x = (*x).sin() + i as f64);
        force_sequential(true);
        for_each_mut(&mut b, |i, x| *x = (*x).sin() + i as f64);
        force_sequential(false);
        assert_eq!(a, b);
    }
}
