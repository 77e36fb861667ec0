//! Execution helpers for the data-parallel loops.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it, or
//! inside [`sequential`], they run on the calling thread. Results are always
//! collected in input order, and callers fold them sequentially, so the two
//! paths produce bit-identical floating-point results.

use std::cell::Cell;
use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of events processed per work item in event-level reductions.
pub const EVENT_BLOCK: usize = 1024;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

struct Restore(bool);

impl Drop for Restore {
    fn drop(&mut self) {
        FORCE_SEQUENTIAL.with(|f| f.set(self.0));
    }
}

/// Runs `f` with every helper in this module forced onto the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|flag| flag.replace(true));
    let _restore = Restore(prev);
    f()
}

/// Whether the helpers will currently fan out to the rayon pool.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(|f| f.get())
}

pub(crate) fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

pub(crate) fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Splits `0..len` into consecutive ranges of at most `size` elements. The
/// split depends only on `len`, never on the thread count.
pub(crate) fn blocks(len: usize, size: usize) -> Vec<Range<usize>> {
    let size = size.max(1);
    (0..len.div_ceil(size))
        .map(|b| b * size..((b + 1) * size).min(len))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_cover_range() {
        let b = blocks(10, 4);
        assert_eq!(b, vec![0..4, 4..8, 8..10]);
        assert!(blocks(0, 4).is_empty());
    }

    #[test]
    fn sequential_flag_is_scoped() {
        let inside = sequential(is_parallel);
        assert!(!inside);
        assert_eq!(is_parallel(), cfg!(feature = "parallel"));
    }

    #[test]
    fn map_preserves_order() {
        let v: Vec<usize> = (0..1000).collect();
        let par = map(&v, |x| x * 2);
        let seq = sequential(|| map(&v, |x| x * 2));
        assert_eq!(par, seq);
        assert_eq!(map_range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
