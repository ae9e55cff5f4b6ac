//! Thread-local floating-point operation counter. Convolutions and matrix
//! products report `2 * multiply-accumulates` while a count is active.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

pub(crate) fn record(flops: usize) {
    COUNTER.with(|c| {
        if let Some(n) = c.get() {
            c.set(Some(n + flops as u64));
        }
    });
}

/// Runs `f` and returns its result with the operations it recorded.
pub fn count_flops<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let counted = COUNTER.with(|c| c.replace(previous)).unwrap_or(0);
    if let Some(outer) = previous {
        COUNTER.with(|c| c.set(Some(outer + counted)));
    }
    (out, counted)
}
