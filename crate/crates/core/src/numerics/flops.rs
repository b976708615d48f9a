//! Per-thread multiply-add counter, incremented by the matrix product kernel.

use std::cell::Cell;

thread_local! {
    static MULTIPLY_ADDS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn record(n: u64) {
    MULTIPLY_ADDS.with(|c| c.set(c.get() + n));
}

/// Multiply-adds recorded on this thread since the last [`reset`].
pub fn read() -> u64 {
    MULTIPLY_ADDS.with(Cell::get)
}

pub fn reset() {
    MULTIPLY_ADDS.with(|c| c.set(0));
}

/// Runs `f` and returns its result with the multiply-adds it performed.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = read();
    let out = f();
    (out, read() - before)
}
