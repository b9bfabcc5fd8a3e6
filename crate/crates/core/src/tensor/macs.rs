//! Thread-local multiply-accumulate counters for the matrix kernels.
//!
//! Plain matrix products (projections) and batched products (attention score
//! and mixing products) are tallied separately so attention cost can be
//! measured from an actual execution.

use std::cell::Cell;

thread_local! {
    static MATMUL: Cell<u64> = const { Cell::new(0) };
    static BMM: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacCount {
    pub matmul: u64,
    pub batched: u64,
}

pub(crate) fn record_matmul(n: u64) {
    MATMUL.with(|c| c.set(c.get() + n));
}

pub(crate) fn record_bmm(n: u64) {
    BMM.with(|c| c.set(c.get() + n));
}

pub fn reset() {
    MATMUL.with(|c| c.set(0));
    BMM.with(|c| c.set(0));
}

pub fn snapshot() -> MacCount {
    MacCount {
        matmul: MATMUL.with(Cell::get),
        batched: BMM.with(Cell::get),
    }
}

/// Count the MACs performed by `f` on this thread.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, MacCount) {
    let before = snapshot();
    let out = f();
    let after = snapshot();
    (
        out,
        MacCount {
            matmul: after.matmul - before.matmul,
            batched: after.batched - before.batched,
        },
    )
}
