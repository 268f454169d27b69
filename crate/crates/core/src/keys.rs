//! Key ordering and the instrumented comparator.
//!
//! Every key comparison made by the table, REMIX and baseline code paths goes
//! through [`compare`], which bumps a thread-local counter. Benchmarks and
//! tests read the counter to check comparison budgets; it never affects
//! ordering.

use std::cell::Cell;
use std::cmp::Ordering;

thread_local! {
    static COMPARISONS: Cell<u64> = const { Cell::new(0) };
}

/// Bytewise lexicographic comparison, counted.
#[inline]
pub fn compare(a: &[u8], b: &[u8]) -> Ordering {
    COMPARISONS.with(|c| c.set(c.get() + 1));
    a.cmp(b)
}

/// Number of comparisons made on this thread since the last reset.
pub fn comparisons() -> u64 {
    COMPARISONS.with(|c| c.get())
}

pub fn reset_comparisons() {
    COMPARISONS.with(|c| c.set(0));
}

/// Runs `f` and returns its result together with the comparisons it made.
pub fn count_comparisons<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = comparisons();
    let out = f();
    (out, comparisons() - before)
}

pub(crate) fn put_varint(buf: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        buf.push((v as u8) | 0x80);
        v >>= 7;
    }
    buf.push(v as u8);
}

pub(crate) fn varint_len(mut v: u64) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

/// Decodes a varint at the start of `buf`, returning the value and its width.
pub(crate) fn get_varint(buf: &[u8]) -> Option<(u64, usize)> {
    let mut v = 0u64;
    for (i, &b) in buf.iter().enumerate().take(10) {
        v |= u64::from(b & 0x7f) << (7 * i);
        if b & 0x80 == 0 {
            return Some((v, i + 1));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_tracks_calls() {
        reset_comparisons();
        assert_eq!(compare(b"a", b"b"), Ordering::Less);
        assert_eq!(compare(b"", b"a"), Ordering::Less);
        assert_eq!(comparisons(), 2);
        let (_, n) = count_comparisons(|| compare(b"x", b"x"));
        assert_eq!(n, 1);
    }

    #[test]
    fn varint_round_trip() {
        for v in [0u64, 1, 127, 128, 300, 16383, 16384, u32::MAX as u64, u64::MAX] {
            let mut buf = Vec::new();
            put_varint(&mut buf, v);
            assert_eq!(buf.len(), varint_len(v));
            assert_eq!(get_varint(&buf), Some((v, buf.len())));
        }
        assert_eq!(get_varint(&[0x80, 0x80]), None);
    }
}
