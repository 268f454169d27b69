//! REMIX storage cost.

use super::codec::{DIRECTORY_STRIDE, HEADER_LEN};
use crate::keys::varint_len;

/// Bytes per key of a REMIX with average anchor length `avg_key_len`, `runs`
/// runs, `cursor_bytes` per cursor offset and `group_size` keys per group,
/// with selectors of ⌈log₂ runs⌉ bits.
pub fn bytes_per_key(avg_key_len: f64, runs: usize, cursor_bytes: f64, group_size: usize) -> f64 {
    let selector_bits = if runs <= 1 {
        0.0
    } else {
        (runs as f64).log2().ceil()
    };
    (avg_key_len + runs as f64 * cursor_bytes) / group_size as f64 + selector_bits / 8.0
}

/// Same as [`bytes_per_key`] with whole-byte selectors, as stored on disk here.
pub fn bytes_per_key_byte_selectors(
    avg_key_len: f64,
    runs: usize,
    cursor_bytes: f64,
    group_size: usize,
) -> f64 {
    (avg_key_len + runs as f64 * cursor_bytes) / group_size as f64 + 1.0
}

/// Exact size of a file written by this crate for `groups` groups whose
/// anchors average `avg_anchor_len` bytes.
pub fn file_size(groups: u64, avg_anchor_len: f64, runs: usize, group_size: usize) -> f64 {
    let anchor_framing = varint_len(avg_anchor_len.round() as u64) as f64 + 4.0;
    let per_group = (3 * runs + group_size) as f64
        + avg_anchor_len
        + anchor_framing
        + 4.0 / DIRECTORY_STRIDE as f64;
    (HEADER_LEN + 12 * runs + 4) as f64 + groups as f64 * per_group
}
