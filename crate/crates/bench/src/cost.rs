//! REMIX storage cost per key and the published per-store figures.

use remixdb::remix::cost::bytes_per_key;

/// Bytes per cursor offset in the published estimates.
pub const CURSOR_BYTES: f64 = 4.0;
pub const RUNS: usize = 8;
pub const GROUP_SIZES: [usize; 3] = [16, 32, 64];

/// Bytes per key of a REMIX over `runs` runs with group size `d`.
pub fn estimate_remix_cost(avg_key_len: f64, runs: usize, cursor_bytes: f64, d: usize) -> f64 {
    assert!((1..=127).contains(&runs) && d >= 1 && avg_key_len > 0.0);
    bytes_per_key(avg_key_len, runs, cursor_bytes, d)
}

/// Index size relative to key plus value bytes.
pub fn size_ratio(avg_key_len: f64, avg_value_len: f64, runs: usize, cursor_bytes: f64, d: usize) -> f64 {
    estimate_remix_cost(avg_key_len, runs, cursor_bytes, d) / (avg_key_len + avg_value_len)
}

/// One row of the published per-store table.
#[derive(Debug, Clone, Copy)]
pub struct StoreProfile {
    pub name: &'static str,
    pub avg_key_len: f64,
    pub avg_value_len: f64,
    /// Published bytes per key at D = 16, 32, 64.
    pub published: [f64; 3],
    /// Published size ratio at D = 32, in percent.
    pub published_ratio_pct: f64,
}

pub const PROFILES: [StoreProfile; 8] = [
    StoreProfile { name: "UDB", avg_key_len: 27.1, avg_value_len: 126.7, published: [4.1, 2.2, 1.3], published_ratio_pct: 1.44 },
    StoreProfile { name: "Zippy", avg_key_len: 47.9, avg_value_len: 42.9, published: [5.4, 2.9, 1.6], published_ratio_pct: 3.16 },
    StoreProfile { name: "UP2X", avg_key_len: 10.45, avg_value_len: 46.8, published: [3.0, 1.7, 1.0], published_ratio_pct: 2.97 },
    StoreProfile { name: "USR", avg_key_len: 19.0, avg_value_len: 2.0, published: [3.6, 2.0, 1.2], published_ratio_pct: 9.38 },
    StoreProfile { name: "APP", avg_key_len: 38.0, avg_value_len: 245.0, published: [4.8, 2.6, 1.5], published_ratio_pct: 0.91 },
    StoreProfile { name: "ETC", avg_key_len: 41.0, avg_value_len: 358.0, published: [4.9, 2.7, 1.5], published_ratio_pct: 0.67 },
    StoreProfile { name: "VAR", avg_key_len: 35.0, avg_value_len: 115.0, published: [4.6, 2.5, 1.4], published_ratio_pct: 1.65 },
    StoreProfile { name: "SYS", avg_key_len: 28.0, avg_value_len: 396.0, published: [4.1, 2.3, 1.3], published_ratio_pct: 0.53 },
];

impl StoreProfile {
    pub fn cost(&self, d: usize) -> f64 {
        estimate_remix_cost(self.avg_key_len, RUNS, CURSOR_BYTES, d)
    }

    pub fn ratio_pct(&self) -> f64 {
        100.0 * size_ratio(self.avg_key_len, self.avg_value_len, RUNS, CURSOR_BYTES, 32)
    }
}
