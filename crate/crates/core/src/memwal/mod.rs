//! Write buffering: MemTables with per-key update counters and the
//! write-ahead log that makes them durable.

mod memtable;
mod wal;

use std::path::Path;

pub use memtable::{MemEntry, MemTable, MemTables};
pub use wal::{record_len, GcReport, Wal, WalRecord, MAX_BLOCK_RECORDS, MAX_RECORD};

use crate::env::Env;
use crate::error::Result;

/// Rebuilds a MemTable, counters included, from the log at `path`.
pub fn recover(env: &Env, path: &Path, max_bytes: u64, sync: bool) -> Result<(MemTable, Wal)> {
    let (wal, records) = Wal::recover(env, path, max_bytes, sync)?;
    let table = MemTable::new();
    for r in records {
        table.restore(
            &r.key,
            MemEntry {
                value: r.value,
                count: r.count,
            },
        );
    }
    Ok((table, wal))
}
