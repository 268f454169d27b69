use std::ops::Bound;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_skiplist::SkipMap;
use parking_lot::RwLock;

use crate::error::{Error, Result};

/// Buffered value (or tombstone) with its update counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemEntry {
    pub value: Option<Vec<u8>>,
    pub count: u8,
}

impl MemEntry {
    pub fn is_tombstone(&self) -> bool {
        self.value.is_none()
    }
}

const ENTRY_OVERHEAD: usize = 32;

/// Ordered in-memory write buffer. One writer at a time; readers may run
/// concurrently.
#[derive(Default)]
pub struct MemTable {
    map: SkipMap<Vec<u8>, MemEntry>,
    sealed: AtomicBool,
    bytes: AtomicUsize,
}

impl MemTable {
    pub fn new() -> Self {
        Self::default()
    }

    fn charge(&self, key: &[u8], old: Option<&MemEntry>, new: &MemEntry) {
        let new_len = new.value.as_ref().map_or(0, Vec::len);
        match old {
            Some(o) => {
                let old_len = o.value.as_ref().map_or(0, Vec::len);
                if new_len >= old_len {
                    self.bytes.fetch_add(new_len - old_len, Ordering::Relaxed);
                } else {
                    self.bytes.fetch_sub(old_len - new_len, Ordering::Relaxed);
                }
            }
            None => {
                self.bytes
                    .fetch_add(key.len() + new_len + ENTRY_OVERHEAD, Ordering::Relaxed);
            }
        }
    }

    /// Inserts or replaces `key`, bumping its counter. Returns the new count.
    pub fn put(&self, key: &[u8], value: Option<&[u8]>) -> Result<u8> {
        if self.is_sealed() {
            return Err(Error::Sealed);
        }
        let old = self.map.get(key).map(|e| e.value().clone());
        let entry = MemEntry {
            value: value.map(<[u8]>::to_vec),
            count: old.as_ref().map_or(1, |o| o.count.saturating_add(1)),
        };
        let count = entry.count;
        self.charge(key, old.as_ref(), &entry);
        self.map.insert(key.to_vec(), entry);
        Ok(count)
    }

    /// Sets `key` to exactly `entry`, as replayed from the log.
    pub fn restore(&self, key: &[u8], entry: MemEntry) {
        let old = self.map.get(key).map(|e| e.value().clone());
        self.charge(key, old.as_ref(), &entry);
        self.map.insert(key.to_vec(), entry);
    }

    /// Puts back a hot key skipped by compaction with its counter halved.
    /// A newer version already buffered keeps its value and absorbs the
    /// halved count. Returns the resulting entry.
    pub fn reinsert_excluded(&self, key: &[u8], value: Option<&[u8]>, old_count: u8) -> MemEntry {
        let half = old_count / 2;
        let entry = match self.map.get(key) {
            Some(e) => MemEntry {
                value: e.value().value.clone(),
                count: e.value().count.saturating_add(half),
            },
            None => MemEntry {
                value: value.map(<[u8]>::to_vec),
                count: half,
            },
        };
        self.restore(key, entry.clone());
        entry
    }

    pub fn get(&self, key: &[u8]) -> Option<MemEntry> {
        self.map.get(key).map(|e| e.value().clone())
    }

    /// First entry with key inside `bound` or above it.
    pub fn lower_bound(&self, bound: Bound<&[u8]>) -> Option<(Vec<u8>, MemEntry)> {
        self.map
            .lower_bound(bound)
            .map(|e| (e.key().clone(), e.value().clone()))
    }

    pub fn seal(&self) {
        self.sealed.store(true, Ordering::SeqCst);
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Approximate memory held by keys and values.
    pub fn approximate_bytes(&self) -> usize {
        self.bytes.load(Ordering::Relaxed)
    }

    /// Sorted copy of the contents.
    pub fn entries(&self) -> Vec<(Vec<u8>, MemEntry)> {
        self.map
            .iter()
            .map(|e| (e.key().clone(), e.value().clone()))
            .collect()
    }
}

/// The active MemTable and at most one immutable MemTable awaiting flush.
#[derive(Default)]
pub struct MemTables {
    inner: RwLock<(Arc<MemTable>, Option<Arc<MemTable>>)>,
}

impl MemTables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_active(active: MemTable) -> Self {
        MemTables {
            inner: RwLock::new((Arc::new(active), None)),
        }
    }

    pub fn active(&self) -> Arc<MemTable> {
        self.inner.read().0.clone()
    }

    pub fn immutable(&self) -> Option<Arc<MemTable>> {
        self.inner.read().1.clone()
    }

    pub fn both(&self) -> (Arc<MemTable>, Option<Arc<MemTable>>) {
        self.inner.read().clone()
    }

    /// Seals the active table, makes it the immutable one and installs a
    /// fresh active table. Fails with `Busy` while an immutable table is
    /// still pending.
    pub fn freeze_and_swap(&self) -> Result<Arc<MemTable>> {
        let mut g = self.inner.write();
        if g.1.is_some() {
            return Err(Error::Busy);
        }
        let frozen = std::mem::take(&mut g.0);
        frozen.seal();
        g.1 = Some(frozen.clone());
        Ok(frozen)
    }

    /// Drops the immutable table once its contents are persisted.
    pub fn release_immutable(&self) {
        self.inner.write().1 = None;
    }

    /// Newest buffered state of `key`: active first, then immutable.
    pub fn get(&self, key: &[u8]) -> Option<MemEntry> {
        let (active, imm) = self.both();
        active.get(key).or_else(|| imm.and_then(|t| t.get(key)))
    }
}
