use std::cmp::Ordering;
use std::ops::Bound;
use std::sync::Arc;

use super::StoreVersion;
use crate::error::Result;
use crate::memwal::{MemEntry, MemTable};
use crate::remix::RemixIterator;
use crate::table::KVEntry;

/// Range iterator merging the active MemTable, the immutable MemTable and
/// the partitions of a pinned version. Newer sources shadow older ones and
/// deleted keys are skipped.
pub struct StoreIterator {
    version: Arc<StoreVersion>,
    tables: [Option<Arc<MemTable>>; 2],
    heads: [Option<(Vec<u8>, MemEntry)>; 2],
    part: usize,
    remix: Option<RemixIterator>,
    remix_head: Option<KVEntry>,
    current: Option<(Vec<u8>, Vec<u8>)>,
}

impl StoreIterator {
    pub(super) fn new(
        version: Arc<StoreVersion>,
        active: Arc<MemTable>,
        immutable: Option<Arc<MemTable>>,
    ) -> Self {
        StoreIterator {
            version,
            tables: [Some(active), immutable],
            heads: [None, None],
            part: 0,
            remix: None,
            remix_head: None,
            current: None,
        }
    }

    pub fn version(&self) -> &Arc<StoreVersion> {
        &self.version
    }

    /// Moves to the first live key not below `target`.
    pub fn seek(&mut self, target: &[u8]) -> Result<()> {
        for (head, t) in self.heads.iter_mut().zip(&self.tables) {
            *head = t.as_ref().and_then(|t| t.lower_bound(Bound::Included(target)));
        }
        self.part = self.version.find(target);
        self.remix = match &self.version.partitions[self.part].remix {
            Some(v) => Some(v.seek(target)?),
            None => None,
        };
        self.load_remix_head()?;
        self.settle()
    }

    pub fn valid(&self) -> bool {
        self.current.is_some()
    }

    pub fn current(&self) -> Option<(&[u8], &[u8])> {
        self.current.as_ref().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn key(&self) -> Option<&[u8]> {
        self.current.as_ref().map(|(k, _)| k.as_slice())
    }

    pub fn value(&self) -> Option<&[u8]> {
        self.current.as_ref().map(|(_, v)| v.as_slice())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Result<()> {
        self.settle()
    }

    fn load_remix_head(&mut self) -> Result<()> {
        loop {
            if let Some(it) = &mut self.remix {
                if let Some(e) = it.entry()? {
                    self.remix_head = Some(e);
                    return Ok(());
                }
            }
            self.part += 1;
            let Some(p) = self.version.partitions.get(self.part) else {
                self.remix = None;
                self.remix_head = None;
                self.part = self.version.partitions.len();
                return Ok(());
            };
            self.remix = p.remix.as_ref().map(|v| {
                let mut it = v.iter();
                it.seek_to_first();
                it
            });
        }
    }

    /// Takes the smallest key across the sources as the current entry,
    /// skipping tombstones, and advances every source past it.
    fn settle(&mut self) -> Result<()> {
        loop {
            let mut best: Option<&[u8]> = None;
            let candidates = self
                .heads
                .iter()
                .map(|h| h.as_ref().map(|(k, _)| k.as_slice()))
                .chain([self.remix_head.as_ref().map(|e| e.key.as_slice())]);
            for k in candidates.flatten() {
                if best.is_none_or(|b| k.cmp(b) == Ordering::Less) {
                    best = Some(k);
                }
            }
            let Some(best) = best.map(<[u8]>::to_vec) else {
                self.current = None;
                return Ok(());
            };
            let mut value: Option<Option<Vec<u8>>> = None;
            for (head, t) in self.heads.iter_mut().zip(&self.tables) {
                if head.as_ref().is_some_and(|(k, _)| *k == best) {
                    let (_, e) = head.take().unwrap();
                    value.get_or_insert(e.value);
                    *head = t
                        .as_ref()
                        .and_then(|t| t.lower_bound(Bound::Excluded(best.as_slice())));
                }
            }
            if self.remix_head.as_ref().is_some_and(|e| e.key == best) {
                let e = self.remix_head.take().unwrap();
                value.get_or_insert(e.value);
                if let Some(it) = &mut self.remix {
                    it.next();
                }
                self.load_remix_head()?;
            }
            if let Some(Some(v)) = value {
                self.current = Some((best, v));
                return Ok(());
            }
        }
    }
}
