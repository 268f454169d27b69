//! Immutable sorted-run table files.
//!
//! A table carries no index or filter of its own: the per-unit key counts in
//! its footer let a reader move a [`CursorOffset`] by any number of keys
//! without touching data blocks, and REMIX supplies the search structure.

mod builder;
mod cache;
pub mod format;

use std::fmt;
use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

pub use builder::{EnvSink, FileSink, TableBuilder};
pub use cache::{BlockCache, BlockKey};
pub use format::{BlockRef, EntryRef};

use crate::env::{Env, WriteKind};
use crate::error::{Error, Result};
use format::{Footer, TRAILER_LEN, UNIT};

/// A user key with its value, or a tombstone when `value` is `None`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KVEntry {
    pub key: Vec<u8>,
    pub value: Option<Vec<u8>>,
}

impl KVEntry {
    pub fn put(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>) -> Self {
        KVEntry {
            key: key.into(),
            value: Some(value.into()),
        }
    }

    pub fn tombstone(key: impl Into<Vec<u8>>) -> Self {
        KVEntry {
            key: key.into(),
            value: None,
        }
    }

    pub fn is_tombstone(&self) -> bool {
        self.value.is_none()
    }

    pub fn as_ref(&self) -> EntryRef<'_> {
        EntryRef {
            key: &self.key,
            value: self.value.as_deref(),
        }
    }

    /// Size of the entry in the table encoding, including its offset slot.
    pub fn stored_len(&self) -> usize {
        2 + format::entry_len(&self.key, self.value.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TableId(pub u64);

impl TableId {
    pub fn file_name(&self) -> String {
        format!("{:016x}.tbl", self.0)
    }

    pub fn parse_file_name(name: &str) -> Option<TableId> {
        let hex = name.strip_suffix(".tbl")?;
        (hex.len() == 16)
            .then(|| u64::from_str_radix(hex, 16).ok())
            .flatten()
            .map(TableId)
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Position of one key in a table: a 4 KB unit and an index inside it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CursorOffset {
    pub blk: u16,
    pub key: u8,
}

impl CursorOffset {
    /// The run has no keys left.
    pub const EXHAUSTED: CursorOffset = CursorOffset {
        blk: 0xFFFF,
        key: 0xFF,
    };

    pub const fn new(blk: u16, key: u8) -> Self {
        CursorOffset { blk, key }
    }

    pub fn is_exhausted(&self) -> bool {
        *self == Self::EXHAUSTED
    }
}

impl fmt::Debug for CursorOffset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_exhausted() {
            f.write_str("EXHAUSTED")
        } else {
            write!(f, "({},{})", self.blk, self.key)
        }
    }
}

enum Storage {
    File(File),
    Memory(Arc<[u8]>),
}

static NEXT_CACHE_ID: AtomicU64 = AtomicU64::new(1);

/// Footer statistics, available without reading data blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableStats {
    pub entry_count: u32,
    pub unit_count: usize,
    pub file_size: u64,
    pub smallest_key: Option<Vec<u8>>,
    pub largest_key: Option<Vec<u8>>,
}

/// An open, immutable table file.
pub struct Table {
    id: TableId,
    storage: Storage,
    cache: Option<Arc<BlockCache>>,
    cache_id: u64,
    footer: Footer,
    file_size: u64,
    fetches: AtomicU64,
    loads: AtomicU64,
    // set once the table is no longer referenced by any installed version
    obsolete: AtomicBool,
    location: Option<(PathBuf, Env)>,
}

impl fmt::Debug for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Table")
            .field("id", &self.id)
            .field("entries", &self.footer.entry_count)
            .field("units", &self.footer.unit_count())
            .finish()
    }
}

impl Table {
    /// Writes a table file from a sorted stream, stopping before the first
    /// entry that does not fit in `max_file_size`. Consumed entries are
    /// removed from the front of `entries`.
    pub fn build<I>(
        env: &Env,
        dir: &Path,
        id: TableId,
        entries: &mut std::iter::Peekable<I>,
        max_file_size: u64,
        cache: Option<Arc<BlockCache>>,
    ) -> Result<Table>
    where
        I: Iterator<Item = KVEntry>,
    {
        let path = dir.join(id.file_name());
        let file = env.create(&path)?;
        let sink = EnvSink::new(env.clone(), file, id.file_name(), WriteKind::Table);
        let mut builder = TableBuilder::new(sink, max_file_size);
        while let Some(e) = entries.peek() {
            if !builder.add(&e.key, e.value.as_deref())? {
                break;
            }
            entries.next();
        }
        let (sink, _) = builder.finish()?;
        sink.finish()?;
        Table::open(env, dir, id, cache)
    }

    /// Opens a table file, reading only its footer.
    pub fn open(env: &Env, dir: &Path, id: TableId, cache: Option<Arc<BlockCache>>) -> Result<Table> {
        let path = dir.join(id.file_name());
        let file = match OpenOptions::new().read(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingFile(path))
            }
            Err(e) => return Err(e.into()),
        };
        let size = file.metadata()?.len();
        let name = id.file_name();
        let footer = read_footer(&name, size, |buf, off| {
            file.read_exact_at(buf, off).map_err(Error::from)
        })?;
        Ok(Table {
            id,
            storage: Storage::File(file),
            cache,
            cache_id: NEXT_CACHE_ID.fetch_add(1, Ordering::Relaxed),
            footer,
            file_size: size,
            fetches: AtomicU64::new(0),
            loads: AtomicU64::new(0),
            obsolete: AtomicBool::new(false),
            location: Some((path, env.clone())),
        })
    }

    /// Opens a table image held in memory.
    pub fn from_bytes(id: TableId, bytes: impl Into<Arc<[u8]>>) -> Result<Table> {
        let bytes: Arc<[u8]> = bytes.into();
        let name = id.file_name();
        let footer = read_footer(&name, bytes.len() as u64, |buf, off| {
            let off = off as usize;
            buf.copy_from_slice(&bytes[off..off + buf.len()]);
            Ok(())
        })?;
        Ok(Table {
            id,
            file_size: bytes.len() as u64,
            storage: Storage::Memory(bytes),
            cache: None,
            cache_id: NEXT_CACHE_ID.fetch_add(1, Ordering::Relaxed),
            footer,
            fetches: AtomicU64::new(0),
            loads: AtomicU64::new(0),
            obsolete: AtomicBool::new(false),
            location: None,
        })
    }

    /// Builds an in-memory table from sorted entries.
    pub fn from_entries<'a>(
        id: TableId,
        entries: impl IntoIterator<Item = EntryRef<'a>>,
    ) -> Result<Table> {
        let mut b = TableBuilder::new(Vec::new(), (format::MAX_UNITS * UNIT) as u64);
        for e in entries {
            if !b.add(e.key, e.value)? {
                return Err(Error::Capacity(format!("table {id} exceeds the unit limit")));
            }
        }
        let (bytes, _) = b.finish()?;
        Table::from_bytes(id, bytes)
    }

    pub fn id(&self) -> TableId {
        self.id
    }

    pub fn entry_count(&self) -> u32 {
        self.footer.entry_count
    }

    pub fn unit_count(&self) -> usize {
        self.footer.unit_count()
    }

    pub fn block_key_counts(&self) -> &[u8] {
        &self.footer.counts
    }

    pub fn file_size(&self) -> u64 {
        self.file_size
    }

    pub fn smallest_key(&self) -> Option<&[u8]> {
        self.footer.smallest.as_deref()
    }

    pub fn largest_key(&self) -> Option<&[u8]> {
        self.footer.largest.as_deref()
    }

    pub fn stats(&self) -> TableStats {
        TableStats {
            entry_count: self.footer.entry_count,
            unit_count: self.footer.unit_count(),
            file_size: self.file_size,
            smallest_key: self.footer.smallest.clone(),
            largest_key: self.footer.largest.clone(),
        }
    }

    /// Block requests served so far (cache hits included).
    pub fn block_fetches(&self) -> u64 {
        self.fetches.load(Ordering::Relaxed)
    }

    /// Block requests that went to the file.
    pub fn block_loads(&self) -> u64 {
        self.loads.load(Ordering::Relaxed)
    }

    /// Marks the file for deletion once the last handle is dropped.
    pub fn mark_obsolete(&self) {
        self.obsolete.store(true, Ordering::SeqCst);
    }

    /// Cursor at the first key, or EXHAUSTED for an empty table.
    pub fn first(&self) -> CursorOffset {
        if self.footer.entry_count == 0 {
            CursorOffset::EXHAUSTED
        } else {
            CursorOffset::new(0, 0)
        }
    }

    fn block_units(&self, blk: usize) -> usize {
        let counts = &self.footer.counts;
        1 + counts[blk + 1..].iter().take_while(|&&c| c == 0).count()
    }

    /// Fetches the block headed by unit `blk`.
    pub fn block(&self, blk: u16) -> Result<BlockRef> {
        let b = blk as usize;
        let count = *self
            .footer
            .counts
            .get(b)
            .filter(|&&c| c > 0)
            .ok_or_else(|| Error::Addressing(format!("unit {blk} of table {}", self.id)))?;
        self.fetches.fetch_add(1, Ordering::Relaxed);
        let units = self.block_units(b);
        let len = units * UNIT;
        match &self.storage {
            Storage::Memory(bytes) => Ok(BlockRef::new(bytes.clone(), b * UNIT, len, count)),
            Storage::File(file) => {
                let load = || -> Result<Arc<[u8]>> {
                    self.loads.fetch_add(1, Ordering::Relaxed);
                    let mut buf = vec![0u8; len];
                    file.read_exact_at(&mut buf, (b * UNIT) as u64)?;
                    Ok(buf.into())
                };
                let data = match &self.cache {
                    Some(cache) => {
                        let key = BlockKey {
                            table: self.cache_id,
                            unit: blk,
                        };
                        cache.get_or_load(key, load)?.0
                    }
                    None => load()?,
                };
                Ok(BlockRef::new(data, 0, len, count))
            }
        }
    }

    fn check(&self, at: CursorOffset) -> Result<()> {
        match self.footer.counts.get(at.blk as usize) {
            Some(&c) if at.key < c => Ok(()),
            _ => Err(Error::Addressing(format!(
                "{at:?} in table {} of {} units",
                self.id,
                self.footer.unit_count()
            ))),
        }
    }

    /// Reads the entry at `at`, touching exactly one block.
    pub fn read_entry(&self, at: CursorOffset) -> Result<KVEntry> {
        self.check(at)?;
        let block = self.block(at.blk)?;
        Ok(block.entry(at.key)?.to_entry())
    }

    /// Moves `at` forward by `n` keys using only the block key counts.
    pub fn advance(&self, at: CursorOffset, n: usize) -> CursorOffset {
        if at.is_exhausted() || n == 0 {
            return at;
        }
        let counts = &self.footer.counts;
        let mut blk = at.blk as usize;
        let mut k = at.key as usize + n;
        loop {
            let c = counts[blk] as usize;
            if k < c {
                return CursorOffset::new(blk as u16, k as u8);
            }
            k -= c;
            blk += 1;
            while blk < counts.len() && counts[blk] == 0 {
                blk += 1;
            }
            if blk >= counts.len() {
                return CursorOffset::EXHAUSTED;
            }
        }
    }

    /// Ordinal of the key at `at` within the table; `entry_count` if exhausted.
    pub fn rank(&self, at: CursorOffset) -> usize {
        if at.is_exhausted() {
            return self.footer.entry_count as usize;
        }
        let before: usize = self.footer.counts[..at.blk as usize]
            .iter()
            .map(|&c| c as usize)
            .sum();
        before + at.key as usize
    }

    /// Sequential reader from the first key, bypassing the block cache.
    pub fn scan(self: &Arc<Self>) -> TableScanner {
        TableScanner::new(self.clone())
    }
}

impl Drop for Table {
    fn drop(&mut self) {
        if self.obsolete.load(Ordering::SeqCst) {
            if let Some((path, env)) = &self.location {
                let _ = env.remove(path);
            }
        }
    }
}

fn read_footer(
    name: &str,
    size: u64,
    read_at: impl Fn(&mut [u8], u64) -> Result<()>,
) -> Result<Footer> {
    if size < TRAILER_LEN as u64 {
        return Err(Error::corruption(name, "file shorter than trailer"));
    }
    let mut trailer = [0u8; TRAILER_LEN];
    read_at(&mut trailer, size - TRAILER_LEN as u64)?;
    let body = Footer::body_len(name, &trailer)? as u64;
    let footer_len = body + TRAILER_LEN as u64;
    if footer_len > size || !(size - footer_len).is_multiple_of(UNIT as u64) {
        return Err(Error::corruption(name, "truncated or misaligned file"));
    }
    let units = ((size - footer_len) / UNIT as u64) as usize;
    if units > format::MAX_UNITS {
        return Err(Error::corruption(name, "too many units"));
    }
    let mut buf = vec![0u8; footer_len as usize];
    read_at(&mut buf, size - footer_len)?;
    Footer::decode(name, &buf, units)
}

const SCAN_CHUNK_UNITS: usize = 64;

/// Forward iteration over every entry of a table in key order.
pub struct TableScanner {
    table: Arc<Table>,
    pos: CursorOffset,
    chunk: Option<(usize, Arc<[u8]>)>,
    block: Option<BlockRef>,
}

impl TableScanner {
    fn new(table: Arc<Table>) -> Self {
        let pos = table.first();
        TableScanner {
            table,
            pos,
            chunk: None,
            block: None,
        }
    }

    pub fn table(&self) -> &Arc<Table> {
        &self.table
    }

    pub fn position(&self) -> CursorOffset {
        self.pos
    }

    pub fn is_done(&self) -> bool {
        self.pos.is_exhausted()
    }

    fn load_block(&mut self) -> Result<()> {
        let blk = self.pos.blk as usize;
        let counts = &self.table.footer.counts;
        let units = self.table.block_units(blk);
        let block = match &self.table.storage {
            Storage::Memory(bytes) => BlockRef::new(bytes.clone(), blk * UNIT, units * UNIT, counts[blk]),
            Storage::File(file) => {
                let in_chunk = matches!(&self.chunk, Some((start, data))
                    if blk >= *start && (blk + units) * UNIT <= start * UNIT + data.len());
                if !in_chunk {
                    let n = SCAN_CHUNK_UNITS.max(units).min(counts.len() - blk);
                    let mut buf = vec![0u8; n * UNIT];
                    file.read_exact_at(&mut buf, (blk * UNIT) as u64)?;
                    self.chunk = Some((blk, buf.into()));
                }
                let (start, data) = self.chunk.as_ref().unwrap();
                BlockRef::new(data.clone(), (blk - start) * UNIT, units * UNIT, counts[blk])
            }
        };
        self.block = Some(block);
        Ok(())
    }

    /// The entry under the scanner, or `None` once past the end.
    pub fn current(&mut self) -> Result<Option<EntryRef<'_>>> {
        if self.pos.is_exhausted() {
            return Ok(None);
        }
        if self.block.is_none() {
            self.load_block()?;
        }
        let block = self.block.as_ref().unwrap();
        block.entry(self.pos.key).map(Some)
    }

    pub fn advance(&mut self) {
        let next = self.table.advance(self.pos, 1);
        if next.blk != self.pos.blk {
            self.block = None;
        }
        self.pos = next;
    }
}
