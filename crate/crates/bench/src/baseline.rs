//! The merging-iterator baseline: per-run sparse block indexes, optional
//! Bloom filters and a min-heap merge over per-run cursors.
//!
//! This is also the correctness oracle for REMIX: its output is the globally
//! sorted sequence of newest versions, tombstones included.

use std::cmp::Ordering;
use std::sync::Arc;

use remixdb::keys;
use remixdb::table::{BlockRef, EntryRef};
use remixdb::{CursorOffset, KVEntry, Result, Table};

pub const BLOOM_BITS_PER_KEY: usize = 10;
pub const BLOOM_PROBES: u32 = 7;

fn hash64(key: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in key {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^ (h >> 33)
}

/// Bloom filter probed with double hashing.
#[derive(Debug, Clone)]
pub struct BloomFilter {
    words: Vec<u64>,
    bits: u64,
    probes: u32,
}

impl BloomFilter {
    pub fn new(keys: usize, bits_per_key: usize, probes: u32) -> Self {
        let bits = (keys * bits_per_key).max(64) as u64;
        BloomFilter {
            words: vec![0; bits.div_ceil(64) as usize],
            bits,
            probes,
        }
    }

    pub fn insert(&mut self, key: &[u8]) {
        let h = hash64(key);
        let (mut a, b) = (h, (h >> 32) | 1);
        for _ in 0..self.probes {
            let bit = a % self.bits;
            self.words[(bit / 64) as usize] |= 1 << (bit % 64);
            a = a.wrapping_add(b);
        }
    }

    pub fn may_contain(&self, key: &[u8]) -> bool {
        let h = hash64(key);
        let (mut a, b) = (h, (h >> 32) | 1);
        for _ in 0..self.probes {
            let bit = a % self.bits;
            if self.words[(bit / 64) as usize] & (1 << (bit % 64)) == 0 {
                return false;
            }
            a = a.wrapping_add(b);
        }
        true
    }

    /// Expected false-positive rate `(1 - e^(-k/b))^k`.
    pub fn expected_fpr(bits_per_key: usize, probes: u32) -> f64 {
        let k = f64::from(probes);
        (1.0 - (-k / bits_per_key as f64).exp()).powf(k)
    }
}

/// Sparse index over one run: the first key of every block.
pub struct RunIndex {
    table: Arc<Table>,
    blocks: Vec<u16>,
    first_keys: Vec<Vec<u8>>,
    bloom: Option<BloomFilter>,
}

impl RunIndex {
    pub fn build(table: Arc<Table>, bloom: bool) -> Result<RunIndex> {
        let mut blocks = Vec::new();
        let mut first_keys = Vec::new();
        for (blk, &c) in table.block_key_counts().iter().enumerate() {
            if c > 0 {
                blocks.push(blk as u16);
                first_keys.push(table.block(blk as u16)?.key(0)?.to_vec());
            }
        }
        let bloom = if bloom {
            let mut f = BloomFilter::new(table.entry_count() as usize, BLOOM_BITS_PER_KEY, BLOOM_PROBES);
            let mut s = table.scan();
            while let Some(e) = s.current()? {
                f.insert(e.key);
                s.advance();
            }
            Some(f)
        } else {
            None
        };
        Ok(RunIndex {
            table,
            blocks,
            first_keys,
            bloom,
        })
    }

    pub fn table(&self) -> &Arc<Table> {
        &self.table
    }

    pub fn bloom(&self) -> Option<&BloomFilter> {
        self.bloom.as_ref()
    }

    /// Cursor at the first key ≥ `target`, with the block it lies in.
    pub fn seek(&self, target: &[u8]) -> Result<Option<(CursorOffset, BlockRef)>> {
        let (mut lo, mut hi) = (0, self.first_keys.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match keys::compare(&self.first_keys[mid], target) {
                Ordering::Equal => {
                    let blk = self.blocks[mid];
                    return Ok(Some((CursorOffset::new(blk, 0), self.table.block(blk)?)));
                }
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
            }
        }
        if lo == 0 {
            return self.block_at(0);
        }
        let i = lo - 1;
        let block = self.table.block(self.blocks[i])?;
        let (mut a, mut b) = (1u8, block.count());
        while a < b {
            let mid = a + (b - a) / 2;
            if keys::compare(block.key(mid)?, target).is_lt() {
                a = mid + 1;
            } else {
                b = mid;
            }
        }
        if a < block.count() {
            Ok(Some((CursorOffset::new(self.blocks[i], a), block)))
        } else {
            self.block_at(i + 1)
        }
    }

    fn block_at(&self, i: usize) -> Result<Option<(CursorOffset, BlockRef)>> {
        match self.blocks.get(i) {
            Some(&blk) => Ok(Some((CursorOffset::new(blk, 0), self.table.block(blk)?))),
            None => Ok(None),
        }
    }

    /// Newest entry of `key` in this run, if present.
    pub fn get(&self, key: &[u8]) -> Result<Option<Option<Vec<u8>>>> {
        let Some((at, block)) = self.seek(key)? else {
            return Ok(None);
        };
        let e = block.entry(at.key)?;
        if keys::compare(e.key, key).is_eq() {
            Ok(Some(e.value.map(<[u8]>::to_vec)))
        } else {
            Ok(None)
        }
    }
}

/// Per-run indexes for a set of runs ordered oldest first.
pub struct BaselineIndex {
    runs: Vec<RunIndex>,
}

impl BaselineIndex {
    pub fn build(tables: &[Arc<Table>], bloom: bool) -> Result<BaselineIndex> {
        let runs = tables
            .iter()
            .map(|t| RunIndex::build(t.clone(), bloom))
            .collect::<Result<_>>()?;
        Ok(BaselineIndex { runs })
    }

    pub fn runs(&self) -> &[RunIndex] {
        &self.runs
    }

    pub fn has_bloom(&self) -> bool {
        self.runs.iter().all(|r| r.bloom.is_some())
    }

    /// Point lookup from the newest run to the oldest, skipping runs whose
    /// filter rules the key out. `Some(None)` is a tombstone.
    pub fn get(&self, key: &[u8]) -> Result<Option<Option<Vec<u8>>>> {
        for run in self.runs.iter().rev() {
            if run.bloom.as_ref().is_some_and(|f| !f.may_contain(key)) {
                continue;
            }
            if let Some(v) = run.get(key)? {
                return Ok(Some(v));
            }
        }
        Ok(None)
    }

    pub fn iter(&self) -> MergingIterator<'_> {
        MergingIterator::new(self)
    }

    pub fn seek(&self, target: &[u8]) -> Result<MergingIterator<'_>> {
        let mut it = self.iter();
        it.seek(target)?;
        Ok(it)
    }
}

struct Cursor {
    at: CursorOffset,
    block: Option<BlockRef>,
}

/// Min-heap merge of per-run cursors yielding each key once, at its newest
/// version.
pub struct MergingIterator<'a> {
    index: &'a BaselineIndex,
    cursors: Vec<Cursor>,
    heap: Vec<usize>,
    last: Vec<u8>,
}

impl<'a> MergingIterator<'a> {
    fn new(index: &'a BaselineIndex) -> Self {
        let cursors = index
            .runs
            .iter()
            .map(|_| Cursor {
                at: CursorOffset::EXHAUSTED,
                block: None,
            })
            .collect();
        MergingIterator {
            index,
            cursors,
            heap: Vec::with_capacity(index.runs.len()),
            last: Vec::new(),
        }
    }

    fn key_of(&self, run: usize) -> &[u8] {
        let c = &self.cursors[run];
        c.block.as_ref().unwrap().key(c.at.key).unwrap()
    }

    /// Heap order: smaller key first, newer run first on equal keys.
    fn before(&self, a: usize, b: usize) -> bool {
        match keys::compare(self.key_of(a), self.key_of(b)) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a > b,
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                return;
            }
            let mut m = l;
            if l + 1 < n && self.before(self.heap[l + 1], self.heap[l]) {
                m = l + 1;
            }
            if !self.before(self.heap[m], self.heap[i]) {
                return;
            }
            self.heap.swap(i, m);
            i = m;
        }
    }

    pub fn seek_to_first(&mut self) -> Result<()> {
        for (i, run) in self.index.runs.iter().enumerate() {
            self.cursors[i] = match run.block_at(0)? {
                Some((at, block)) => Cursor { at, block: Some(block) },
                None => Cursor { at: CursorOffset::EXHAUSTED, block: None },
            };
        }
        self.rebuild();
        Ok(())
    }

    /// Positions every run at its first key ≥ `target` and heapifies.
    pub fn seek(&mut self, target: &[u8]) -> Result<()> {
        for (i, run) in self.index.runs.iter().enumerate() {
            self.cursors[i] = match run.seek(target)? {
                Some((at, block)) => Cursor { at, block: Some(block) },
                None => Cursor { at: CursorOffset::EXHAUSTED, block: None },
            };
        }
        self.rebuild();
        Ok(())
    }

    fn rebuild(&mut self) {
        self.heap.clear();
        self.heap
            .extend((0..self.cursors.len()).filter(|&i| !self.cursors[i].at.is_exhausted()));
        for i in (0..self.heap.len() / 2).rev() {
            self.sift_down(i);
        }
    }

    pub fn valid(&self) -> bool {
        !self.heap.is_empty()
    }

    pub fn key(&self) -> Option<&[u8]> {
        self.heap.first().map(|&r| self.key_of(r))
    }

    pub fn peek(&self) -> Option<EntryRef<'_>> {
        let &r = self.heap.first()?;
        let c = &self.cursors[r];
        c.block.as_ref()?.entry(c.at.key).ok()
    }

    pub fn entry(&self) -> Option<KVEntry> {
        self.peek().map(|e| e.to_entry())
    }

    fn advance_top(&mut self) -> Result<()> {
        let r = self.heap[0];
        let table = self.index.runs[r].table();
        let c = &mut self.cursors[r];
        let next = table.advance(c.at, 1);
        if next.is_exhausted() {
            c.at = next;
            c.block = None;
            let last = self.heap.pop().unwrap();
            if !self.heap.is_empty() {
                self.heap[0] = last;
            }
        } else {
            if next.blk != c.at.blk {
                c.block = Some(table.block(next.blk)?);
            }
            c.at = next;
        }
        self.sift_down(0);
        Ok(())
    }

    /// Moves past every version of the current key.
    #[allow(clippy::should_implement_trait)]
    pub fn next(&mut self) -> Result<()> {
        if self.heap.is_empty() {
            return Ok(());
        }
        let mut last = std::mem::take(&mut self.last);
        last.clear();
        last.extend_from_slice(self.key_of(self.heap[0]));
        self.advance_top()?;
        while let Some(&r) = self.heap.first() {
            if !keys::compare(self.key_of(r), &last).is_eq() {
                break;
            }
            self.advance_top()?;
        }
        self.last = last;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use remixdb::TableId;

    fn table(id: u64, keys: &[u32], tomb: &[u32]) -> Arc<Table> {
        let entries: Vec<KVEntry> = keys
            .iter()
            .map(|&k| {
                let key = format!("{k:08}").into_bytes();
                if tomb.contains(&k) {
                    KVEntry::tombstone(key)
                } else {
                    KVEntry::put(key, format!("v{id}-{k}").into_bytes())
                }
            })
            .collect();
        Arc::new(Table::from_entries(TableId(id), entries.iter().map(KVEntry::as_ref)).unwrap())
    }

    #[test]
    fn run_seek_finds_lower_bound() {
        let keys: Vec<u32> = (0..2000).map(|i| i * 2).collect();
        let run = RunIndex::build(table(1, &keys, &[]), false).unwrap();
        for t in [0u32, 1, 2, 777, 3997, 3998] {
            let (at, block) = run.seek(format!("{t:08}").as_bytes()).unwrap().unwrap();
            let expect = t.div_ceil(2) * 2;
            assert_eq!(block.key(at.key).unwrap(), format!("{expect:08}").as_bytes());
        }
        assert!(run.seek(b"00003999").unwrap().is_none());
    }

    #[test]
    fn merge_keeps_newest_version() {
        let old = table(1, &[1, 2, 3, 5], &[]);
        let new = table(2, &[2, 4, 5], &[5]);
        let idx = BaselineIndex::build(&[old, new], true).unwrap();
        let mut it = idx.iter();
        it.seek_to_first().unwrap();
        let mut out = Vec::new();
        while let Some(e) = it.entry() {
            out.push(e);
            it.next().unwrap();
        }
        let keys: Vec<_> = out.iter().map(|e| String::from_utf8(e.key.clone()).unwrap()).collect();
        assert_eq!(keys, ["00000001", "00000002", "00000003", "00000004", "00000005"]);
        assert_eq!(out[1].value.as_deref(), Some(&b"v2-2"[..]));
        assert!(out[4].is_tombstone());
        assert_eq!(idx.get(b"00000005").unwrap(), Some(None));
        assert_eq!(idx.get(b"00000003").unwrap(), Some(Some(b"v1-3".to_vec())));
        assert_eq!(idx.get(b"00000009").unwrap(), None);
    }

    #[test]
    fn bloom_has_no_false_negatives() {
        let mut f = BloomFilter::new(1000, BLOOM_BITS_PER_KEY, BLOOM_PROBES);
        for i in 0..1000u32 {
            f.insert(&i.to_be_bytes());
        }
        assert!((0..1000u32).all(|i| f.may_contain(&i.to_be_bytes())));
    }

    #[test]
    fn expected_fpr_at_ten_bits() {
        let p = BloomFilter::expected_fpr(10, 7);
        assert!((p - 0.00819).abs() < 1e-4, "{p}");
    }
}
