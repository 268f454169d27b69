//! REMIX: a persisted sorted view over the overlapping runs of a partition.
//!
//! The view is cut into groups of `D` positions. Each group stores its first
//! key (the anchor), the cursor offset of every run at the group start, and
//! one selector byte per position naming the run that holds the key there.
//! A selector with bit 7 set marks the newest version of its user key; 127
//! pads the tail of a group.

pub mod cost;
mod codec;
mod iter;

use std::fmt;
use std::sync::Arc;

pub use iter::RemixIterator;

use crate::error::{Error, Result};
use crate::keys;
use crate::table::{BlockRef, CursorOffset, KVEntry, Table, TableId};

pub const PLACEHOLDER: u8 = 0x7f;
pub const NEWEST: u8 = 0x80;
pub const MAX_RUNS: usize = 127;
pub const MAX_GROUP_SIZE: usize = 128;
pub const DEFAULT_GROUP_SIZE: usize = 32;

/// Run named by a selector byte, or `None` for a placeholder.
#[inline]
pub fn selector_run(sel: u8) -> Option<usize> {
    let run = sel & !NEWEST;
    (run != PLACEHOLDER).then_some(run as usize)
}

#[inline]
pub fn is_newest(sel: u8) -> bool {
    sel & NEWEST != 0
}

/// How a seek locates its key inside the chosen group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    /// Binary search over the group's newest-version positions.
    #[default]
    Full,
    /// Linear scan from the anchor.
    Partial,
}

pub fn remix_file_name(id: u64) -> String {
    format!("{id:016x}.rmx")
}

pub fn parse_remix_file_name(name: &str) -> Option<u64> {
    let hex = name.strip_suffix(".rmx")?;
    (hex.len() == 16)
        .then(|| u64::from_str_radix(hex, 16).ok())
        .flatten()
}

pub struct RemixView {
    runs: Vec<Arc<Table>>,
    d: usize,
    offsets: Vec<CursorOffset>,
    selectors: Vec<u8>,
    anchor_bytes: Vec<u8>,
    anchor_ends: Vec<u32>,
    search: SearchMode,
}

impl fmt::Debug for RemixView {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemixView")
            .field("runs", &self.run_ids())
            .field("d", &self.d)
            .field("groups", &self.group_count())
            .finish()
    }
}

impl PartialEq for RemixView {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.run_ids() == other.run_ids()
            && self.offsets == other.offsets
            && self.selectors == other.selectors
            && self.anchor_bytes == other.anchor_bytes
            && self.anchor_ends == other.anchor_ends
    }
}

fn check_shape(runs: usize, d: usize) -> Result<()> {
    if runs > MAX_RUNS {
        return Err(Error::Capacity(format!("{runs} runs exceed the limit of {MAX_RUNS}")));
    }
    if !d.is_power_of_two() || d > MAX_GROUP_SIZE || d < runs {
        return Err(Error::Config(format!(
            "group size {d} must be a power of two in [{runs}, {MAX_GROUP_SIZE}]"
        )));
    }
    Ok(())
}

struct Head {
    key: Vec<u8>,
    live: bool,
}

impl RemixView {
    /// Builds the view with one merge pass over `runs`, ordered oldest first.
    pub fn build(runs: Vec<Arc<Table>>, d: usize) -> Result<RemixView> {
        check_shape(runs.len(), d)?;
        let r = runs.len();
        let mut scanners: Vec<_> = runs.iter().map(|t| t.scan()).collect();
        let mut heads: Vec<Head> = Vec::with_capacity(r);
        for s in scanners.iter_mut() {
            let key = s.current()?.map(|e| e.key.to_vec());
            heads.push(Head {
                live: key.is_some(),
                key: key.unwrap_or_default(),
            });
        }
        let total: usize = runs.iter().map(|t| t.entry_count() as usize).sum();
        let mut view = RemixView {
            d,
            offsets: Vec::with_capacity(total / d * r + r),
            selectors: Vec::with_capacity(total + d),
            anchor_bytes: Vec::new(),
            anchor_ends: Vec::with_capacity(total / d + 1),
            search: SearchMode::Full,
            runs,
        };
        let mut batch: Vec<usize> = Vec::with_capacity(r);
        let mut fill = 0usize;
        loop {
            let mut best: Option<usize> = None;
            for i in (0..r).rev() {
                if !heads[i].live {
                    continue;
                }
                match best {
                    Some(b) if heads[i].key >= heads[b].key => {}
                    _ => best = Some(i),
                }
            }
            let Some(best) = best else { break };
            batch.clear();
            for i in (0..r).rev() {
                if heads[i].live && heads[i].key == heads[best].key {
                    batch.push(i);
                }
            }
            if fill + batch.len() > d {
                view.selectors.resize(view.selectors.len() + d - fill, PLACEHOLDER);
                fill = 0;
            }
            if fill == 0 {
                view.anchor_bytes.extend_from_slice(&heads[best].key);
                view.anchor_ends.push(view.anchor_bytes.len() as u32);
                view.offsets.extend(scanners.iter().map(|s| s.position()));
            }
            for (n, &i) in batch.iter().enumerate() {
                let newest = if n == 0 { NEWEST } else { 0 };
                view.selectors.push(i as u8 | newest);
            }
            fill += batch.len();
            if fill == d {
                fill = 0;
            }
            for &i in &batch {
                let s = &mut scanners[i];
                s.advance();
                match s.current()? {
                    Some(e) => {
                        if e.key <= heads[i].key.as_slice() {
                            return Err(Error::DuplicateKey {
                                run: i,
                                key: e.key.to_vec(),
                            });
                        }
                        heads[i].key.clear();
                        heads[i].key.extend_from_slice(e.key);
                    }
                    None => heads[i].live = false,
                }
            }
        }
        if fill > 0 {
            view.selectors.resize(view.selectors.len() + d - fill, PLACEHOLDER);
        }
        Ok(view)
    }

    pub fn with_search_mode(mut self, mode: SearchMode) -> Self {
        self.search = mode;
        self
    }

    pub fn set_search_mode(&mut self, mode: SearchMode) {
        self.search = mode;
    }

    pub fn search_mode(&self) -> SearchMode {
        self.search
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    pub fn runs(&self) -> &[Arc<Table>] {
        &self.runs
    }

    pub fn run_ids(&self) -> Vec<TableId> {
        self.runs.iter().map(|t| t.id()).collect()
    }

    pub fn group_size(&self) -> usize {
        self.d
    }

    pub fn group_count(&self) -> usize {
        self.anchor_ends.len()
    }

    /// Total entries over all runs, every version counted.
    pub fn entry_count(&self) -> u64 {
        self.runs.iter().map(|t| u64::from(t.entry_count())).sum()
    }

    pub fn anchor(&self, g: usize) -> &[u8] {
        let start = if g == 0 { 0 } else { self.anchor_ends[g - 1] as usize };
        &self.anchor_bytes[start..self.anchor_ends[g] as usize]
    }

    pub fn group_offsets(&self, g: usize) -> &[CursorOffset] {
        let r = self.runs.len();
        &self.offsets[g * r..(g + 1) * r]
    }

    pub fn group_selectors(&self, g: usize) -> &[u8] {
        &self.selectors[g * self.d..(g + 1) * self.d]
    }

    /// Exchanges two selector bytes of group `g`. Only useful for checking
    /// that verification catches a damaged view.
    #[doc(hidden)]
    pub fn swap_selectors(&mut self, g: usize, a: usize, b: usize) {
        self.selectors.swap(g * self.d + a, g * self.d + b);
    }

    /// Total anchor key bytes, used by the cost model.
    pub fn anchor_key_bytes(&self) -> usize {
        self.anchor_bytes.len()
    }

    /// Run and cursor offset of in-group position `j`, found by counting the
    /// occurrences of its selector among the positions before it.
    pub fn position_offset(&self, g: usize, j: usize) -> Result<(usize, CursorOffset)> {
        if g >= self.group_count() || j >= self.d {
            return Err(Error::Addressing(format!("group {g} position {j}")));
        }
        let sels = self.group_selectors(g);
        let run = selector_run(sels[j])
            .ok_or_else(|| Error::Addressing(format!("placeholder at group {g} position {j}")))?;
        let c = sels[..j]
            .iter()
            .filter(|&&s| (s & !NEWEST) as usize == run)
            .count();
        let off = self.runs[run].advance(self.group_offsets(g)[run], c);
        Ok((run, off))
    }

    /// Entry at in-group position `j`; touches only the run named there.
    pub fn access_group_key(&self, g: usize, j: usize) -> Result<KVEntry> {
        let (run, off) = self.position_offset(g, j)?;
        self.runs[run].read_entry(off)
    }

    fn compare_at(&self, g: usize, j: usize, target: &[u8]) -> Result<std::cmp::Ordering> {
        let (run, off) = self.position_offset(g, j)?;
        let block = self.runs[run].block(off.blk)?;
        Ok(keys::compare(block.key(off.key)?, target))
    }

    /// Sorted-view position of the smallest newest-version key ≥ `target`.
    pub fn locate(&self, target: &[u8]) -> Result<Option<(usize, usize)>> {
        self.locate_traced(target, None)
    }

    /// [`Self::locate`], recording the in-group positions probed.
    pub fn locate_traced(
        &self,
        target: &[u8],
        trace: Option<&mut Vec<usize>>,
    ) -> Result<Option<(usize, usize)>> {
        let groups = self.group_count();
        if groups == 0 {
            return Ok(None);
        }
        let (mut lo, mut hi) = (0, groups);
        while lo < hi {
            let mid = (lo + hi) / 2;
            match keys::compare(self.anchor(mid), target) {
                std::cmp::Ordering::Equal => return Ok(Some((mid, 0))),
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
            }
        }
        if lo == 0 {
            return Ok(Some((0, 0)));
        }
        let g = lo - 1;
        let sels = self.group_selectors(g);
        let mut newest = [0u8; MAX_GROUP_SIZE];
        let mut n = 0;
        for (j, &s) in sels.iter().enumerate() {
            if s == PLACEHOLDER {
                break;
            }
            if is_newest(s) {
                newest[n] = j as u8;
                n += 1;
            }
        }
        let found = match self.search {
            SearchMode::Full => self.bisect_group(g, &newest[..n], target, trace)?,
            SearchMode::Partial => self.scan_group(g, &newest[..n], target)?,
        };
        if found < n {
            Ok(Some((g, newest[found] as usize)))
        } else if g + 1 < groups {
            Ok(Some((g + 1, 0)))
        } else {
            Ok(None)
        }
    }

    fn bisect_group(
        &self,
        g: usize,
        newest: &[u8],
        target: &[u8],
        mut trace: Option<&mut Vec<usize>>,
    ) -> Result<usize> {
        let (mut lo, mut hi) = (0, newest.len());
        while lo < hi {
            let mid = (lo + hi - 1) / 2;
            // position 0 holds the anchor, already known to be below target
            if mid == 0 {
                lo = 1;
                continue;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.push(newest[mid] as usize);
            }
            match self.compare_at(g, newest[mid] as usize, target)? {
                std::cmp::Ordering::Equal => return Ok(mid),
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Less => lo = mid + 1,
            }
        }
        Ok(lo)
    }

    fn scan_group(&self, g: usize, newest: &[u8], target: &[u8]) -> Result<usize> {
        let sels = self.group_selectors(g);
        let base = self.group_offsets(g);
        let mut counts = [0usize; MAX_RUNS];
        let mut blocks: Vec<Option<(u16, BlockRef)>> = vec![None; self.runs.len()];
        let mut next = 1;
        for (j, &s) in sels.iter().enumerate() {
            if next >= newest.len() {
                break;
            }
            let Some(run) = selector_run(s) else { break };
            if j == newest[next] as usize {
                let off = self.runs[run].advance(base[run], counts[run]);
                let block = match &blocks[run] {
                    Some((blk, b)) if *blk == off.blk => b,
                    _ => &blocks[run].insert((off.blk, self.runs[run].block(off.blk)?)).1,
                };
                if keys::compare(block.key(off.key)?, target).is_ge() {
                    return Ok(next);
                }
                next += 1;
            }
            counts[run] += 1;
        }
        Ok(newest.len())
    }

    /// Cursors of every run at in-group position `p`, in one pass over the
    /// selectors before it.
    pub fn cursors_at(&self, g: usize, p: usize, out: &mut Vec<CursorOffset>) {
        let mut counts = [0usize; MAX_RUNS];
        for &s in &self.group_selectors(g)[..p] {
            if let Some(run) = selector_run(s) {
                counts[run] += 1;
            }
        }
        out.clear();
        out.extend(
            self.group_offsets(g)
                .iter()
                .zip(&self.runs)
                .zip(counts)
                .map(|((&off, t), c)| t.advance(off, c)),
        );
    }

    /// Newest version of `key`: `Some(None)` for a tombstone, `None` if absent.
    pub fn point_get(&self, key: &[u8]) -> Result<Option<Option<Vec<u8>>>> {
        let Some((g, p)) = self.locate(key)? else {
            return Ok(None);
        };
        let (run, off) = self.position_offset(g, p)?;
        let block = self.runs[run].block(off.blk)?;
        let e = block.entry(off.key)?;
        if keys::compare(e.key, key).is_eq() {
            Ok(Some(e.value.map(<[u8]>::to_vec)))
        } else {
            Ok(None)
        }
    }

    pub fn iter(self: &Arc<Self>) -> RemixIterator {
        RemixIterator::new(self.clone())
    }

    pub fn seek(self: &Arc<Self>, target: &[u8]) -> Result<RemixIterator> {
        let mut it = self.iter();
        it.seek(target)?;
        Ok(it)
    }
}
