use std::sync::Arc;

use super::{is_newest, selector_run, RemixView, PLACEHOLDER};
use crate::error::Result;
use crate::table::{BlockRef, CursorOffset, EntryRef, KVEntry};

/// Forward iterator over a [`RemixView`]. Moving to the next key follows
/// the selectors and performs no key comparisons.
pub struct RemixIterator {
    view: Arc<RemixView>,
    g: usize,
    p: usize,
    valid: bool,
    masked: bool,
    cursors: Vec<CursorOffset>,
    blocks: Vec<Option<(u16, BlockRef)>>,
}

impl RemixIterator {
    pub(super) fn new(view: Arc<RemixView>) -> Self {
        let r = view.run_count();
        RemixIterator {
            view,
            g: 0,
            p: 0,
            valid: false,
            masked: true,
            cursors: Vec::with_capacity(r),
            blocks: vec![None; r],
        }
    }

    /// With masking on (the default) each user key is produced once, at its
    /// newest version. Off, every version is produced, newest first.
    pub fn set_masked(&mut self, masked: bool) {
        self.masked = masked;
    }

    pub fn view(&self) -> &Arc<RemixView> {
        &self.view
    }

    pub fn valid(&self) -> bool {
        self.valid
    }

    pub fn position(&self) -> Option<(usize, usize)> {
        self.valid.then_some((self.g, self.p))
    }

    pub fn cursors(&self) -> &[CursorOffset] {
        &self.cursors
    }

    pub fn seek(&mut self, target: &[u8]) -> Result<()> {
        match self.view.locate(target)? {
            Some((g, p)) => {
                self.g = g;
                self.p = p;
                self.valid = true;
                self.view.cursors_at(g, p, &mut self.cursors);
            }
            None => self.invalidate(),
        }
        Ok(())
    }

    pub fn seek_to_first(&mut self) {
        if self.view.group_count() == 0 {
            self.invalidate();
            return;
        }
        self.g = 0;
        self.p = 0;
        self.valid = true;
        self.cursors.clear();
        self.cursors.extend_from_slice(self.view.group_offsets(0));
    }

    fn invalidate(&mut self) {
        self.valid = false;
        self.cursors.clear();
        self.cursors
            .resize(self.view.run_count(), CursorOffset::EXHAUSTED);
    }

    fn selector_byte(&self) -> u8 {
        self.view.selectors[self.g * self.view.d + self.p]
    }

    /// Run holding the current key and whether it is the newest version.
    pub fn selector(&self) -> Option<(usize, bool)> {
        if !self.valid {
            return None;
        }
        let s = self.selector_byte();
        selector_run(s).map(|r| (r, is_newest(s)))
    }

    pub fn next(&mut self) {
        if !self.valid {
            return;
        }
        let view = &self.view;
        let d = view.d;
        loop {
            let s = self.selector_byte();
            let run = (s & 0x7f) as usize;
            self.cursors[run] = view.runs[run].advance(self.cursors[run], 1);
            self.p += 1;
            if self.p == d || view.selectors[self.g * d + self.p] == PLACEHOLDER {
                self.g += 1;
                self.p = 0;
                if self.g == view.group_count() {
                    self.valid = false;
                    return;
                }
                self.cursors.copy_from_slice(view.group_offsets(self.g));
                return;
            }
            if !self.masked || is_newest(view.selectors[self.g * d + self.p]) {
                return;
            }
        }
    }

    /// The entry under the iterator, read through the current run's cursor.
    pub fn peek(&mut self) -> Result<Option<EntryRef<'_>>> {
        if !self.valid {
            return Ok(None);
        }
        let run = (self.selector_byte() & 0x7f) as usize;
        let at = self.cursors[run];
        let slot = &mut self.blocks[run];
        if !matches!(slot, Some((blk, _)) if *blk == at.blk) {
            *slot = Some((at.blk, self.view.runs[run].block(at.blk)?));
        }
        let block = &slot.as_ref().unwrap().1;
        block.entry(at.key).map(Some)
    }

    pub fn key(&mut self) -> Result<Option<&[u8]>> {
        Ok(self.peek()?.map(|e| e.key))
    }

    pub fn entry(&mut self) -> Result<Option<KVEntry>> {
        Ok(self.peek()?.map(|e| e.to_entry()))
    }
}
