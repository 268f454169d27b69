use std::fs::File;

use super::format::{encode_block, encode_entry, entry_len, Footer, MAX_BLOCK_ENTRIES, MAX_UNITS, UNIT};
use crate::env::{Env, WriteKind};
use crate::error::{Error, Result};

/// Destination of a table or REMIX file being written.
pub trait FileSink {
    fn write(&mut self, buf: &[u8]) -> Result<()>;
}

impl FileSink for Vec<u8> {
    fn write(&mut self, buf: &[u8]) -> Result<()> {
        self.extend_from_slice(buf);
        Ok(())
    }
}

/// Buffered, accounted writer over an [`Env`] file.
pub struct EnvSink {
    env: Env,
    file: File,
    name: String,
    kind: WriteKind,
    buf: Vec<u8>,
}

const SINK_BUFFER: usize = 256 * 1024;

impl EnvSink {
    pub fn new(env: Env, file: File, name: String, kind: WriteKind) -> Self {
        EnvSink {
            env,
            file,
            name,
            kind,
            buf: Vec::with_capacity(SINK_BUFFER),
        }
    }

    fn drain(&mut self) -> Result<()> {
        if !self.buf.is_empty() {
            self.env.append(&mut self.file, &self.buf)?;
            self.env
                .stats()
                .record(self.kind, &self.name, self.buf.len() as u64);
            self.buf.clear();
        }
        Ok(())
    }

    /// Flushes buffered bytes and syncs the file.
    pub fn finish(mut self) -> Result<File> {
        self.drain()?;
        self.env.sync(&self.file)?;
        Ok(self.file)
    }
}

impl FileSink for EnvSink {
    fn write(&mut self, buf: &[u8]) -> Result<()> {
        self.buf.extend_from_slice(buf);
        if self.buf.len() >= SINK_BUFFER {
            self.drain()?;
        }
        Ok(())
    }
}

/// Streams sorted entries into the table layout.
pub struct TableBuilder<S: FileSink> {
    sink: S,
    max_file_size: u64,
    counts: Vec<u8>,
    entry_count: u32,
    smallest: Option<Vec<u8>>,
    last_key: Vec<u8>,
    pending: Vec<u8>,
    ends: Vec<usize>,
    scratch: Vec<u8>,
}

impl<S: FileSink> TableBuilder<S> {
    pub fn new(sink: S, max_file_size: u64) -> Self {
        TableBuilder {
            sink,
            max_file_size,
            counts: Vec::new(),
            entry_count: 0,
            smallest: None,
            last_key: Vec::new(),
            pending: Vec::with_capacity(UNIT),
            ends: Vec::with_capacity(MAX_BLOCK_ENTRIES),
            scratch: Vec::with_capacity(UNIT),
        }
    }

    pub fn entry_count(&self) -> u32 {
        self.entry_count
    }

    pub fn is_empty(&self) -> bool {
        self.entry_count == 0
    }

    /// Data bytes committed so far, counting a partially filled block as full.
    pub fn data_size(&self) -> u64 {
        let pending = usize::from(!self.ends.is_empty());
        ((self.counts.len() + pending) * UNIT) as u64
    }

    /// Appends an entry. Returns `Ok(false)` without consuming it when the
    /// entry would push the file past its size limit.
    pub fn add(&mut self, key: &[u8], value: Option<&[u8]>) -> Result<bool> {
        if self.entry_count > 0 && key <= self.last_key.as_slice() {
            return Err(Error::Unsorted {
                prev: self.last_key.clone(),
                next: key.to_vec(),
            });
        }
        let elen = entry_len(key, value);
        if key.len() > u32::MAX as usize || value.is_some_and(|v| v.len() > u32::MAX as usize) {
            return Err(Error::EntryTooLarge {
                size: elen,
                limit: u32::MAX as usize,
            });
        }
        let jumbo = 2 + elen > UNIT;
        let fits_pending = !jumbo
            && self.ends.len() < MAX_BLOCK_ENTRIES
            && 2 * (self.ends.len() + 1) + self.pending.len() + elen <= UNIT;
        let pending_units = usize::from(!self.ends.is_empty());
        let units_after = if fits_pending {
            self.counts.len() + 1
        } else {
            self.counts.len() + pending_units + (2 + elen).div_ceil(UNIT)
        };
        if units_after > MAX_UNITS || (units_after * UNIT) as u64 > self.max_file_size {
            if self.entry_count == 0 {
                return Err(Error::EntryTooLarge {
                    size: elen,
                    limit: self.max_file_size.min((MAX_UNITS * UNIT) as u64) as usize,
                });
            }
            return Ok(false);
        }
        if !fits_pending {
            self.flush_block()?;
        }
        encode_entry(&mut self.pending, key, value);
        self.ends.push(self.pending.len());
        if jumbo {
            self.flush_block()?;
        }
        if self.entry_count == 0 {
            self.smallest = Some(key.to_vec());
        }
        self.last_key.clear();
        self.last_key.extend_from_slice(key);
        self.entry_count += 1;
        Ok(true)
    }

    fn flush_block(&mut self) -> Result<()> {
        if self.ends.is_empty() {
            return Ok(());
        }
        self.scratch.clear();
        let units = encode_block(&mut self.scratch, &self.pending, &self.ends);
        self.sink.write(&self.scratch)?;
        self.counts.push(self.ends.len() as u8);
        self.counts.extend(std::iter::repeat_n(0, units - 1));
        self.pending.clear();
        self.ends.clear();
        Ok(())
    }

    pub fn finish(mut self) -> Result<(S, Footer)> {
        self.flush_block()?;
        let footer = Footer {
            counts: self.counts,
            entry_count: self.entry_count,
            largest: (self.entry_count > 0).then_some(self.last_key),
            smallest: self.smallest,
        };
        self.sink.write(&footer.encode())?;
        Ok((self.sink, footer))
    }
}
