//! REMIX file layout.
//!
//! ```text
//! [magic 8][version u32][R u8][D u8][group_count u32]
//! [run table: R × (table_id u64, entry_count u32)]
//! [groups: group_count × (R × (blk u16, key u8), D selector bytes)]
//! [anchors: group_count × (varint len, key, group ordinal u32)]
//! [directory: anchor-section offset u32 of every 16th anchor]
//! [crc32 u32]
//! ```

use std::path::Path;
use std::sync::Arc;

use super::{check_shape, remix_file_name, RemixView, SearchMode};
use crate::env::{Env, WriteKind};
use crate::error::{Error, Result};
use crate::keys::{get_varint, put_varint};
use crate::table::{CursorOffset, EnvSink, FileSink, Table};

pub const MAGIC: &[u8; 8] = b"RMXVIEW1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 18;
pub const DIRECTORY_STRIDE: usize = 16;

impl RemixView {
    pub fn encode(&self) -> Vec<u8> {
        let r = self.run_count();
        let g = self.group_count();
        let mut out = Vec::with_capacity(
            HEADER_LEN + 12 * r + g * (3 * r + self.d + 8) + self.anchor_bytes.len() + 4,
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(r as u8);
        out.push(self.d as u8);
        out.extend_from_slice(&(g as u32).to_le_bytes());
        for t in &self.runs {
            out.extend_from_slice(&t.id().0.to_le_bytes());
            out.extend_from_slice(&t.entry_count().to_le_bytes());
        }
        for i in 0..g {
            for off in self.group_offsets(i) {
                out.extend_from_slice(&off.blk.to_le_bytes());
                out.push(off.key);
            }
            out.extend_from_slice(self.group_selectors(i));
        }
        let anchors_start = out.len();
        let mut directory = Vec::with_capacity(g.div_ceil(DIRECTORY_STRIDE));
        for i in 0..g {
            if i % DIRECTORY_STRIDE == 0 {
                directory.push((out.len() - anchors_start) as u32);
            }
            let a = self.anchor(i);
            put_varint(&mut out, a.len() as u64);
            out.extend_from_slice(a);
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
        for d in directory {
            out.extend_from_slice(&d.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes a REMIX image over `runs`, which must be the recorded tables in
    /// the recorded order. Reads no table data.
    pub fn decode(name: &str, buf: &[u8], runs: Vec<Arc<Table>>) -> Result<RemixView> {
        let corrupt = |why: &str| Error::corruption(name, why.to_string());
        if buf.len() < HEADER_LEN + 4 || &buf[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, crc) = buf.split_at(buf.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let u32_at = |at: usize| u32::from_le_bytes(body[at..at + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(corrupt("unsupported format version"));
        }
        let r = body[12] as usize;
        let d = body[13] as usize;
        let g = u32_at(14) as usize;
        check_shape(r, d).map_err(|_| corrupt("invalid run count or group size"))?;
        if runs.len() != r {
            return Err(Error::Binding(format!(
                "{name} indexes {r} runs, {} supplied",
                runs.len()
            )));
        }
        let mut pos = HEADER_LEN;
        let fixed = 12 * r + g * (3 * r + d);
        if body.len() < pos + fixed {
            return Err(corrupt("truncated"));
        }
        for (i, t) in runs.iter().enumerate() {
            let id = u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap());
            let count = u32_at(pos + 8);
            if id != t.id().0 || count != t.entry_count() {
                return Err(Error::Binding(format!(
                    "{name} run {i} is table {id:016x} with {count} entries, got {} with {}",
                    t.id(),
                    t.entry_count()
                )));
            }
            pos += 12;
        }
        let mut offsets = Vec::with_capacity(g * r);
        let mut selectors = Vec::with_capacity(g * d);
        for _ in 0..g {
            for _ in 0..r {
                let blk = u16::from_le_bytes([body[pos], body[pos + 1]]);
                offsets.push(CursorOffset::new(blk, body[pos + 2]));
                pos += 3;
            }
            selectors.extend_from_slice(&body[pos..pos + d]);
            pos += d;
        }
        let anchors_start = pos;
        let mut anchor_bytes = Vec::new();
        let mut anchor_ends = Vec::with_capacity(g);
        let mut directory = Vec::with_capacity(g.div_ceil(DIRECTORY_STRIDE));
        for i in 0..g {
            if i % DIRECTORY_STRIDE == 0 {
                directory.push((pos - anchors_start) as u32);
            }
            let (len, n) = get_varint(&body[pos..]).ok_or_else(|| corrupt("bad anchor length"))?;
            pos += n;
            let end = pos
                .checked_add(len as usize)
                .filter(|&e| e + 4 <= body.len())
                .ok_or_else(|| corrupt("truncated anchor"))?;
            anchor_bytes.extend_from_slice(&body[pos..end]);
            anchor_ends.push(anchor_bytes.len() as u32);
            if u32_at(end) as usize != i {
                return Err(corrupt("anchor ordinal out of sequence"));
            }
            pos = end + 4;
        }
        if body.len() != pos + 4 * directory.len() {
            return Err(corrupt("bad directory length"));
        }
        for (k, &expect) in directory.iter().enumerate() {
            if u32_at(pos + 4 * k) != expect {
                return Err(corrupt("directory disagrees with anchors"));
            }
        }
        Ok(RemixView {
            runs,
            d,
            offsets,
            selectors,
            anchor_bytes,
            anchor_ends,
            search: SearchMode::Full,
        })
    }

    /// Writes the view to `<id>.rmx` in `dir`, returning the file size.
    pub fn persist(&self, env: &Env, dir: &Path, id: u64) -> Result<u64> {
        let name = remix_file_name(id);
        let file = env.create(&dir.join(&name))?;
        let bytes = self.encode();
        let mut sink = EnvSink::new(env.clone(), file, name, WriteKind::Remix);
        sink.write(&bytes)?;
        sink.finish()?;
        Ok(bytes.len() as u64)
    }

    pub fn open(dir: &Path, id: u64, runs: Vec<Arc<Table>>) -> Result<RemixView> {
        let name = remix_file_name(id);
        let path = dir.join(&name);
        let buf = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingFile(path))
            }
            Err(e) => return Err(e.into()),
        };
        Self::decode(&name, &buf, runs)
    }
}
