//! On-disk layout of a table file.
//!
//! ```text
//! [data unit 0][data unit 1]...[data unit n-1]      n × 4096 bytes
//! [counts: 1 byte per unit]
//! [entry_count u32][unit_count u32]
//! [smallest_len u32][smallest][largest_len u32][largest]
//! [footer_len u32][crc32 u32][magic 8 bytes]
//! ```
//!
//! A data block is `[count × u16 offsets][entries]`; the count comes from the
//! counts array. A jumbo block spans several units and holds one entry; its
//! continuation units have count 0. Entry: `[flags][varint klen][varint
//! vlen][key][value]`, flags bit 0 marks a tombstone. Integers little-endian.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::keys::{get_varint, put_varint, varint_len};

pub const UNIT: usize = crate::env::UNIT;
pub const MAX_BLOCK_ENTRIES: usize = 255;
pub const MAX_UNITS: usize = 0xFFFF;
pub const MAGIC: &[u8; 8] = b"RMXTBL01";
/// footer_len + crc + magic
pub const TRAILER_LEN: usize = 16;

const FLAG_TOMBSTONE: u8 = 1;

/// Encoded size of an entry, not counting its offset slot.
pub fn entry_len(key: &[u8], value: Option<&[u8]>) -> usize {
    let vlen = value.map_or(0, |v| v.len());
    1 + varint_len(key.len() as u64) + varint_len(vlen as u64) + key.len() + vlen
}

pub fn encode_entry(buf: &mut Vec<u8>, key: &[u8], value: Option<&[u8]>) {
    buf.push(if value.is_none() { FLAG_TOMBSTONE } else { 0 });
    put_varint(buf, key.len() as u64);
    put_varint(buf, value.map_or(0, |v| v.len()) as u64);
    buf.extend_from_slice(key);
    if let Some(v) = value {
        buf.extend_from_slice(v);
    }
}

/// Borrowed view of one stored entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryRef<'a> {
    pub key: &'a [u8],
    pub value: Option<&'a [u8]>,
}

impl EntryRef<'_> {
    pub fn to_entry(&self) -> super::KVEntry {
        super::KVEntry {
            key: self.key.to_vec(),
            value: self.value.map(<[u8]>::to_vec),
        }
    }

    pub fn encoded_len(&self) -> usize {
        entry_len(self.key, self.value)
    }
}

fn decode_entry(buf: &[u8]) -> Option<EntryRef<'_>> {
    let flags = *buf.first()?;
    let (klen, a) = get_varint(&buf[1..])?;
    let (vlen, b) = get_varint(&buf[1 + a..])?;
    let start = 1 + a + b;
    let kend = start.checked_add(klen as usize)?;
    let vend = kend.checked_add(vlen as usize)?;
    if vend > buf.len() {
        return None;
    }
    let key = &buf[start..kend];
    let value = (flags & FLAG_TOMBSTONE == 0).then(|| &buf[kend..vend]);
    Some(EntryRef { key, value })
}

/// A data block (one unit, or several for a jumbo block) held in memory.
#[derive(Clone)]
pub struct BlockRef {
    buf: Arc<[u8]>,
    start: usize,
    len: usize,
    count: u8,
}

impl BlockRef {
    pub(crate) fn new(buf: Arc<[u8]>, start: usize, len: usize, count: u8) -> Self {
        debug_assert!(start + len <= buf.len());
        BlockRef {
            buf,
            start,
            len,
            count,
        }
    }

    pub fn count(&self) -> u8 {
        self.count
    }

    fn bytes(&self) -> &[u8] {
        &self.buf[self.start..self.start + self.len]
    }

    /// Entry `i` of the block via the offset array.
    pub fn entry(&self, i: u8) -> Result<EntryRef<'_>> {
        let bytes = self.bytes();
        let slot = 2 * i as usize;
        if i >= self.count || slot + 2 > bytes.len() {
            return Err(Error::Addressing(format!(
                "key index {i} in block of {}",
                self.count
            )));
        }
        let off = u16::from_le_bytes([bytes[slot], bytes[slot + 1]]) as usize;
        if off < 2 * self.count as usize || off >= bytes.len() {
            return Err(Error::corruption("table block", format!("bad offset {off}")));
        }
        decode_entry(&bytes[off..])
            .ok_or_else(|| Error::corruption("table block", format!("undecodable entry {i}")))
    }

    #[inline]
    pub fn key(&self, i: u8) -> Result<&[u8]> {
        self.entry(i).map(|e| e.key)
    }
}

/// Serializes one block. `entries` holds pre-encoded entries back to back,
/// `ends` the end offset of each within it.
pub fn encode_block(out: &mut Vec<u8>, entries: &[u8], ends: &[usize]) -> usize {
    let n = ends.len();
    let header = 2 * n;
    let mut prev = 0;
    for &end in ends {
        let off = header + prev;
        debug_assert!(off < u16::MAX as usize + 1);
        out.extend_from_slice(&(off as u16).to_le_bytes());
        prev = end;
    }
    out.extend_from_slice(entries);
    let used = header + entries.len();
    let units = used.div_ceil(UNIT).max(1);
    out.resize(out.len() + units * UNIT - used, 0);
    units
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Footer {
    pub counts: Vec<u8>,
    pub entry_count: u32,
    pub smallest: Option<Vec<u8>>,
    pub largest: Option<Vec<u8>>,
}

impl Footer {
    pub fn unit_count(&self) -> usize {
        self.counts.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.counts.len() + 64);
        out.extend_from_slice(&self.counts);
        out.extend_from_slice(&self.entry_count.to_le_bytes());
        out.extend_from_slice(&(self.counts.len() as u32).to_le_bytes());
        for key in [&self.smallest, &self.largest] {
            let k = key.as_deref().unwrap_or(&[]);
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k);
        }
        let footer_len = out.len() as u32;
        out.extend_from_slice(&footer_len.to_le_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out.extend_from_slice(MAGIC);
        out
    }

    /// Length of the footer body given the last [`TRAILER_LEN`] bytes.
    pub fn body_len(name: &str, trailer: &[u8]) -> Result<usize> {
        if trailer.len() != TRAILER_LEN || &trailer[8..] != MAGIC {
            return Err(Error::corruption(name, "bad magic"));
        }
        Ok(u32::from_le_bytes(trailer[..4].try_into().unwrap()) as usize)
    }

    /// Decodes `body ++ trailer`; `unit_count` is implied by the file size.
    pub fn decode(name: &str, buf: &[u8], unit_count: usize) -> Result<Footer> {
        let corrupt = |why: &str| Error::corruption(name, why.to_string());
        if buf.len() < TRAILER_LEN + unit_count + 16 {
            return Err(corrupt("truncated footer"));
        }
        let (checked, tail) = buf.split_at(buf.len() - 12);
        let crc = u32::from_le_bytes(tail[..4].try_into().unwrap());
        if crc32fast::hash(checked) != crc {
            return Err(corrupt("footer checksum mismatch"));
        }
        let body = &checked[..checked.len() - 4];
        let u = unit_count;
        let read_u32 = |at: usize| -> Result<u32> {
            body.get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| corrupt("truncated footer"))
        };
        let entry_count = read_u32(u)?;
        if read_u32(u + 4)? as usize != u {
            return Err(corrupt("unit count disagrees with file size"));
        }
        let mut pos = u + 8;
        let mut keys = Vec::with_capacity(2);
        for _ in 0..2 {
            let len = read_u32(pos)? as usize;
            pos += 4;
            let k = body
                .get(pos..pos + len)
                .ok_or_else(|| corrupt("truncated key bound"))?;
            keys.push(k.to_vec());
            pos += len;
        }
        if pos != body.len() {
            return Err(corrupt("trailing bytes in footer"));
        }
        let counts = body[..u].to_vec();
        let sum: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if sum != u64::from(entry_count) {
            return Err(corrupt("block counts do not sum to entry count"));
        }
        let (smallest, largest) = if entry_count == 0 {
            (None, None)
        } else {
            let largest = keys.pop();
            (keys.pop(), largest)
        };
        Ok(Footer {
            counts,
            entry_count,
            smallest,
            largest,
        })
    }
}
