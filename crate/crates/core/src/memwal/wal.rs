//! Write-ahead log organised as timestamped virtual logs.
//!
//! The file is a sequence of 4 KB units. The first byte of every unit holds
//! flags: bit 0 is the flip bit, inverted each time the unit is rewritten;
//! bit 1 marks a mapping unit and bit 2 the first unit of a mapping; bit 3
//! marks a block written by garbage collection.
//!
//! Data block: `[flags][used u16][records]`, record `[type][count][varint
//! klen][varint vlen][key][value]`. Mapping: `[flags][timestamp u64][count
//! u32]` followed by `count` entries `[unit u32][bits u8][bitmap 32 B if
//! valid]` and a CRC32, spread over consecutive units after each unit's
//! flags byte. Entry bit 0 is the expected flip bit, bit 1 marks a valid
//! block. The newest mapping with a good checksum defines the log: its valid
//! blocks, then its unwritten slots that have since been written, then any
//! units appended after the mapping.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use crate::env::{Env, WriteKind, UNIT};
use crate::error::{Error, Result};
use crate::keys::{get_varint, put_varint, varint_len};

const FLAG_FLIP: u8 = 1;
const FLAG_MAPPING: u8 = 2;
const FLAG_HEAD: u8 = 4;
const FLAG_REWRITE: u8 = 8;
const HEADER: usize = 3;
const MAP_PAYLOAD: usize = UNIT - 1;
/// Largest encoded record a block can hold.
pub const MAX_RECORD: usize = UNIT - HEADER;
pub const MAX_BLOCK_RECORDS: usize = 256;
const REC_PUT: u8 = 1;
const REC_DEL: u8 = 2;
const BIT_FLIP: u8 = 1;
const BIT_VALID: u8 = 2;

type Bitmap = [u8; 32];

fn bit(map: &Bitmap, i: usize) -> bool {
    map[i / 8] & (1 << (i % 8)) != 0
}

fn set_bit(map: &mut Bitmap, i: usize) {
    map[i / 8] |= 1 << (i % 8);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalRecord {
    pub key: Vec<u8>,
    pub value: Option<Vec<u8>>,
    pub count: u8,
}

impl WalRecord {
    pub fn encoded_len(&self) -> usize {
        record_len(&self.key, self.value.as_deref())
    }
}

pub fn record_len(key: &[u8], value: Option<&[u8]>) -> usize {
    let v = value.map_or(0, <[u8]>::len);
    2 + varint_len(key.len() as u64) + varint_len(v as u64) + key.len() + v
}

fn encode_record(buf: &mut Vec<u8>, r: &WalRecord) {
    buf.push(if r.value.is_some() { REC_PUT } else { REC_DEL });
    buf.push(r.count);
    put_varint(buf, r.key.len() as u64);
    let v = r.value.as_deref().unwrap_or(&[]);
    put_varint(buf, v.len() as u64);
    buf.extend_from_slice(&r.key);
    buf.extend_from_slice(v);
}

/// Records of a data block with their encoded sizes.
fn parse_block(unit: &[u8]) -> Option<Vec<(WalRecord, usize)>> {
    let used = u16::from_le_bytes([unit[1], unit[2]]) as usize;
    if used > MAX_RECORD {
        return None;
    }
    let mut body = &unit[HEADER..HEADER + used];
    let mut out = Vec::new();
    while !body.is_empty() {
        if body.len() < 2 || out.len() == MAX_BLOCK_RECORDS {
            return None;
        }
        let kind = body[0];
        let count = body[1];
        let (klen, a) = get_varint(&body[2..])?;
        let (vlen, b) = get_varint(&body[2 + a..])?;
        let start = 2 + a + b;
        let kend = start.checked_add(klen as usize)?;
        let end = kend.checked_add(vlen as usize)?;
        if end > body.len() {
            return None;
        }
        let value = match kind {
            REC_PUT => Some(body[kend..end].to_vec()),
            REC_DEL if vlen == 0 => None,
            _ => return None,
        };
        out.push((
            WalRecord {
                key: body[start..kend].to_vec(),
                value,
                count,
            },
            end,
        ));
        body = &body[end..];
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum SlotKind {
    Valid(Box<Bitmap>),
    Unwritten,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Slot {
    unit: u32,
    flip: bool,
    kind: SlotKind,
}

fn encode_mapping(timestamp: u64, slots: &[Slot]) -> Vec<u8> {
    let mut p = Vec::with_capacity(17 + slots.len() * 6);
    p.push(0);
    p.extend_from_slice(&timestamp.to_le_bytes());
    p.extend_from_slice(&(slots.len() as u32).to_le_bytes());
    for s in slots {
        p.extend_from_slice(&s.unit.to_le_bytes());
        let mut bits = if s.flip { BIT_FLIP } else { 0 };
        if let SlotKind::Valid(_) = s.kind {
            bits |= BIT_VALID;
        }
        p.push(bits);
        if let SlotKind::Valid(map) = &s.kind {
            p.extend_from_slice(&map[..]);
        }
    }
    let crc = crc32fast::hash(&p);
    p.extend_from_slice(&crc.to_le_bytes());
    p
}

fn decode_mapping(p: &[u8]) -> Option<(u64, Vec<Slot>, usize)> {
    let ts = u64::from_le_bytes(p.get(1..9)?.try_into().ok()?);
    let count = u32::from_le_bytes(p.get(9..13)?.try_into().ok()?) as usize;
    let mut pos = 13;
    let mut slots = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let unit = u32::from_le_bytes(p.get(pos..pos + 4)?.try_into().ok()?);
        let bits = *p.get(pos + 4)?;
        pos += 5;
        let kind = if bits & BIT_VALID != 0 {
            let map: Bitmap = p.get(pos..pos + 32)?.try_into().ok()?;
            pos += 32;
            SlotKind::Valid(Box::new(map))
        } else {
            SlotKind::Unwritten
        };
        slots.push(Slot {
            unit,
            flip: bits & BIT_FLIP != 0,
            kind,
        });
    }
    let crc = u32::from_le_bytes(p.get(pos..pos + 4)?.try_into().ok()?);
    (crc32fast::hash(&p[..pos]) == crc).then_some((ts, slots, pos + 4))
}

/// A block of the current virtual log, in replay order.
#[derive(Debug, Clone)]
struct LogBlock {
    unit: u32,
    bitmap: Option<Box<Bitmap>>,
}

struct Tail {
    unit: u32,
    buf: Vec<u8>,
    records: usize,
}

/// Outcome of a garbage collection pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GcReport {
    pub remapped_blocks: usize,
    pub rewritten_blocks: usize,
    pub rewritten_record_bytes: usize,
    pub dropped_blocks: usize,
    pub mapping_units: usize,
}

pub struct Wal {
    env: Env,
    file: File,
    path: PathBuf,
    name: String,
    flips: Vec<bool>,
    timestamp: u64,
    slots: Vec<Slot>,
    next_slot: usize,
    mapping_end: u32,
    blocks: Vec<LogBlock>,
    tail: Option<Tail>,
    max_units: u32,
    sync: bool,
}

impl Wal {
    /// Creates (or truncates) a log holding an empty mapping.
    pub fn create(env: &Env, path: &Path, max_bytes: u64, sync: bool) -> Result<Wal> {
        let file = env.create(path)?;
        let mut wal = Wal {
            env: env.clone(),
            file,
            path: path.to_path_buf(),
            name: file_name(path),
            flips: Vec::new(),
            timestamp: 0,
            slots: Vec::new(),
            next_slot: 0,
            mapping_end: 0,
            blocks: Vec::new(),
            tail: None,
            max_units: (max_bytes / UNIT as u64).min(u32::MAX as u64) as u32,
            sync,
        };
        wal.write_mapping(1, Vec::new())?;
        Ok(wal)
    }

    /// Opens an existing log and returns the records of its newest virtual
    /// log in replay order. A missing file or one without a valid mapping
    /// yields a fresh, empty log.
    pub fn recover(
        env: &Env,
        path: &Path,
        max_bytes: u64,
        sync: bool,
    ) -> Result<(Wal, Vec<WalRecord>)> {
        let buf = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let name = file_name(path);
        let n = buf.len() / UNIT;
        let unit = |u: usize| &buf[u * UNIT..(u + 1) * UNIT];
        let mut best: Option<(u64, Vec<Slot>, usize, usize)> = None;
        for u in 0..n {
            if unit(u)[0] & (FLAG_MAPPING | FLAG_HEAD) != FLAG_MAPPING | FLAG_HEAD {
                continue;
            }
            let mut payload = Vec::new();
            let mut v = u;
            while v < n && unit(v)[0] & FLAG_MAPPING != 0 && (v == u || unit(v)[0] & FLAG_HEAD == 0) {
                payload.extend_from_slice(&unit(v)[1..]);
                v += 1;
            }
            if let Some((ts, slots, len)) = decode_mapping(&payload) {
                if best.as_ref().is_none_or(|b| ts > b.0) {
                    best = Some((ts, slots, u, len.div_ceil(MAP_PAYLOAD)));
                }
            }
        }
        let Some((timestamp, slots, map_start, map_units)) = best else {
            return Ok((Wal::create(env, path, max_bytes, sync)?, Vec::new()));
        };
        let corrupt = |u: usize, why: &str| Error::corruption(&name, format!("unit {u}: {why}"));
        let flips: Vec<bool> = (0..n).map(|u| unit(u)[0] & FLAG_FLIP != 0).collect();
        let mut records = Vec::new();
        let mut blocks = Vec::new();
        let mut next_slot = slots.len();
        for (i, s) in slots.iter().enumerate() {
            let u = s.unit as usize;
            match &s.kind {
                SlotKind::Valid(map) => {
                    if u >= n || flips[u] != s.flip || unit(u)[0] & FLAG_MAPPING != 0 {
                        return Err(corrupt(u, "valid block failed its flip check"));
                    }
                    let recs = parse_block(unit(u)).ok_or_else(|| corrupt(u, "bad records"))?;
                    records.extend(
                        recs.into_iter()
                            .enumerate()
                            .filter(|(j, _)| bit(map, *j))
                            .map(|(_, (r, _))| r),
                    );
                    blocks.push(LogBlock {
                        unit: s.unit,
                        bitmap: Some(map.clone()),
                    });
                }
                SlotKind::Unwritten => {
                    if i < next_slot {
                        if u < n && flips[u] == s.flip && unit(u)[0] & FLAG_MAPPING == 0 {
                            let recs =
                                parse_block(unit(u)).ok_or_else(|| corrupt(u, "bad records"))?;
                            records.extend(recs.into_iter().map(|(r, _)| r));
                            blocks.push(LogBlock {
                                unit: s.unit,
                                bitmap: None,
                            });
                        } else {
                            next_slot = i;
                        }
                    }
                }
            }
        }
        let first_unwritten = slots
            .iter()
            .position(|s| s.kind == SlotKind::Unwritten)
            .unwrap_or(slots.len());
        let next_slot = next_slot.max(first_unwritten);
        let mapping_end = map_start + map_units;
        let mut end = mapping_end;
        if next_slot == slots.len() {
            while end < n && unit(end)[0] & (FLAG_MAPPING | FLAG_REWRITE) == 0 {
                let recs = parse_block(unit(end)).ok_or_else(|| corrupt(end, "bad records"))?;
                records.extend(recs.into_iter().map(|(r, _)| r));
                blocks.push(LogBlock {
                    unit: end as u32,
                    bitmap: None,
                });
                end += 1;
            }
        }
        let file = std::fs::OpenOptions::new().read(true).write(true).open(path)?;
        if buf.len() != end * UNIT {
            env.set_len(&file, (end * UNIT) as u64)?;
        }
        let mut flips = flips;
        flips.truncate(end);
        let wal = Wal {
            env: env.clone(),
            file,
            path: path.to_path_buf(),
            name,
            flips,
            timestamp,
            slots,
            next_slot,
            mapping_end: mapping_end as u32,
            blocks,
            tail: None,
            max_units: (max_bytes / UNIT as u64).min(u32::MAX as u64) as u32,
            sync,
        };
        Ok((wal, records))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn timestamp(&self) -> u64 {
        self.timestamp
    }

    /// Units in the file.
    pub fn unit_count(&self) -> usize {
        self.flips.len()
    }

    /// Blocks of the current virtual log.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_units(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.unit).collect()
    }

    /// Physical flip bit of `unit`.
    pub fn flip_bit(&self, unit: u32) -> bool {
        self.flips.get(unit as usize).copied().unwrap_or(false)
    }

    fn eof(&self) -> u32 {
        self.flips.len() as u32
    }

    fn write_units(&mut self, at: u32, data: &[u8], account: u64) -> Result<()> {
        self.env
            .write_at(&self.file, at as u64 * UNIT as u64, data)?;
        if account > 0 {
            self.env.stats().record(WriteKind::Wal, &self.name, account);
        }
        let units = data.len().div_ceil(UNIT);
        let end = at as usize + units;
        if self.flips.len() < end {
            self.flips.resize(end, false);
        }
        for k in 0..units {
            self.flips[at as usize + k] = data[k * UNIT] & FLAG_FLIP != 0;
        }
        Ok(())
    }

    /// Next unit to hold a new block and the flip bit it must carry.
    fn free_unit(&self) -> Result<(u32, bool, bool)> {
        if let Some(s) = self.slots.get(self.next_slot) {
            return Ok((s.unit, s.flip, true));
        }
        let eof = self.eof();
        if eof >= self.max_units {
            return Err(Error::LogFull {
                max: self.max_units as u64 * UNIT as u64,
            });
        }
        Ok((eof, true, false))
    }

    fn start_block(&mut self, flags: u8, body: &[u8], records: usize) -> Result<u32> {
        let (unit, flip, from_slot) = self.free_unit()?;
        let mut buf = Vec::with_capacity(UNIT);
        buf.push(flags | u8::from(flip));
        buf.extend_from_slice(&(body.len() as u16).to_le_bytes());
        buf.extend_from_slice(body);
        let used = buf.len();
        buf.resize(UNIT, 0);
        self.write_units(unit, &buf, UNIT as u64)?;
        buf.truncate(used);
        if from_slot {
            self.next_slot += 1;
        }
        if flags & FLAG_REWRITE == 0 {
            self.tail = Some(Tail { unit, buf, records });
        }
        Ok(unit)
    }

    /// Appends records, each into the open tail block when it fits or a new
    /// block otherwise. Records are on disk (and synced if configured) when
    /// this returns.
    pub fn append(&mut self, records: &[WalRecord]) -> Result<()> {
        for r in records {
            let len = r.encoded_len();
            if len > MAX_RECORD {
                return Err(Error::EntryTooLarge {
                    size: len,
                    limit: MAX_RECORD,
                });
            }
        }
        let mut scratch = Vec::with_capacity(MAX_RECORD);
        for r in records {
            scratch.clear();
            encode_record(&mut scratch, r);
            let fits = self.tail.as_ref().is_some_and(|t| {
                t.records < MAX_BLOCK_RECORDS && t.buf.len() + scratch.len() <= UNIT
            });
            if fits {
                let t = self.tail.as_mut().unwrap();
                t.buf.extend_from_slice(&scratch);
                t.records += 1;
                let used = (t.buf.len() - HEADER) as u16;
                t.buf[1..3].copy_from_slice(&used.to_le_bytes());
                let (unit, buf) = (t.unit, std::mem::take(&mut t.buf));
                let res = self.write_units(unit, &buf, 0);
                self.tail.as_mut().unwrap().buf = buf;
                res?;
            } else {
                let unit = self.start_block(0, &scratch, 1)?;
                self.blocks.push(LogBlock { unit, bitmap: None });
            }
        }
        if self.sync {
            self.env.sync(&self.file)?;
        }
        Ok(())
    }

    fn read_unit(&self, unit: u32) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; UNIT];
        self.file.read_exact_at(&mut buf, unit as u64 * UNIT as u64)?;
        Ok(buf)
    }

    fn write_mapping(&mut self, timestamp: u64, slots: Vec<Slot>) -> Result<usize> {
        let payload = encode_mapping(timestamp, &slots);
        let units = payload.len().div_ceil(MAP_PAYLOAD);
        let at = self.eof();
        let mut buf = vec![0u8; units * UNIT];
        for (k, chunk) in payload.chunks(MAP_PAYLOAD).enumerate() {
            let head = if k == 0 { FLAG_HEAD } else { 0 };
            let flip = !self.flip_bit(at + k as u32);
            buf[k * UNIT] = FLAG_MAPPING | head | u8::from(flip);
            buf[k * UNIT + 1..k * UNIT + 1 + chunk.len()].copy_from_slice(chunk);
        }
        self.write_units(at, &buf, buf.len() as u64)?;
        self.env.sync(&self.file)?;
        self.timestamp = timestamp;
        self.next_slot = slots
            .iter()
            .position(|s| s.kind == SlotKind::Unwritten)
            .unwrap_or(slots.len());
        self.slots = slots;
        self.mapping_end = at + units as u32;
        Ok(units)
    }

    /// Starts a new virtual log that keeps only records for which `live`
    /// holds. Blocks with at least a quarter of their bytes live are
    /// remapped in place; live records of sparser blocks are rewritten.
    pub fn gc(&mut self, mut live: impl FnMut(&WalRecord) -> bool) -> Result<GcReport> {
        self.tail = None;
        let mut report = GcReport::default();
        let mut kept: Vec<LogBlock> = Vec::new();
        let mut moved: Vec<WalRecord> = Vec::new();
        for b in self.blocks.clone() {
            let data = self.read_unit(b.unit)?;
            let recs = parse_block(&data).ok_or_else(|| {
                Error::corruption(&self.name, format!("unit {}: bad records", b.unit))
            })?;
            let used = u16::from_le_bytes([data[1], data[2]]) as usize;
            let mut map: Bitmap = [0; 32];
            let mut live_bytes = 0;
            let mut live_recs = Vec::new();
            for (i, (r, len)) in recs.into_iter().enumerate() {
                if b.bitmap.as_ref().is_none_or(|m| bit(m, i)) && live(&r) {
                    set_bit(&mut map, i);
                    live_bytes += len;
                    live_recs.push(r);
                }
            }
            if live_bytes == 0 {
                report.dropped_blocks += 1;
            } else if live_bytes * 4 >= used {
                report.remapped_blocks += 1;
                kept.push(LogBlock {
                    unit: b.unit,
                    bitmap: Some(Box::new(map)),
                });
            } else {
                report.rewritten_record_bytes += live_bytes;
                moved.extend(live_recs);
            }
        }
        let mut rewritten: Vec<u32> = Vec::new();
        let mut body = Vec::with_capacity(MAX_RECORD);
        let mut count = 0;
        for r in &moved {
            if count == MAX_BLOCK_RECORDS || body.len() + r.encoded_len() > MAX_RECORD {
                rewritten.push(self.start_block(FLAG_REWRITE, &body, count)?);
                body.clear();
                count = 0;
            }
            encode_record(&mut body, r);
            count += 1;
        }
        if count > 0 {
            rewritten.push(self.start_block(FLAG_REWRITE, &body, count)?);
        }
        report.rewritten_blocks = rewritten.len();

        let mut full: Bitmap = [0; 32];
        let mut in_use = vec![false; self.flips.len()];
        let mut slots = Vec::with_capacity(self.flips.len());
        for b in &kept {
            in_use[b.unit as usize] = true;
            slots.push(Slot {
                unit: b.unit,
                flip: self.flip_bit(b.unit),
                kind: SlotKind::Valid(b.bitmap.clone().unwrap()),
            });
        }
        for &u in &rewritten {
            in_use[u as usize] = true;
            let n = parse_block(&self.read_unit(u)?).map_or(0, |r| r.len());
            full.fill(0);
            (0..n).for_each(|i| set_bit(&mut full, i));
            slots.push(Slot {
                unit: u,
                flip: self.flip_bit(u),
                kind: SlotKind::Valid(Box::new(full)),
            });
        }
        for (u, used) in in_use.iter().enumerate() {
            if !used {
                slots.push(Slot {
                    unit: u as u32,
                    flip: !self.flips[u],
                    kind: SlotKind::Unwritten,
                });
            }
        }
        let blocks: Vec<LogBlock> = slots
            .iter()
            .filter_map(|s| match &s.kind {
                SlotKind::Valid(m) => Some(LogBlock {
                    unit: s.unit,
                    bitmap: Some(m.clone()),
                }),
                SlotKind::Unwritten => None,
            })
            .collect();
        report.mapping_units = self.write_mapping(self.timestamp + 1, slots)?;
        self.blocks = blocks;
        Ok(report)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}
