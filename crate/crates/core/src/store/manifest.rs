//! Append-only log of version edits.
//!
//! Each record is framed as `[len u32][crc32 u32][payload]`. Edits take
//! effect only once a `Commit` record follows them, so a commit is atomic:
//! replay discards edits after the last commit and truncates a torn tail.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::env::{Env, WriteKind};
use crate::error::{Error, Result};
use crate::keys::{get_varint, put_varint};

pub const MANIFEST: &str = "MANIFEST";
pub const MANIFEST_TMP: &str = "MANIFEST.tmp";
const FRAME_HEADER: usize = 8;
/// Rewrite the manifest as a snapshot once it grows past this size.
const SNAPSHOT_THRESHOLD: u64 = 4 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    WalGeneration(u64),
    PartitionAdd { lower: Vec<u8>, generation: u64 },
    PartitionRemove { lower: Vec<u8> },
    TableAdd { lower: Vec<u8>, id: u64 },
    TableRemove { lower: Vec<u8>, id: u64 },
    RemixSet { lower: Vec<u8>, id: Option<u64>, generation: u64 },
    Commit { sequence: u64 },
}

const T_WAL: u8 = 1;
const T_PADD: u8 = 2;
const T_PREMOVE: u8 = 3;
const T_TADD: u8 = 4;
const T_TREMOVE: u8 = 5;
const T_REMIX: u8 = 6;
const T_COMMIT: u8 = 7;

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_varint(out, b.len() as u64);
    out.extend_from_slice(b);
}

impl Edit {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Edit::WalGeneration(g) => {
                out.push(T_WAL);
                put_varint(out, *g);
            }
            Edit::PartitionAdd { lower, generation } => {
                out.push(T_PADD);
                put_bytes(out, lower);
                put_varint(out, *generation);
            }
            Edit::PartitionRemove { lower } => {
                out.push(T_PREMOVE);
                put_bytes(out, lower);
            }
            Edit::TableAdd { lower, id } => {
                out.push(T_TADD);
                put_bytes(out, lower);
                put_varint(out, *id);
            }
            Edit::TableRemove { lower, id } => {
                out.push(T_TREMOVE);
                put_bytes(out, lower);
                put_varint(out, *id);
            }
            Edit::RemixSet { lower, id, generation } => {
                out.push(T_REMIX);
                put_bytes(out, lower);
                put_varint(out, id.map_or(0, |i| i + 1));
                put_varint(out, *generation);
            }
            Edit::Commit { sequence } => {
                out.push(T_COMMIT);
                put_varint(out, *sequence);
            }
        }
    }

    fn decode(buf: &[u8]) -> Option<Edit> {
        let (&tag, mut rest) = buf.split_first()?;
        let varint = |rest: &mut &[u8]| -> Option<u64> {
            let (v, n) = get_varint(rest)?;
            *rest = &rest[n..];
            Some(v)
        };
        let bytes = |rest: &mut &[u8], len: u64| -> Option<Vec<u8>> {
            let len = usize::try_from(len).ok()?;
            let b = rest.get(..len)?.to_vec();
            *rest = &rest[len..];
            Some(b)
        };
        let edit = match tag {
            T_WAL => Edit::WalGeneration(varint(&mut rest)?),
            T_COMMIT => Edit::Commit {
                sequence: varint(&mut rest)?,
            },
            _ => {
                let n = varint(&mut rest)?;
                let lower = bytes(&mut rest, n)?;
                match tag {
                    T_PADD => Edit::PartitionAdd {
                        lower,
                        generation: varint(&mut rest)?,
                    },
                    T_PREMOVE => Edit::PartitionRemove { lower },
                    T_TADD => Edit::TableAdd {
                        lower,
                        id: varint(&mut rest)?,
                    },
                    T_TREMOVE => Edit::TableRemove {
                        lower,
                        id: varint(&mut rest)?,
                    },
                    T_REMIX => Edit::RemixSet {
                        lower,
                        id: varint(&mut rest)?.checked_sub(1),
                        generation: varint(&mut rest)?,
                    },
                    _ => return None,
                }
            }
        };
        rest.is_empty().then_some(edit)
    }
}

/// File-level description of one partition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PartitionRecord {
    pub generation: u64,
    pub tables: Vec<u64>,
    pub remix: Option<u64>,
}

/// The state obtained by replaying every committed edit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestState {
    pub wal_generation: u64,
    pub sequence: u64,
    pub partitions: BTreeMap<Vec<u8>, PartitionRecord>,
}

impl ManifestState {
    fn apply(&mut self, name: &str, e: &Edit) -> Result<()> {
        let missing = |lower: &[u8]| {
            Error::corruption(name, format!("edit names unknown partition {lower:?}"))
        };
        match e {
            Edit::WalGeneration(g) => self.wal_generation = *g,
            Edit::PartitionAdd { lower, generation } => {
                let prev = self.partitions.insert(
                    lower.clone(),
                    PartitionRecord {
                        generation: *generation,
                        ..Default::default()
                    },
                );
                if prev.is_some() {
                    return Err(Error::corruption(name, "partition added twice"));
                }
            }
            Edit::PartitionRemove { lower } => {
                self.partitions.remove(lower).ok_or_else(|| missing(lower))?;
            }
            Edit::TableAdd { lower, id } => {
                self.partitions.get_mut(lower).ok_or_else(|| missing(lower))?.tables.push(*id);
            }
            Edit::TableRemove { lower, id } => {
                let p = self.partitions.get_mut(lower).ok_or_else(|| missing(lower))?;
                let at = p
                    .tables
                    .iter()
                    .position(|t| t == id)
                    .ok_or_else(|| Error::corruption(name, format!("table {id} not in partition")))?;
                p.tables.remove(at);
            }
            Edit::RemixSet { lower, id, generation } => {
                let p = self.partitions.get_mut(lower).ok_or_else(|| missing(lower))?;
                p.remix = *id;
                p.generation = *generation;
            }
            Edit::Commit { sequence } => self.sequence = *sequence,
        }
        Ok(())
    }

    /// Edits that recreate this state from nothing.
    pub fn snapshot_edits(&self) -> Vec<Edit> {
        let mut out = vec![Edit::WalGeneration(self.wal_generation)];
        for (lower, p) in &self.partitions {
            out.push(Edit::PartitionAdd {
                lower: lower.clone(),
                generation: p.generation,
            });
            for &id in &p.tables {
                out.push(Edit::TableAdd {
                    lower: lower.clone(),
                    id,
                });
            }
            if p.remix.is_some() {
                out.push(Edit::RemixSet {
                    lower: lower.clone(),
                    id: p.remix,
                    generation: p.generation,
                });
            }
        }
        out
    }

    /// Largest file id referenced.
    pub fn max_file_id(&self) -> u64 {
        self.partitions
            .values()
            .flat_map(|p| p.tables.iter().copied().chain(p.remix))
            .max()
            .unwrap_or(0)
    }
}

fn frame(out: &mut Vec<u8>, e: &Edit) {
    let mut payload = Vec::new();
    e.encode(&mut payload);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out.extend_from_slice(&payload);
}

pub struct Manifest {
    env: Env,
    dir: PathBuf,
    file: File,
    len: u64,
    state: ManifestState,
}

impl Manifest {
    /// Creates a manifest describing a store with one empty partition.
    pub fn create(env: &Env, dir: &Path, wal_generation: u64) -> Result<Manifest> {
        let mut state = ManifestState {
            wal_generation,
            sequence: 1,
            ..Default::default()
        };
        state.partitions.insert(Vec::new(), PartitionRecord::default());
        Self::write_snapshot(env, dir, state)
    }

    fn write_snapshot(env: &Env, dir: &Path, state: ManifestState) -> Result<Manifest> {
        let mut buf = Vec::new();
        for e in state.snapshot_edits() {
            frame(&mut buf, &e);
        }
        frame(&mut buf, &Edit::Commit { sequence: state.sequence });
        let tmp = dir.join(MANIFEST_TMP);
        let mut file = env.create(&tmp)?;
        env.append(&mut file, &buf)?;
        env.stats().record(WriteKind::Manifest, MANIFEST, buf.len() as u64);
        env.sync(&file)?;
        env.rename(&tmp, &dir.join(MANIFEST))?;
        env.sync_dir(dir)?;
        Ok(Manifest {
            env: env.clone(),
            dir: dir.to_path_buf(),
            file,
            len: buf.len() as u64,
            state,
        })
    }

    /// Replays committed edits; returns the state and the byte length of
    /// the committed prefix.
    fn replay(name: &str, buf: &[u8]) -> Result<(ManifestState, u64)> {
        let mut state = ManifestState::default();
        let mut pending: Vec<Edit> = Vec::new();
        let mut at = 0usize;
        let mut committed = 0usize;
        while at + FRAME_HEADER <= buf.len() {
            let len = u32::from_le_bytes(buf[at..at + 4].try_into().unwrap()) as usize;
            let crc = u32::from_le_bytes(buf[at + 4..at + 8].try_into().unwrap());
            let end = at + FRAME_HEADER + len;
            if end > buf.len() {
                break;
            }
            let payload = &buf[at + FRAME_HEADER..end];
            if crc32fast::hash(payload) != crc {
                if end == buf.len() {
                    break;
                }
                return Err(Error::corruption(name, format!("checksum mismatch at byte {at}")));
            }
            let edit = Edit::decode(payload)
                .ok_or_else(|| Error::corruption(name, format!("malformed edit at byte {at}")))?;
            at = end;
            if let Edit::Commit { .. } = edit {
                for e in pending.drain(..) {
                    state.apply(name, &e)?;
                }
                state.apply(name, &edit)?;
                committed = at;
            } else {
                pending.push(edit);
            }
        }
        if committed == 0 {
            return Err(Error::corruption(name, "no committed version"));
        }
        Ok((state, committed as u64))
    }

    /// Opens the manifest in `dir`, dropping uncommitted or torn trailing
    /// records. Returns `None` when there is no manifest.
    pub fn open(env: &Env, dir: &Path) -> Result<Option<Manifest>> {
        let path = dir.join(MANIFEST);
        let buf = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let (state, committed) = Self::replay(MANIFEST, &buf)?;
        let file = OpenOptions::new().read(true).write(true).open(&path)?;
        if committed < buf.len() as u64 {
            env.set_len(&file, committed)?;
            env.sync(&file)?;
        }
        let mut m = Manifest {
            env: env.clone(),
            dir: dir.to_path_buf(),
            file,
            len: committed,
            state,
        };
        use std::io::Seek;
        m.file.seek(std::io::SeekFrom::Start(committed))?;
        Ok(Some(m))
    }

    pub fn state(&self) -> &ManifestState {
        &self.state
    }

    pub fn size(&self) -> u64 {
        self.len
    }

    /// Appends `edits` followed by a commit record and syncs. The in-memory
    /// state changes only if the commit is durable.
    pub fn commit(&mut self, edits: &[Edit]) -> Result<u64> {
        let mut next = self.state.clone();
        for e in edits {
            next.apply(MANIFEST, e)?;
        }
        let sequence = self.state.sequence + 1;
        next.sequence = sequence;
        if self.len >= SNAPSHOT_THRESHOLD {
            *self = Self::write_snapshot(&self.env, &self.dir, next)?;
            return Ok(self.state.sequence);
        }
        let mut buf = Vec::new();
        for e in edits {
            frame(&mut buf, e);
        }
        frame(&mut buf, &Edit::Commit { sequence });
        self.env.append(&mut self.file, &buf)?;
        self.env
            .stats()
            .record(WriteKind::Manifest, MANIFEST, buf.len() as u64);
        self.env.sync(&self.file)?;
        self.len += buf.len() as u64;
        self.state = next;
        Ok(sequence)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::FaultInjector;

    fn lower(s: &str) -> Vec<u8> {
        s.as_bytes().to_vec()
    }

    #[test]
    fn edits_round_trip() {
        let edits = [
            Edit::WalGeneration(3),
            Edit::PartitionAdd { lower: lower("k"), generation: 9 },
            Edit::PartitionRemove { lower: Vec::new() },
            Edit::TableAdd { lower: lower("k"), id: 1 << 40 },
            Edit::TableRemove { lower: lower("k"), id: 7 },
            Edit::RemixSet { lower: lower("k"), id: None, generation: 0 },
            Edit::RemixSet { lower: lower("k"), id: Some(0), generation: 4 },
            Edit::Commit { sequence: 12 },
        ];
        for e in edits {
            let mut b = Vec::new();
            e.encode(&mut b);
            assert_eq!(Edit::decode(&b), Some(e));
        }
    }

    #[test]
    fn commits_replay_and_partial_commit_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let env = Env::new();
        let mut m = Manifest::create(&env, dir.path(), 1).unwrap();
        m.commit(&[
            Edit::TableAdd { lower: Vec::new(), id: 5 },
            Edit::RemixSet { lower: Vec::new(), id: Some(6), generation: 1 },
        ])
        .unwrap();
        let good = m.state().clone();
        assert_eq!(good.partitions[&Vec::new()].tables, vec![5]);
        // uncommitted edit at the tail
        let mut tail = Vec::new();
        frame(&mut tail, &Edit::TableAdd { lower: Vec::new(), id: 8 });
        env.append(&mut m.file, &tail).unwrap();
        drop(m);
        let m = Manifest::open(&env, dir.path()).unwrap().unwrap();
        assert_eq!(m.state(), &good);
        let len = std::fs::metadata(dir.path().join(MANIFEST)).unwrap().len();
        assert_eq!(len, m.size());
    }

    #[test]
    fn torn_commit_truncated_and_inner_damage_fails() {
        let dir = tempfile::tempdir().unwrap();
        let env = Env::new();
        let mut m = Manifest::create(&env, dir.path(), 1).unwrap();
        let before = m.state().clone();
        let first = m.size();
        m.commit(&[Edit::TableAdd { lower: Vec::new(), id: 5 }]).unwrap();
        drop(m);
        let path = dir.path().join(MANIFEST);
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 3]).unwrap();
        let m = Manifest::open(&env, dir.path()).unwrap().unwrap();
        assert_eq!(m.state(), &before);
        assert_eq!(m.size(), first);
        drop(m);
        let mut bad = full.clone();
        bad[10] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            Manifest::open(&env, dir.path()),
            Err(Error::Corruption { .. })
        ));
    }

    #[test]
    fn failed_commit_keeps_state() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::create(&Env::new(), dir.path(), 1).unwrap();
        let before = m.state().clone();
        drop(m);
        let env = Env::with_faults(FaultInjector::crash_after(1));
        let mut m = Manifest::open(&env, dir.path()).unwrap().unwrap();
        assert!(m.commit(&[Edit::TableAdd { lower: Vec::new(), id: 5 }]).is_err());
        assert_eq!(m.state(), &before);
        let m = Manifest::open(&Env::new(), dir.path()).unwrap().unwrap();
        assert_eq!(m.state(), &before);
    }

    #[test]
    fn snapshot_rewrite_preserves_state() {
        let dir = tempfile::tempdir().unwrap();
        let env = Env::new();
        let mut m = Manifest::create(&env, dir.path(), 1).unwrap();
        for i in 0..3 {
            m.commit(&[Edit::TableAdd { lower: Vec::new(), id: i }]).unwrap();
        }
        let expect = m.state().clone();
        let rewritten = Manifest::write_snapshot(&env, dir.path(), expect.clone()).unwrap();
        assert_eq!(rewritten.state(), &expect);
        let back = Manifest::open(&env, dir.path()).unwrap().unwrap();
        assert_eq!(back.state(), &expect);
    }

    #[test]
    fn unknown_partition_is_corruption() {
        let mut s = ManifestState::default();
        assert!(s
            .apply("m", &Edit::TableAdd { lower: lower("x"), id: 1 })
            .is_err());
    }
}
