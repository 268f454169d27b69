//! File-system access shared by all persistent components.
//!
//! Every mutating file operation goes through [`Env`] so that write volume
//! can be accounted per category and so tests can inject a crash after a
//! chosen number of operations. An injected crash behaves like the process
//! dying: the failing write may land partially (whole 4 KB units only), and
//! every later operation fails.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::{Error, Result};

pub const UNIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WriteKind {
    Wal,
    Table,
    Remix,
    Manifest,
}

/// Byte counters for write-amplification accounting.
#[derive(Debug, Default)]
pub struct IoStats {
    user: AtomicU64,
    wal: AtomicU64,
    table: AtomicU64,
    remix: AtomicU64,
    manifest: AtomicU64,
    per_file: Mutex<HashMap<String, u64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoSnapshot {
    pub user: u64,
    pub wal: u64,
    pub table: u64,
    pub remix: u64,
    pub manifest: u64,
}

impl IoSnapshot {
    pub fn written(&self) -> u64 {
        self.wal + self.table + self.remix + self.manifest
    }

    /// Total bytes written over user bytes; `None` before any user write.
    pub fn write_amplification(&self) -> Option<f64> {
        (self.user > 0).then(|| self.written() as f64 / self.user as f64)
    }

    pub fn since(&self, earlier: &IoSnapshot) -> IoSnapshot {
        IoSnapshot {
            user: self.user - earlier.user,
            wal: self.wal - earlier.wal,
            table: self.table - earlier.table,
            remix: self.remix - earlier.remix,
            manifest: self.manifest - earlier.manifest,
        }
    }
}

impl IoStats {
    pub fn add_user(&self, bytes: u64) {
        self.user.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn record(&self, kind: WriteKind, file: &str, bytes: u64) {
        let counter = match kind {
            WriteKind::Wal => &self.wal,
            WriteKind::Table => &self.table,
            WriteKind::Remix => &self.remix,
            WriteKind::Manifest => &self.manifest,
        };
        counter.fetch_add(bytes, Ordering::Relaxed);
        if matches!(kind, WriteKind::Table | WriteKind::Remix) {
            *self.per_file.lock().entry(file.to_string()).or_default() += bytes;
        }
    }

    /// Bytes ever written to the named table or REMIX file.
    pub fn file_bytes(&self, file: &str) -> u64 {
        self.per_file.lock().get(file).copied().unwrap_or(0)
    }

    pub fn snapshot(&self) -> IoSnapshot {
        IoSnapshot {
            user: self.user.load(Ordering::Relaxed),
            wal: self.wal.load(Ordering::Relaxed),
            table: self.table.load(Ordering::Relaxed),
            remix: self.remix.load(Ordering::Relaxed),
            manifest: self.manifest.load(Ordering::Relaxed),
        }
    }
}

/// Crash injection: the `n`-th mutating operation fails and so does every
/// operation after it.
#[derive(Debug)]
pub struct FaultInjector {
    remaining: AtomicU64,
    ops: AtomicU64,
    crashed: AtomicBool,
}

impl FaultInjector {
    pub fn crash_after(ops: u64) -> Arc<Self> {
        Arc::new(FaultInjector {
            remaining: AtomicU64::new(ops),
            ops: AtomicU64::new(0),
            crashed: AtomicBool::new(false),
        })
    }

    /// An injector that never fires; useful for counting operations.
    pub fn counting() -> Arc<Self> {
        Self::crash_after(u64::MAX)
    }

    pub fn has_crashed(&self) -> bool {
        self.crashed.load(Ordering::SeqCst)
    }

    pub fn operations(&self) -> u64 {
        self.ops.load(Ordering::SeqCst)
    }

    /// Ok to proceed, or the crash point has been reached.
    fn tick(&self) -> Result<()> {
        if self.has_crashed() {
            return Err(Error::Crashed);
        }
        self.ops.fetch_add(1, Ordering::SeqCst);
        let left = self.remaining.fetch_sub(1, Ordering::SeqCst);
        if left <= 1 {
            self.crashed.store(true, Ordering::SeqCst);
            return Err(Error::Crashed);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Env {
    stats: Arc<IoStats>,
    faults: Option<Arc<FaultInjector>>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(faults: Arc<FaultInjector>) -> Self {
        Env {
            stats: Arc::default(),
            faults: Some(faults),
        }
    }

    pub fn stats(&self) -> &Arc<IoStats> {
        &self.stats
    }

    fn check(&self) -> Result<()> {
        match &self.faults {
            Some(f) => f.tick(),
            None => Ok(()),
        }
    }

    /// Partial write performed at the crash point: whole units only.
    fn torn_prefix(len: usize) -> usize {
        (len / UNIT / 2) * UNIT
    }

    pub fn write_at(&self, file: &File, offset: u64, buf: &[u8]) -> Result<()> {
        if let Err(e) = self.check() {
            let torn = Self::torn_prefix(buf.len());
            if torn > 0 {
                let _ = file.write_all_at(&buf[..torn], offset);
            }
            return Err(e);
        }
        file.write_all_at(buf, offset)?;
        Ok(())
    }

    pub fn append(&self, file: &mut File, buf: &[u8]) -> Result<()> {
        if let Err(e) = self.check() {
            let torn = Self::torn_prefix(buf.len());
            if torn > 0 {
                let _ = file.write_all(&buf[..torn]);
            }
            return Err(e);
        }
        file.write_all(buf)?;
        Ok(())
    }

    pub fn sync(&self, file: &File) -> Result<()> {
        self.check()?;
        file.sync_data()?;
        Ok(())
    }

    pub fn create(&self, path: &Path) -> Result<File> {
        self.check()?;
        Ok(OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?)
    }

    pub fn set_len(&self, file: &File, len: u64) -> Result<()> {
        self.check()?;
        file.set_len(len)?;
        Ok(())
    }

    pub fn rename(&self, from: &Path, to: &Path) -> Result<()> {
        self.check()?;
        fs::rename(from, to)?;
        Ok(())
    }

    pub fn remove(&self, path: &Path) -> Result<()> {
        self.check()?;
        match fs::remove_file(path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn sync_dir(&self, dir: &Path) -> Result<()> {
        self.check()?;
        File::open(dir)?.sync_all()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn injector_fails_at_nth_op_and_after() {
        let f = FaultInjector::crash_after(3);
        let env = Env::with_faults(f.clone());
        let dir = tempfile::tempdir().unwrap();
        let file = env.create(&dir.path().join("a")).unwrap();
        env.write_at(&file, 0, b"x").unwrap();
        assert!(env.write_at(&file, 1, b"y").unwrap_err().is_crash());
        assert!(f.has_crashed());
        assert!(env.sync(&file).unwrap_err().is_crash());
    }

    #[test]
    fn torn_write_keeps_whole_units() {
        let f = FaultInjector::crash_after(2);
        let env = Env::with_faults(f);
        let dir = tempfile::tempdir().unwrap();
        let file = env.create(&dir.path().join("a")).unwrap();
        let buf = vec![7u8; UNIT * 4];
        assert!(env.write_at(&file, 0, &buf).is_err());
        assert_eq!(file.metadata().unwrap().len(), (UNIT * 2) as u64);
    }

    #[test]
    fn accounting_by_kind() {
        let s = IoStats::default();
        s.add_user(100);
        s.record(WriteKind::Wal, "wal.1", 50);
        s.record(WriteKind::Table, "1.tbl", 120);
        s.record(WriteKind::Table, "1.tbl", 30);
        let snap = s.snapshot();
        assert_eq!(snap.written(), 200);
        assert_eq!(snap.write_amplification(), Some(2.0));
        assert_eq!(s.file_bytes("1.tbl"), 150);
        assert_eq!(IoSnapshot::default().write_amplification(), None);
    }
}
