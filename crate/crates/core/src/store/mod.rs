//! The storage engine: partitions indexed by REMIX, a MemTable and WAL in
//! front of them, and a manifest recording every installed version.

mod iter;
mod manifest;

pub use iter::StoreIterator;
pub use manifest::{Edit, Manifest, ManifestState, PartitionRecord, MANIFEST, MANIFEST_TMP};

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use parking_lot::{Condvar, Mutex, RwLock};

use crate::compact::{
    execute_compaction, global_schedule, split_hot, CompactionConfig, CompactionOutcome, Decision,
    ExecContext, PartitionLayout, StagedEntry, StagedStats,
};
use crate::env::{Env, IoSnapshot};
use crate::error::{Error, Result};
use crate::memwal::{self, record_len, MemEntry, MemTables, Wal, WalRecord, MAX_RECORD};
use crate::remix::{parse_remix_file_name, remix_file_name, RemixView, SearchMode};
use crate::table::{BlockCache, Table, TableId};

#[derive(Debug, Clone)]
pub struct StoreConfig {
    /// Active MemTable size that triggers a flush.
    pub memtable_bytes: usize,
    pub max_log_bytes: u64,
    pub block_cache_bytes: usize,
    pub compaction: CompactionConfig,
    pub compaction_workers: usize,
    pub search_mode: SearchMode,
    /// Sync the log on every write instead of relying on the OS.
    pub sync_writes: bool,
    /// Run flushes on a background thread. When off, the write that fills
    /// the MemTable performs the flush itself.
    pub background_flush: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            memtable_bytes: 8 << 20,
            max_log_bytes: 4 << 30,
            block_cache_bytes: 64 << 20,
            compaction: CompactionConfig::default(),
            compaction_workers: 4,
            search_mode: SearchMode::Full,
            sync_writes: false,
            background_flush: true,
        }
    }
}

impl StoreConfig {
    pub fn validate(&self) -> Result<()> {
        self.compaction.validate()?;
        if self.memtable_bytes == 0 || self.compaction_workers == 0 {
            return Err(Error::Config("memtable size and worker count must be positive".into()));
        }
        if self.max_log_bytes < 4 * crate::env::UNIT as u64 {
            return Err(Error::Config("log limit below four units".into()));
        }
        Ok(())
    }
}

/// A key range `[lower, next partition's lower)` with its runs and index.
#[derive(Debug)]
pub struct Partition {
    pub lower: Vec<u8>,
    pub generation: u64,
    /// Oldest first.
    pub tables: Vec<Arc<Table>>,
    pub remix: Option<Arc<RemixView>>,
    pub remix_id: Option<u64>,
}

/// An immutable set of partitions tiling the key space.
#[derive(Debug)]
pub struct StoreVersion {
    pub partitions: Vec<Arc<Partition>>,
    pub wal_generation: u64,
    pub sequence: u64,
}

impl StoreVersion {
    /// Index of the partition covering `key`.
    pub fn find(&self, key: &[u8]) -> usize {
        self.partitions
            .partition_point(|p| p.lower.as_slice() <= key)
            .saturating_sub(1)
    }

    pub fn table_count(&self) -> usize {
        self.partitions.iter().map(|p| p.tables.len()).sum()
    }
}

/// Counters describing flush activity since open.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlushStats {
    pub flushes: u64,
    pub minor: u64,
    pub major: u64,
    pub split: u64,
    pub aborted: u64,
    pub aborted_bytes: u64,
    pub staged_bytes: u64,
    pub hot_keys_reinserted: u64,
    /// Bytes written into files that existed before a minor compaction.
    pub minor_rewritten_bytes: u64,
}

struct Writer {
    wal: Wal,
}

struct Inner {
    dir: PathBuf,
    env: Env,
    config: StoreConfig,
    cache: Arc<BlockCache>,
    ids: AtomicU64,
    mem: MemTables,
    version: RwLock<Arc<StoreVersion>>,
    writer: Mutex<Writer>,
    manifest: Mutex<Manifest>,
    flush_lock: Mutex<()>,
    wake: Condvar,
    state: Mutex<BackgroundState>,
    stats: Mutex<FlushStats>,
}

#[derive(Default)]
struct BackgroundState {
    shutdown: bool,
    pending: bool,
    last_error: Option<String>,
}

pub struct Store {
    inner: Arc<Inner>,
    flusher: Option<JoinHandle<()>>,
}

fn wal_name(generation: u64) -> String {
    format!("wal.{generation}")
}

impl Store {
    /// Opens the store in `dir`, creating it when no manifest exists.
    pub fn open(dir: impl AsRef<Path>, config: StoreConfig) -> Result<Store> {
        Self::open_with_env(dir, config, Env::new())
    }

    pub fn open_with_env(dir: impl AsRef<Path>, config: StoreConfig, env: Env) -> Result<Store> {
        config.validate()?;
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let manifest = match Manifest::open(&env, &dir)? {
            Some(m) => m,
            None => Manifest::create(&env, &dir, 1)?,
        };
        let cache = BlockCache::new(config.block_cache_bytes);
        let state = manifest.state().clone();
        let mut partitions = Vec::with_capacity(state.partitions.len());
        for (lower, rec) in &state.partitions {
            let mut tables = Vec::with_capacity(rec.tables.len());
            for &id in &rec.tables {
                tables.push(Arc::new(Table::open(&env, &dir, TableId(id), Some(cache.clone()))?));
            }
            let remix = match rec.remix {
                Some(id) => Some(Arc::new(
                    RemixView::open(&dir, id, tables.clone())?.with_search_mode(config.search_mode),
                )),
                None if tables.is_empty() => None,
                None => {
                    return Err(Error::corruption(MANIFEST, "partition with tables but no index"))
                }
            };
            partitions.push(Arc::new(Partition {
                lower: lower.clone(),
                generation: rec.generation,
                tables,
                remix,
                remix_id: rec.remix,
            }));
        }
        if partitions.first().is_none_or(|p| !p.lower.is_empty()) {
            return Err(Error::corruption(MANIFEST, "partitions do not start at the empty key"));
        }
        remove_orphans(&env, &dir, &state)?;
        let (table, wal) = memwal::recover(
            &env,
            &dir.join(wal_name(state.wal_generation)),
            config.max_log_bytes,
            config.sync_writes,
        )?;
        let version = StoreVersion {
            partitions,
            wal_generation: state.wal_generation,
            sequence: state.sequence,
        };
        let inner = Arc::new(Inner {
            ids: AtomicU64::new(state.max_file_id() + 1),
            dir,
            env,
            cache,
            mem: MemTables::with_active(table),
            version: RwLock::new(Arc::new(version)),
            writer: Mutex::new(Writer { wal }),
            manifest: Mutex::new(manifest),
            flush_lock: Mutex::new(()),
            wake: Condvar::new(),
            state: Mutex::new(BackgroundState::default()),
            stats: Mutex::new(FlushStats::default()),
            config,
        });
        let flusher = inner.config.background_flush.then(|| {
            let inner = inner.clone();
            std::thread::spawn(move || inner.background())
        });
        Ok(Store { inner, flusher })
    }

    pub fn dir(&self) -> &Path {
        &self.inner.dir
    }

    pub fn config(&self) -> &StoreConfig {
        &self.inner.config
    }

    pub fn env(&self) -> &Env {
        &self.inner.env
    }

    pub fn io(&self) -> IoSnapshot {
        self.inner.env.stats().snapshot()
    }

    pub fn flush_stats(&self) -> FlushStats {
        self.inner.stats.lock().clone()
    }

    pub fn version(&self) -> Arc<StoreVersion> {
        self.inner.version.read().clone()
    }

    /// Names of the files the current version references, sorted.
    pub fn live_files(&self) -> Vec<String> {
        let v = self.version();
        let mut out = vec![MANIFEST.to_string(), wal_name(v.wal_generation)];
        for p in &v.partitions {
            out.extend(p.tables.iter().map(|t| t.id().file_name()));
            out.extend(p.remix_id.map(remix_file_name));
        }
        out.sort();
        out
    }

    pub fn set(&self, key: &[u8], value: &[u8]) -> Result<()> {
        self.inner.write(key, Some(value))
    }

    pub fn del(&self, key: &[u8]) -> Result<()> {
        self.inner.write(key, None)
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.inner.get(key)
    }

    /// Iterator over a pinned snapshot of the partitions, positioned at
    /// the first key.
    pub fn iter(&self) -> Result<StoreIterator> {
        let mut it = self.inner.iterator();
        it.seek(b"")?;
        Ok(it)
    }

    /// Iterator positioned at the first key not below `target`.
    pub fn seek(&self, target: &[u8]) -> Result<StoreIterator> {
        let mut it = self.inner.iterator();
        it.seek(target)?;
        Ok(it)
    }

    /// Up to `limit` pairs starting at the first key not below `target`.
    pub fn scan(&self, target: &[u8], limit: usize) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        let mut it = self.seek(target)?;
        let mut out = Vec::with_capacity(limit.min(1024));
        while out.len() < limit {
            let Some((k, v)) = it.current() else { break };
            out.push((k.to_vec(), v.to_vec()));
            it.next()?;
        }
        Ok(out)
    }

    /// Persists everything buffered so far: freezes the active MemTable and
    /// flushes it, waiting for any flush already underway.
    pub fn flush(&self) -> Result<()> {
        loop {
            self.inner.flush_immutable()?;
            let _w = self.inner.writer.lock();
            if self.inner.mem.active().is_empty() {
                return Ok(());
            }
            match self.inner.mem.freeze_and_swap() {
                Ok(_) => break,
                Err(Error::Busy) => continue,
                Err(e) => return Err(e),
            }
        }
        self.inner.flush_immutable()
    }

    /// Blocks until no immutable MemTable is pending.
    pub fn wait_for_flush(&self) -> Result<()> {
        loop {
            self.inner.flush_immutable()?;
            if self.inner.mem.immutable().is_none() {
                return Ok(());
            }
        }
    }

    /// Error from the most recent failed background flush, if any.
    pub fn background_error(&self) -> Option<String> {
        self.inner.state.lock().last_error.clone()
    }

    /// Stops the background flusher; buffered data stays in the log.
    pub fn close(mut self) -> Result<()> {
        self.stop();
        Ok(())
    }

    fn stop(&mut self) {
        if let Some(h) = self.flusher.take() {
            self.inner.state.lock().shutdown = true;
            self.inner.wake.notify_all();
            let _ = h.join();
        }
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        self.stop();
    }
}

fn remove_orphans(env: &Env, dir: &Path, state: &ManifestState) -> Result<()> {
    let mut live: HashSet<String> = HashSet::new();
    for p in state.partitions.values() {
        live.extend(p.tables.iter().map(|&id| TableId(id).file_name()));
        live.extend(p.remix.map(remix_file_name));
    }
    live.insert(wal_name(state.wal_generation));
    live.insert(MANIFEST.to_string());
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        let ours = TableId::parse_file_name(&name).is_some()
            || parse_remix_file_name(&name).is_some()
            || name.starts_with("wal.")
            || name == MANIFEST_TMP;
        if ours && !live.contains(&name) {
            env.remove(&dir.join(&name))?;
        }
    }
    Ok(())
}

impl Inner {
    fn version(&self) -> Arc<StoreVersion> {
        self.version.read().clone()
    }

    fn iterator(&self) -> StoreIterator {
        let (active, imm) = self.mem.both();
        StoreIterator::new(self.version(), active, imm)
    }

    fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        let (active, imm) = self.mem.both();
        if let Some(e) = active.get(key) {
            return Ok(e.value);
        }
        if let Some(e) = imm.and_then(|t| t.get(key)) {
            return Ok(e.value);
        }
        let v = self.version();
        let p = &v.partitions[v.find(key)];
        match &p.remix {
            Some(r) => Ok(r.point_get(key)?.flatten()),
            None => Ok(None),
        }
    }

    fn write(&self, key: &[u8], value: Option<&[u8]>) -> Result<()> {
        let len = record_len(key, value);
        if len > MAX_RECORD {
            return Err(Error::EntryTooLarge {
                size: len,
                limit: MAX_RECORD,
            });
        }
        let needs_flush = {
            let mut w = self.writer.lock();
            let limit = self.config.memtable_bytes;
            let bytes = self.mem.active().approximate_bytes();
            let needs_flush = bytes >= limit;
            if needs_flush {
                match self.mem.freeze_and_swap() {
                    Ok(_) => {}
                    Err(Error::Busy) if bytes >= 2 * limit => return Err(Error::Busy),
                    Err(Error::Busy) => {}
                    Err(e) => return Err(e),
                }
            }
            let active = self.mem.active();
            let count = active.get(key).map_or(1, |e| e.count.saturating_add(1));
            let rec = WalRecord {
                key: key.to_vec(),
                value: value.map(<[u8]>::to_vec),
                count,
            };
            match w.wal.append(std::slice::from_ref(&rec)) {
                Ok(()) => {}
                Err(Error::LogFull { .. }) => return Err(Error::Busy),
                Err(e) => return Err(e),
            }
            active.restore(
                key,
                MemEntry {
                    value: rec.value,
                    count,
                },
            );
            self.env
                .stats()
                .add_user((key.len() + value.map_or(0, <[u8]>::len)) as u64);
            needs_flush
        };
        if needs_flush {
            if self.config.background_flush {
                self.state.lock().pending = true;
                self.wake.notify_all();
            } else {
                self.flush_immutable()?;
            }
        }
        Ok(())
    }

    fn background(self: Arc<Self>) {
        loop {
            {
                let mut s = self.state.lock();
                while !s.shutdown && !s.pending {
                    self.wake.wait(&mut s);
                }
                if s.shutdown {
                    return;
                }
                s.pending = false;
            }
            let res = self.flush_immutable();
            let mut s = self.state.lock();
            s.last_error = res.err().map(|e| e.to_string());
        }
    }

    fn exec_context(&self) -> ExecContext<'_> {
        ExecContext {
            env: &self.env,
            dir: &self.dir,
            ids: &self.ids,
            cache: Some(self.cache.clone()),
            config: &self.config.compaction,
            search: self.config.search_mode,
        }
    }

    /// Flushes the immutable MemTable if there is one.
    fn flush_immutable(&self) -> Result<()> {
        let _f = self.flush_lock.lock();
        let Some(imm) = self.mem.immutable() else {
            return Ok(());
        };
        let version = self.version();
        let parts = &version.partitions;
        let cfg = &self.config.compaction;

        let mut cold: Vec<Vec<StagedEntry>> = vec![Vec::new(); parts.len()];
        let mut hot: Vec<Vec<StagedEntry>> = vec![Vec::new(); parts.len()];
        let mut pi = 0;
        let mut slice = Vec::new();
        let mut flush_slice = |pi: usize, slice: &mut Vec<StagedEntry>| {
            let (c, h) = split_hot(std::mem::take(slice), cfg.hot_key_threshold);
            cold[pi] = c;
            hot[pi] = h;
        };
        for (key, e) in imm.entries() {
            while pi + 1 < parts.len() && parts[pi + 1].lower <= key {
                flush_slice(pi, &mut slice);
                pi += 1;
            }
            slice.push(StagedEntry {
                key,
                value: e.value,
                count: e.count,
            });
        }
        flush_slice(pi, &mut slice);

        let targets: Vec<usize> = (0..parts.len()).filter(|&i| !cold[i].is_empty()).collect();
        let inputs: Vec<_> = targets
            .iter()
            .map(|&i| {
                let p = &parts[i];
                (
                    PartitionLayout::of(&p.tables, p.remix.as_deref()),
                    StagedStats::of(&cold[i]),
                )
            })
            .collect();
        let plans = global_schedule(&inputs, cfg);
        let mut aborted = vec![false; parts.len()];
        let mut jobs: Vec<(usize, Decision)> = Vec::new();
        let mut stats = FlushStats::default();
        for plan in &plans {
            let i = targets[plan.partition];
            stats.staged_bytes += plan.staged_bytes;
            match plan.decision {
                Decision::Abort => {
                    aborted[i] = true;
                    stats.aborted += 1;
                    stats.aborted_bytes += plan.staged_bytes;
                }
                d => jobs.push((i, d)),
            }
        }

        let ctx = self.exec_context();
        let minor_before: Vec<u64> = jobs
            .iter()
            .map(|&(i, d)| match d {
                Decision::Minor => self.table_file_bytes(&parts[i]),
                _ => 0,
            })
            .collect();
        let results = self.run_jobs(&ctx, parts, &cold, &jobs);
        let mut outcomes: Vec<(usize, CompactionOutcome)> = Vec::with_capacity(jobs.len());
        let mut failure = None;
        for (r, &(i, _)) in results.into_iter().zip(&jobs) {
            match r {
                Ok(o) => outcomes.push((i, o)),
                Err(e) => failure = failure.or(Some(e)),
            }
        }
        if let Some(e) = failure {
            for (_, o) in outcomes {
                o.discard(&ctx);
            }
            return Err(e);
        }
        for (j, &(i, d)) in jobs.iter().enumerate() {
            if d == Decision::Minor {
                stats.minor_rewritten_bytes += self.table_file_bytes(&parts[i]) - minor_before[j];
            }
        }

        let (next, edits, old_remix) = self.next_version(&version, &mut outcomes, &mut stats);
        let committed = self.manifest.lock().commit(&edits);
        let sequence = match committed {
            Ok(s) => s,
            Err(e) => {
                for (_, o) in outcomes {
                    o.discard(&ctx);
                }
                return Err(e);
            }
        };
        *self.version.write() = Arc::new(StoreVersion { sequence, ..next });
        for id in old_remix {
            let _ = self.env.remove(&self.dir.join(remix_file_name(id)));
        }
        for (_, o) in &outcomes {
            for t in &o.removed {
                t.mark_obsolete();
            }
        }
        drop(outcomes);

        let mut w = self.writer.lock();
        let active = self.mem.active();
        let mut records = Vec::new();
        let mut reinserted = Vec::new();
        for i in 0..parts.len() {
            if aborted[i] {
                for e in cold[i].iter().chain(&hot[i]) {
                    if active.get(&e.key).is_none() {
                        reinserted.push((e, None));
                    }
                }
                continue;
            }
            for e in &hot[i] {
                let half = e.count / 2;
                let entry = match active.get(&e.key) {
                    Some(cur) => MemEntry {
                        value: cur.value,
                        count: cur.count.saturating_add(half),
                    },
                    None => MemEntry {
                        value: e.value.clone(),
                        count: half,
                    },
                };
                records.push(WalRecord {
                    key: e.key.clone(),
                    value: entry.value.clone(),
                    count: entry.count,
                });
                reinserted.push((e, Some(entry)));
                stats.hot_keys_reinserted += 1;
            }
        }
        w.wal.append(&records)?;
        for (e, entry) in reinserted {
            let entry = entry.unwrap_or_else(|| MemEntry {
                value: e.value.clone(),
                count: e.count,
            });
            active.restore(&e.key, entry);
        }
        self.mem.release_immutable();
        w.wal.gc(|r| {
            active
                .get(&r.key)
                .is_some_and(|e| e.count == r.count && e.value == r.value)
        })?;
        drop(w);

        stats.flushes = 1;
        let mut total = self.stats.lock();
        total.flushes += stats.flushes;
        total.minor += stats.minor;
        total.major += stats.major;
        total.split += stats.split;
        total.aborted += stats.aborted;
        total.aborted_bytes += stats.aborted_bytes;
        total.staged_bytes += stats.staged_bytes;
        total.hot_keys_reinserted += stats.hot_keys_reinserted;
        total.minor_rewritten_bytes += stats.minor_rewritten_bytes;
        Ok(())
    }

    fn table_file_bytes(&self, p: &Partition) -> u64 {
        p.tables
            .iter()
            .map(|t| self.env.stats().file_bytes(&t.id().file_name()))
            .sum()
    }

    fn run_jobs(
        &self,
        ctx: &ExecContext<'_>,
        parts: &[Arc<Partition>],
        staged: &[Vec<StagedEntry>],
        jobs: &[(usize, Decision)],
    ) -> Vec<Result<CompactionOutcome>> {
        let slots: Vec<Mutex<Option<Result<CompactionOutcome>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicU64::new(0);
        let workers = self.config.compaction_workers.min(jobs.len());
        let work = || loop {
            let j = next.fetch_add(1, Ordering::SeqCst) as usize;
            let Some(&(i, d)) = jobs.get(j) else { break };
            let p = &parts[i];
            let r = execute_compaction(ctx, &p.lower, &p.tables, p.remix.as_ref(), &staged[i], d);
            *slots[j].lock() = Some(r);
        };
        if workers <= 1 {
            work();
        } else {
            std::thread::scope(|s| {
                for _ in 0..workers {
                    s.spawn(work);
                }
            });
        }
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("every job ran"))
            .collect()
    }

    /// The version after applying `outcomes`, the manifest edits that
    /// record it and the REMIX files it no longer uses.
    fn next_version(
        &self,
        version: &StoreVersion,
        outcomes: &mut [(usize, CompactionOutcome)],
        stats: &mut FlushStats,
    ) -> (StoreVersion, Vec<Edit>, Vec<u64>) {
        outcomes.sort_by_key(|(i, _)| *i);
        let mut partitions = Vec::with_capacity(version.partitions.len());
        let mut edits = Vec::new();
        let mut old_remix = Vec::new();
        let mut next = outcomes.iter().peekable();
        for (i, p) in version.partitions.iter().enumerate() {
            let Some((_, o)) = next.next_if(|(j, _)| *j == i) else {
                partitions.push(p.clone());
                continue;
            };
            old_remix.extend(p.remix_id);
            let generation = p.generation + 1;
            match o.decision {
                Decision::Split => {
                    stats.split += 1;
                    edits.push(Edit::PartitionRemove {
                        lower: p.lower.clone(),
                    });
                }
                Decision::Major(_) => {
                    stats.major += 1;
                    for t in &o.removed {
                        edits.push(Edit::TableRemove {
                            lower: p.lower.clone(),
                            id: t.id().0,
                        });
                    }
                }
                _ => stats.minor += 1,
            }
            let kept: HashSet<TableId> = p.tables.iter().map(|t| t.id()).collect();
            for np in &o.partitions {
                if o.decision == Decision::Split {
                    edits.push(Edit::PartitionAdd {
                        lower: np.lower.clone(),
                        generation,
                    });
                }
                for t in &np.tables {
                    if o.decision == Decision::Split || !kept.contains(&t.id()) {
                        edits.push(Edit::TableAdd {
                            lower: np.lower.clone(),
                            id: t.id().0,
                        });
                    }
                }
                let remix_id = np.remix.as_ref().map(|(id, _)| *id);
                if remix_id.is_some() || o.decision != Decision::Split {
                    edits.push(Edit::RemixSet {
                        lower: np.lower.clone(),
                        id: remix_id,
                        generation,
                    });
                }
                partitions.push(Arc::new(Partition {
                    lower: np.lower.clone(),
                    generation,
                    tables: np.tables.clone(),
                    remix: np.remix.as_ref().map(|(_, v)| v.clone()),
                    remix_id,
                }));
            }
        }
        (
            StoreVersion {
                partitions,
                wal_generation: version.wal_generation,
                sequence: version.sequence,
            },
            edits,
            old_remix,
        )
    }
}

#[cfg(test)]
mod tests;
