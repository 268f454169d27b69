use std::collections::HashSet;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{smallest_first, CompactionConfig, Decision, PartitionLayout, StagedEntry};
use crate::env::{Env, WriteKind};
use crate::error::{Error, Result};
use crate::remix::{remix_file_name, RemixView, SearchMode};
use crate::table::{BlockCache, EnvSink, TableBuilder};
use crate::table::{Table, TableId};

/// Where and how compaction writes its files.
pub struct ExecContext<'a> {
    pub env: &'a Env,
    pub dir: &'a Path,
    pub ids: &'a AtomicU64,
    pub cache: Option<Arc<BlockCache>>,
    pub config: &'a CompactionConfig,
    pub search: SearchMode,
}

impl ExecContext<'_> {
    fn next_id(&self) -> u64 {
        self.ids.fetch_add(1, Ordering::SeqCst)
    }
}

/// A partition produced by compaction.
#[derive(Debug, Clone)]
pub struct NewPartition {
    pub lower: Vec<u8>,
    pub tables: Vec<Arc<Table>>,
    pub remix: Option<(u64, Arc<RemixView>)>,
}

#[derive(Debug)]
pub struct CompactionOutcome {
    pub decision: Decision,
    /// Replacement partitions, in key order. One unless the partition split.
    pub partitions: Vec<NewPartition>,
    /// Input tables no longer referenced by the new partitions.
    pub removed: Vec<Arc<Table>>,
    pub table_bytes: u64,
    pub remix_bytes: u64,
    /// Lowest file id allocated by this compaction.
    pub first_id: u64,
}

impl CompactionOutcome {
    pub fn bytes_written(&self) -> u64 {
        self.table_bytes + self.remix_bytes
    }

    /// Deletes every file this compaction created.
    pub fn discard(self, ctx: &ExecContext<'_>) {
        let removed: HashSet<TableId> = self.removed.iter().map(|t| t.id()).collect();
        for p in self.partitions {
            for t in &p.tables {
                if !removed.contains(&t.id()) && t.id().0 >= self.first_id {
                    t.mark_obsolete();
                }
            }
            if let Some((id, _)) = p.remix {
                let _ = ctx.env.remove(&ctx.dir.join(remix_file_name(id)));
            }
        }
    }
}

/// Rolls sorted entries into tables of at most `max_file_size` bytes.
struct TableWriter<'c, 'a> {
    ctx: &'c ExecContext<'a>,
    current: Option<(TableId, TableBuilder<EnvSink>)>,
    done: Vec<Arc<Table>>,
    bytes: u64,
}

impl<'c, 'a> TableWriter<'c, 'a> {
    fn new(ctx: &'c ExecContext<'a>) -> Self {
        TableWriter {
            ctx,
            current: None,
            done: Vec::new(),
            bytes: 0,
        }
    }

    fn open(&self) -> Result<(TableId, TableBuilder<EnvSink>)> {
        let id = TableId(self.ctx.next_id());
        let file = self.ctx.env.create(&self.ctx.dir.join(id.file_name()))?;
        let sink = EnvSink::new(self.ctx.env.clone(), file, id.file_name(), WriteKind::Table);
        Ok((id, TableBuilder::new(sink, self.ctx.config.max_file_size)))
    }

    fn seal(&mut self) -> Result<()> {
        if let Some((id, b)) = self.current.take() {
            let (sink, _) = b.finish()?;
            sink.finish()?;
            let t = Table::open(self.ctx.env, self.ctx.dir, id, self.ctx.cache.clone())?;
            self.bytes += t.file_size();
            self.done.push(Arc::new(t));
        }
        Ok(())
    }

    fn push(&mut self, key: &[u8], value: Option<&[u8]>) -> Result<()> {
        if self.current.is_none() {
            self.current = Some(self.open()?);
        }
        let (_, b) = self.current.as_mut().unwrap();
        if b.add(key, value)? {
            return Ok(());
        }
        self.seal()?;
        self.current = Some(self.open()?);
        let (_, b) = self.current.as_mut().unwrap();
        if b.add(key, value)? {
            Ok(())
        } else {
            Err(Error::EntryTooLarge {
                size: key.len() + value.map_or(0, <[u8]>::len),
                limit: self.ctx.config.max_file_size as usize,
            })
        }
    }

    fn finish(mut self) -> Result<(Vec<Arc<Table>>, u64)> {
        self.seal()?;
        Ok((self.done, self.bytes))
    }

    /// Deletes finished tables after a failure.
    fn abandon(done: &[Arc<Table>]) {
        for t in done {
            t.mark_obsolete();
        }
    }
}

/// Merges `staged` with the entries of `view` accepted by `keep`, newer
/// staged entries shadowing equal keys.
fn merge_into(
    w: &mut TableWriter<'_, '_>,
    staged: &[StagedEntry],
    view: Option<&Arc<RemixView>>,
    keep: &dyn Fn(usize, bool) -> bool,
    purge: bool,
) -> Result<()> {
    let emit = |w: &mut TableWriter<'_, '_>, k: &[u8], v: Option<&[u8]>| {
        if purge && v.is_none() {
            Ok(())
        } else {
            w.push(k, v)
        }
    };
    let mut s = 0;
    let Some(view) = view else {
        for e in staged {
            emit(w, &e.key, e.value.as_deref())?;
        }
        return Ok(());
    };
    let mut it = view.iter();
    it.set_masked(false);
    it.seek_to_first();
    loop {
        while let Some((run, newest)) = it.selector() {
            if keep(run, newest) {
                break;
            }
            it.next();
        }
        let st = staged.get(s);
        match (st, it.peek()?) {
            (None, None) => break,
            (Some(e), None) => {
                emit(w, &e.key, e.value.as_deref())?;
                s += 1;
            }
            (None, Some(r)) => {
                emit(w, r.key, r.value)?;
                it.next();
            }
            (Some(e), Some(r)) => match e.key.as_slice().cmp(r.key) {
                std::cmp::Ordering::Less => {
                    emit(w, &e.key, e.value.as_deref())?;
                    s += 1;
                }
                std::cmp::Ordering::Equal => {
                    emit(w, &e.key, e.value.as_deref())?;
                    s += 1;
                    it.next();
                }
                std::cmp::Ordering::Greater => {
                    emit(w, r.key, r.value)?;
                    it.next();
                }
            },
        }
    }
    Ok(())
}

fn index_partition(
    ctx: &ExecContext<'_>,
    lower: Vec<u8>,
    tables: Vec<Arc<Table>>,
) -> Result<(NewPartition, u64)> {
    if tables.is_empty() {
        return Ok((NewPartition { lower, tables, remix: None }, 0));
    }
    let view = RemixView::build(tables.clone(), ctx.config.group_size)?.with_search_mode(ctx.search);
    let id = ctx.next_id();
    let bytes = view.persist(ctx.env, ctx.dir, id)?;
    Ok((
        NewPartition {
            lower,
            tables,
            remix: Some((id, Arc::new(view))),
        },
        bytes,
    ))
}

/// Applies `decision` to one partition. `staged` must be sorted by key and
/// free of duplicates. Nothing is installed: the caller commits the
/// outcome or discards it.
pub fn execute_compaction(
    ctx: &ExecContext<'_>,
    lower: &[u8],
    tables: &[Arc<Table>],
    view: Option<&Arc<RemixView>>,
    staged: &[StagedEntry],
    decision: Decision,
) -> Result<CompactionOutcome> {
    let n = tables.len();
    let first_id = ctx.ids.load(Ordering::SeqCst);
    let mut w = TableWriter::new(ctx);
    let result = (|| -> Result<CompactionOutcome> {
        match decision {
            Decision::Abort => Err(Error::Config("an aborted compaction has nothing to run".into())),
            Decision::Minor => {
                merge_into(&mut w, staged, None, &|_, _| false, false)?;
                let (new, table_bytes) = std::mem::replace(&mut w, TableWriter::new(ctx)).finish()?;
                let mut runs = tables.to_vec();
                runs.extend(new);
                let (p, remix_bytes) = index_partition(ctx, lower.to_vec(), runs)?;
                Ok(CompactionOutcome {
                    decision,
                    partitions: vec![p],
                    removed: Vec::new(),
                    table_bytes,
                    remix_bytes,
                    first_id,
                })
            }
            Decision::Major(k) => {
                if k > n || k == 0 {
                    return Err(Error::Config(format!("cannot merge {k} of {n} tables")));
                }
                let layout = PartitionLayout::of(tables, None);
                let merged: HashSet<usize> = smallest_first(&layout)[..k].iter().copied().collect();
                merge_into(
                    &mut w,
                    staged,
                    view,
                    &|run, newest| newest && merged.contains(&run),
                    k == n,
                )?;
                let (new, table_bytes) = std::mem::replace(&mut w, TableWriter::new(ctx)).finish()?;
                let mut runs = Vec::with_capacity(n - k + new.len());
                let mut removed = Vec::with_capacity(k);
                for (i, t) in tables.iter().enumerate() {
                    if merged.contains(&i) {
                        removed.push(t.clone());
                    } else {
                        runs.push(t.clone());
                    }
                }
                runs.extend(new);
                let (p, remix_bytes) = index_partition(ctx, lower.to_vec(), runs)?;
                Ok(CompactionOutcome {
                    decision,
                    partitions: vec![p],
                    removed,
                    table_bytes,
                    remix_bytes,
                    first_id,
                })
            }
            Decision::Split => {
                merge_into(&mut w, staged, view, &|_, newest| newest, true)?;
                let (new, table_bytes) = std::mem::replace(&mut w, TableWriter::new(ctx)).finish()?;
                let mut partitions = Vec::new();
                let mut remix_bytes = 0;
                let fanout = ctx.config.split_fanout;
                if new.is_empty() {
                    partitions.push(NewPartition {
                        lower: lower.to_vec(),
                        tables: Vec::new(),
                        remix: None,
                    });
                }
                for (i, chunk) in new.chunks(fanout).enumerate() {
                    let bound = if i == 0 {
                        lower.to_vec()
                    } else {
                        chunk[0].smallest_key().unwrap_or_default().to_vec()
                    };
                    let (p, b) = index_partition(ctx, bound, chunk.to_vec())?;
                    remix_bytes += b;
                    partitions.push(p);
                }
                Ok(CompactionOutcome {
                    decision,
                    partitions,
                    removed: tables.to_vec(),
                    table_bytes,
                    remix_bytes,
                    first_id,
                })
            }
        }
    })();
    if result.is_err() {
        if let Some((id, b)) = w.current.take() {
            drop(b);
            let _ = ctx.env.remove(&ctx.dir.join(id.file_name()));
        }
        TableWriter::abandon(&w.done);
    }
    result
}
