//! Single-threaded Seek, Seek+Next50 and Get microbenchmarks over a set of
//! runs indexed by REMIX or by the merging-iterator baseline.

use std::hint::black_box;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::baseline::BaselineIndex;
use crate::datagen::{self, GenSpec};
use remixdb::remix::DEFAULT_GROUP_SIZE;
use remixdb::table::EntryRef;
use remixdb::{keys, RemixView, Result, SearchMode, Table};

pub const NEXT_COUNT: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MicroOp {
    Seek,
    SeekNext50,
    Get,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    RemixFull,
    RemixPartial,
    Merge,
    MergeBloom,
}

impl IndexKind {
    pub const ALL: [IndexKind; 4] = [
        IndexKind::RemixFull,
        IndexKind::RemixPartial,
        IndexKind::Merge,
        IndexKind::MergeBloom,
    ];
}

#[derive(Debug, Clone, Serialize)]
pub struct MicroResult {
    pub ops: usize,
    pub elapsed: Duration,
    pub ops_per_sec: f64,
    /// Mean key comparisons per operation, the Seek included.
    pub comparisons_per_op: f64,
    /// Mean comparisons spent past the Seek of one operation.
    pub next_comparisons_per_op: f64,
    pub blocks_per_op: f64,
    pub found: usize,
}

/// A dataset with every index kind built over it.
pub struct Fixture {
    pub runs: Vec<Arc<Table>>,
    pub total_keys: u64,
    remix_full: Arc<RemixView>,
    remix_partial: Arc<RemixView>,
    merge: BaselineIndex,
    merge_bloom: BaselineIndex,
}

impl Fixture {
    pub fn generate(spec: &GenSpec) -> Result<Fixture> {
        Self::generate_with_group_size(spec, DEFAULT_GROUP_SIZE)
    }

    pub fn generate_with_group_size(spec: &GenSpec, d: usize) -> Result<Fixture> {
        let runs = datagen::gen_runs(spec)?;
        Self::over(runs, spec.total_keys() as u64, d)
    }

    /// Indexes existing runs whose keys are `datagen::key(0..total_keys)`.
    pub fn over(runs: Vec<Arc<Table>>, total_keys: u64, d: usize) -> Result<Fixture> {
        let full = RemixView::build(runs.clone(), d)?;
        let partial = RemixView::build(runs.clone(), d)?.with_search_mode(SearchMode::Partial);
        Ok(Fixture {
            total_keys,
            remix_full: Arc::new(full),
            remix_partial: Arc::new(partial),
            merge: BaselineIndex::build(&runs, false)?,
            merge_bloom: BaselineIndex::build(&runs, true)?,
            runs,
        })
    }

    pub fn remix(&self, mode: SearchMode) -> &Arc<RemixView> {
        match mode {
            SearchMode::Full => &self.remix_full,
            SearchMode::Partial => &self.remix_partial,
        }
    }

    pub fn baseline(&self, bloom: bool) -> &BaselineIndex {
        if bloom {
            &self.merge_bloom
        } else {
            &self.merge
        }
    }

    fn block_fetches(&self) -> u64 {
        self.runs.iter().map(|t| t.block_fetches()).sum()
    }

    /// Uniformly random existing keys.
    pub fn targets(&self, n: usize, seed: u64) -> Vec<[u8; datagen::KEY_LEN]> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| datagen::key(rng.gen_range(0..self.total_keys)))
            .collect()
    }
}

fn copy_out(buf: &mut Vec<u8>, e: EntryRef<'_>) {
    buf.extend_from_slice(e.key);
    buf.extend_from_slice(e.value.unwrap_or_default());
}

/// Runs `op` once per target against `index` and reports the mean costs.
pub fn run_microbench(
    fx: &Fixture,
    op: MicroOp,
    index: IndexKind,
    targets: &[[u8; datagen::KEY_LEN]],
) -> Result<MicroResult> {
    let blocks_before = fx.block_fetches();
    let cmp_before = keys::comparisons();
    let mut next_cmp = 0u64;
    let mut found = 0usize;
    let mut buf = Vec::with_capacity(NEXT_COUNT * 256);
    let start = Instant::now();
    match index {
        IndexKind::RemixFull | IndexKind::RemixPartial => {
            let mode = if index == IndexKind::RemixFull {
                SearchMode::Full
            } else {
                SearchMode::Partial
            };
            let view = fx.remix(mode);
            let mut it = view.iter();
            for t in targets {
                match op {
                    MicroOp::Seek => {
                        it.seek(t)?;
                        found += usize::from(black_box(it.key()?).is_some());
                    }
                    MicroOp::SeekNext50 => {
                        it.seek(t)?;
                        found += usize::from(it.valid());
                        buf.clear();
                        let before = keys::comparisons();
                        for _ in 0..NEXT_COUNT {
                            let Some(e) = it.peek()? else { break };
                            copy_out(&mut buf, e);
                            it.next();
                        }
                        next_cmp += keys::comparisons() - before;
                        black_box(&buf);
                    }
                    MicroOp::Get => {
                        found += usize::from(black_box(view.point_get(t)?).is_some());
                    }
                }
            }
        }
        IndexKind::Merge | IndexKind::MergeBloom => {
            let base = fx.baseline(index == IndexKind::MergeBloom);
            let mut it = base.iter();
            for t in targets {
                match op {
                    MicroOp::Seek => {
                        it.seek(t)?;
                        found += usize::from(black_box(it.key()).is_some());
                    }
                    MicroOp::SeekNext50 => {
                        it.seek(t)?;
                        found += usize::from(it.valid());
                        buf.clear();
                        let before = keys::comparisons();
                        for _ in 0..NEXT_COUNT {
                            let Some(e) = it.peek() else { break };
                            copy_out(&mut buf, e);
                            it.next()?;
                        }
                        next_cmp += keys::comparisons() - before;
                        black_box(&buf);
                    }
                    MicroOp::Get => {
                        found += usize::from(black_box(base.get(t)?).is_some());
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let n = targets.len().max(1) as f64;
    Ok(MicroResult {
        ops: targets.len(),
        elapsed,
        ops_per_sec: targets.len() as f64 / elapsed.as_secs_f64(),
        comparisons_per_op: (keys::comparisons() - cmp_before) as f64 / n,
        next_comparisons_per_op: next_cmp as f64 / n,
        blocks_per_op: (fx.block_fetches() - blocks_before) as f64 / n,
        found,
    })
}

/// Best throughput of `rounds` repetitions, alternating between the index
/// kinds so that machine noise affects all of them alike.
pub fn compare_throughput(
    fx: &Fixture,
    op: MicroOp,
    kinds: &[IndexKind],
    ops: usize,
    rounds: usize,
    seed: u64,
) -> Result<Vec<MicroResult>> {
    let mut best: Vec<Option<MicroResult>> = vec![None; kinds.len()];
    for round in 0..rounds {
        let targets = fx.targets(ops, seed.wrapping_add(round as u64));
        for (i, &k) in kinds.iter().enumerate() {
            let r = run_microbench(fx, op, k, &targets)?;
            if best[i].as_ref().is_none_or(|b| r.ops_per_sec > b.ops_per_sec) {
                best[i] = Some(r);
            }
        }
    }
    Ok(best.into_iter().map(Option::unwrap).collect())
}
