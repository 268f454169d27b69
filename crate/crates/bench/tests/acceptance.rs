//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=3,4` to run a subset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use remix_bench::cost::{self, PROFILES};
use remix_bench::datagen::{self, GenSpec, Locality};
use remix_bench::micro::{self, Fixture, IndexKind, MicroOp, MicroResult};
use remix_bench::verify::{self, TrialSpec};
use remix_bench::workload;
use remixdb::compact::{
    execute_compaction, global_schedule, plan_compaction, CompactionConfig, Decision, ExecContext,
    PartitionLayout, StagedEntry, StagedStats,
};
use remixdb::memwal::{self, Wal, WalRecord};
use remixdb::table::EntryRef;
use remixdb::{
    keys, Env, FaultInjector, KVEntry, RemixView, SearchMode, Store, StoreConfig, Table,
    TableId,
};

const MB: u64 = 1 << 20;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn budget(start: Instant, limit: Duration) -> Check {
    ensure(start.elapsed() <= limit, format!("took {:.1?} of {limit:?}", start.elapsed()))
}

fn dir_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

// 1
fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let report = verify::verify_oracle(20_241, 1000).map_err(|e| e.to_string())?;
    let detail = format!(
        "{} trials, {} entries, {} divergences",
        report.trials, report.entries, report.divergences
    );
    if let Some((seed, d)) = &report.first {
        return Err(format!("{detail}; first at seed {seed}: {} {}", d.check, d.detail));
    }
    budget(start, Duration::from_secs(300))?;
    ensure(report.divergences == 0 && report.trials == 1000, detail)
}

// 2
fn comparison_free_next() -> Check {
    let start = Instant::now();
    let spec = TrialSpec {
        seed: 77,
        keys_per_run: vec![10_000; 8],
        overlap: 1.0,
        group_size: 32,
        mode: verify::SearchModeName::Full,
    };
    let runs: Vec<Arc<Table>> = verify::trial_runs(&spec)
        .iter()
        .enumerate()
        .map(|(i, r)| Arc::new(Table::from_entries(TableId(i as u64), r.iter().map(KVEntry::as_ref)).unwrap()))
        .collect();
    let view = Arc::new(RemixView::build(runs, 32).map_err(|e| e.to_string())?);
    let mut it = view.iter();
    it.seek_to_first();
    let mut bytes = 0usize;
    let mut calls = 0u64;
    let before = keys::comparisons();
    while calls < 1_000_000 {
        if !it.valid() {
            it.seek_to_first();
        }
        bytes += it.peek().unwrap().map_or(0, |e| e.key.len());
        it.next();
        calls += 1;
    }
    let cmp = keys::comparisons() - before;
    budget(start, Duration::from_secs(60))?;
    ensure(
        cmp == 0 && bytes > 0,
        format!("{calls} next calls, {cmp} comparisons"),
    )
}

// 3
fn seek_comparison_counts() -> Check {
    let start = Instant::now();
    let n = 1usize << 16;
    let mut owner: Vec<usize> = (0..4 * n).map(|i| i / n).collect();
    owner.shuffle(&mut StdRng::seed_from_u64(3));
    let mut per_run = vec![Vec::new(); 4];
    for (i, &r) in owner.iter().enumerate() {
        per_run[r].push(i as u64);
    }
    let value = [7u8; datagen::VALUE_LEN];
    let runs: Vec<Arc<Table>> = per_run
        .iter()
        .enumerate()
        .map(|(r, ids)| {
            let keys: Vec<_> = ids.iter().map(|&i| datagen::key(i)).collect();
            let entries = keys.iter().map(|k| EntryRef { key: k, value: Some(&value) });
            Arc::new(Table::from_entries(TableId(r as u64), entries).unwrap())
        })
        .collect();
    let fx = Fixture::over(runs, 4 * n as u64, 32).map_err(|e| e.to_string())?;
    let targets = fx.targets(100_000, 5);
    let merge = micro::run_microbench(&fx, MicroOp::Seek, IndexKind::Merge, &targets).unwrap();
    let remix = micro::run_microbench(&fx, MicroOp::Seek, IndexKind::RemixFull, &targets).unwrap();
    let (lo, hi) = (4.0 * 16.0 * 0.9, 4.0 * 17.0 * 1.1);
    budget(start, Duration::from_secs(60))?;
    ensure(
        (lo..=hi).contains(&merge.comparisons_per_op) && remix.comparisons_per_op <= 20.0,
        format!(
            "merge {:.2} in [{lo:.1}, {hi:.1}], remix {:.2} <= 20",
            merge.comparisons_per_op, remix.comparisons_per_op
        ),
    )
}

// 4
fn storage_cost_formula() -> Check {
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for p in &PROFILES {
        for (i, d) in cost::GROUP_SIZES.into_iter().enumerate() {
            worst = worst.max((p.cost(d) - p.published[i]).abs());
            cells += 1;
        }
    }
    let usr = PROFILES.iter().find(|p| p.name == "USR").unwrap();
    let ratio_err = (usr.ratio_pct() - usr.published_ratio_pct).abs();
    ensure(
        cells == 24 && worst <= 0.05 && ratio_err <= 0.1,
        format!(
            "{cells} cells, max error {worst:.3} bytes/key; USR ratio {:.3}% (error {ratio_err:.3})",
            usr.ratio_pct()
        ),
    )
}

/// Throughput measurements shared by criteria 5 to 8.
struct Speeds {
    seek: BTreeMap<usize, (f64, f64, f64)>,
    next50: BTreeMap<usize, (f64, f64, f64)>,
    get8: (f64, f64, f64),
    elapsed: Duration,
}

fn measure_speeds() -> Speeds {
    let start = Instant::now();
    let keys = GenSpec::keys_for_bytes(8 << 20, datagen::VALUE_LEN);
    let ops = 100_000;
    let rounds = 7;
    let mut seek = BTreeMap::new();
    let mut next50 = BTreeMap::new();
    let mut get8 = (0.0, 0.0, 0.0);
    let triple = |r: Vec<MicroResult>| (r[0].ops_per_sec, r[1].ops_per_sec, r[2].ops_per_sec);
    for runs in [2usize, 4, 8, 16] {
        let fx = Fixture::generate(&GenSpec::new(runs, keys, Locality::Weak, 100 + runs as u64)).unwrap();
        let kinds = [IndexKind::RemixFull, IndexKind::RemixPartial, IndexKind::Merge];
        seek.insert(runs, triple(micro::compare_throughput(&fx, MicroOp::Seek, &kinds, ops, rounds, 1).unwrap()));
        if runs == 2 || runs == 8 {
            let r = micro::compare_throughput(&fx, MicroOp::SeekNext50, &kinds, ops, rounds, 2).unwrap();
            next50.insert(runs, triple(r));
        }
        if runs == 8 {
            let kinds = [IndexKind::RemixFull, IndexKind::Merge, IndexKind::MergeBloom];
            get8 = triple(micro::compare_throughput(&fx, MicroOp::Get, &kinds, ops, rounds, 3).unwrap());
        }
    }
    Speeds {
        seek,
        next50,
        get8,
        elapsed: start.elapsed(),
    }
}

// 5
fn seek_speedup(s: &Speeds) -> Check {
    let speedup: Vec<(usize, f64)> = s.seek.iter().map(|(&r, &(full, _, merge))| (r, full / merge)).collect();
    let at = |r| speedup.iter().find(|x| x.0 == r).unwrap().1;
    let monotone = speedup.windows(2).all(|w| w[1].1 >= w[0].1);
    let detail = speedup
        .iter()
        .map(|(r, x)| format!("{r} runs {x:.2}x"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(
        at(8) >= 3.0 && at(16) >= 5.0 && monotone && s.elapsed <= Duration::from_secs(600),
        detail,
    )
}

// 6
fn next50_speedup(s: &Speeds) -> Check {
    let x2 = s.next50[&2].0 / s.next50[&2].2;
    let x8 = s.next50[&8].0 / s.next50[&8].2;
    ensure(x2 >= 1.2 && x8 >= 1.7, format!("2 runs {x2:.2}x, 8 runs {x8:.2}x"))
}

// 7
fn get_vs_bloom(s: &Speeds) -> Check {
    let (remix, merge, bloom) = s.get8;
    let a = remix / bloom;
    let b = merge / bloom;
    ensure(
        a >= 0.6 && b <= 0.5,
        format!("remix/bloom {a:.2}, no-filter/bloom {b:.2}"),
    )
}

// 8
fn partial_vs_full(s: &Speeds) -> Check {
    let (full, partial, _) = s.seek[&8];
    let seek = full / partial;
    let (nf, np, _) = s.next50[&8];
    let gap = (nf - np).abs() / nf.max(np);
    ensure(
        seek >= 1.1 && gap <= 0.10,
        format!("seek full/partial {seek:.2}x, next50 gap {:.1}%", gap * 100.0),
    )
}

// 9
fn write_amplification() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = StoreConfig {
        memtable_bytes: 8 << 20,
        compaction: CompactionConfig {
            max_file_size: 16 * MB,
            ..Default::default()
        },
        ..Default::default()
    };
    let store = Store::open(dir.path(), cfg).map_err(|e| e.to_string())?;
    let wa = workload::random_insert_load(&store, 1 << 30, 120, 9)
        .map_err(|e| e.to_string())?
        .unwrap_or(f64::NAN);
    let stats = store.flush_stats();
    let io = store.io();
    store.close().map_err(|e| e.to_string())?;
    budget(start, Duration::from_secs(900))?;
    ensure(
        wa <= 6.0 && stats.minor > 0 && stats.minor_rewritten_bytes == 0,
        format!(
            "WA {wa:.2} ({} user bytes), {} minor / {} major / {} split, {} bytes rewritten by minor",
            io.user, stats.minor, stats.major, stats.split, stats.minor_rewritten_bytes
        ),
    )
}

// 10
fn planner_cases() -> Check {
    let layout = |sizes: &[u64]| PartitionLayout {
        table_sizes: sizes.to_vec(),
        key_count: 0,
        avg_key_len: 0.0,
    };
    let t5 = CompactionConfig {
        table_count_threshold: 5,
        ..Default::default()
    };
    let fig8 = plan_compaction(&layout(&[16 * MB, 16 * MB, 2 * MB, 2 * MB, 2 * MB]), 8 * MB, &t5);
    if fig8 != Decision::Major(3) {
        return Err(format!("layout 16,16,2,2,2 + 8 MB chose {fig8:?}"));
    }
    let full = (14.2 * MB as f64) as u64;
    let split = plan_compaction(&layout(&[full; 10]), MB, &CompactionConfig::default());
    if split != Decision::Split {
        return Err(format!("ten full tables chose {split:?}"));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let env = Env::new();
    let ids = AtomicU64::new(1);
    let cfg = CompactionConfig {
        max_file_size: 4 * remixdb::env::UNIT as u64,
        split_fanout: 2,
        group_size: 16,
        ..Default::default()
    };
    let ctx = ExecContext {
        env: &env,
        dir: dir.path(),
        ids: &ids,
        cache: None,
        config: &cfg,
        search: SearchMode::Full,
    };
    let value = vec![b'v'; 3500];
    let old: Vec<KVEntry> = (0..8u32).map(|i| KVEntry::put(format!("key{:04}", 2 * i), value.clone())).collect();
    let mut it = old.into_iter().peekable();
    let table = Arc::new(
        Table::build(&env, dir.path(), TableId(ids.fetch_add(1, std::sync::atomic::Ordering::SeqCst)), &mut it, u64::MAX >> 1, None)
            .map_err(|e| e.to_string())?,
    );
    let view = Arc::new(RemixView::build(vec![table.clone()], 16).map_err(|e| e.to_string())?);
    let staged: Vec<StagedEntry> = (0..8u32)
        .map(|i| StagedEntry {
            key: format!("key{:04}", 2 * i + 1).into_bytes(),
            value: Some(value.clone()),
            count: 1,
        })
        .collect();
    let out = execute_compaction(&ctx, b"", &[table], Some(&view), &staged, Decision::Split)
        .map_err(|e| e.to_string())?;
    let tables: usize = out.partitions.iter().map(|p| p.tables.len()).sum();
    if tables != 4 || out.partitions.len() != 2 {
        return Err(format!("split of E=4 gave {} partitions over {tables} tables", out.partitions.len()));
    }

    let mut rng = StdRng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..40);
        let inputs: Vec<_> = (0..n)
            .map(|_| {
                let tables = rng.gen_range(0..=10);
                let sizes: Vec<u64> = (0..tables).map(|_| rng.gen_range(MB..=16 * MB)).collect();
                let bytes = rng.gen_range(1..=8 * MB);
                (
                    layout(&sizes),
                    StagedStats {
                        bytes,
                        keys: bytes / 100,
                        avg_key_len: 16.0,
                    },
                )
            })
            .collect();
        let plans = global_schedule(&inputs, &CompactionConfig::default());
        let total: u64 = plans.iter().map(|p| p.staged_bytes).sum();
        let aborted: u64 = plans
            .iter()
            .filter(|p| p.decision == Decision::Abort)
            .map(|p| p.staged_bytes)
            .sum();
        worst = worst.max(aborted as f64 / total as f64);
    }
    ensure(
        worst <= 0.15,
        format!("Major(3), Split, 2 partitions; worst abort share {:.1}% over 100 schedules", worst * 100.0),
    )
}

fn crash_config() -> StoreConfig {
    StoreConfig {
        memtable_bytes: 48 * 1024,
        compaction: CompactionConfig {
            max_file_size: 32 * 1024,
            table_count_threshold: 4,
            group_size: 16,
            ..Default::default()
        },
        background_flush: false,
        ..Default::default()
    }
}

#[derive(Clone)]
enum Step {
    Set(Vec<u8>, Vec<u8>),
    Del(Vec<u8>),
    Flush,
}

fn crash_script(seed: u64) -> Vec<Step> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..1500)
        .map(|i| {
            let key = format!("key{:05}", rng.gen_range(0..600)).into_bytes();
            match rng.gen_range(0..100) {
                0..=84 => {
                    let len = rng.gen_range(50..400);
                    let mut v = format!("{seed}:{i}:").into_bytes();
                    v.resize(len, b'.');
                    Step::Set(key, v)
                }
                85..=97 => Step::Del(key),
                _ => Step::Flush,
            }
        })
        .collect()
}

/// Replays `script` until the first error. Returns the acknowledged state
/// and the write that was in flight when the error hit, if any.
#[allow(clippy::type_complexity)]
fn replay(
    store: &Store,
    script: &[Step],
) -> (BTreeMap<Vec<u8>, Vec<u8>>, Option<(Vec<u8>, Option<Vec<u8>>)>) {
    let mut acked = BTreeMap::new();
    for step in script {
        let r = match step {
            Step::Set(k, v) => store.set(k, v),
            Step::Del(k) => store.del(k),
            Step::Flush => store.flush(),
        };
        match (r, step) {
            (Ok(()), Step::Set(k, v)) => {
                acked.insert(k.clone(), v.clone());
            }
            (Ok(()), Step::Del(k)) => {
                acked.remove(k);
            }
            (Ok(()), Step::Flush) => {}
            (Err(_), Step::Set(k, v)) => return (acked, Some((k.clone(), Some(v.clone())))),
            (Err(_), Step::Del(k)) => return (acked, Some((k.clone(), None))),
            (Err(_), Step::Flush) => return (acked, None),
        }
    }
    (acked, None)
}

// 11
fn crash_safety() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(11);
    let mut kinds = BTreeSet::new();
    for trial in 0..100u64 {
        let script = crash_script(trial);
        let total = {
            let dir = tempfile::tempdir().unwrap();
            let faults = FaultInjector::counting();
            let store = Store::open_with_env(dir.path(), crash_config(), Env::with_faults(faults.clone()))
                .map_err(|e| e.to_string())?;
            let (_, pending) = replay(&store, &script);
            if pending.is_some() {
                return Err(format!("trial {trial}: dry run failed"));
            }
            let s = store.flush_stats();
            if s.major + s.split == 0 {
                return Err(format!("trial {trial}: script never compacts"));
            }
            faults.operations()
        };
        let kill = rng.gen_range(1..=total);
        let dir = tempfile::tempdir().unwrap();
        let faults = FaultInjector::crash_after(kill);
        let (acked, pending) = {
            let out = match Store::open_with_env(dir.path(), crash_config(), Env::with_faults(faults.clone())) {
                Ok(store) => replay(&store, &script),
                Err(_) if faults.has_crashed() => (BTreeMap::new(), None),
                Err(e) => return Err(format!("trial {trial}: open: {e}")),
            };
            if !faults.has_crashed() {
                return Err(format!("trial {trial}: kill point {kill} of {total} not reached"));
            }
            out
        };
        let store = Store::open(dir.path(), crash_config()).map_err(|e| format!("trial {trial}: reopen: {e}"))?;
        let got: BTreeMap<Vec<u8>, Vec<u8>> = store
            .scan(b"", usize::MAX)
            .map_err(|e| e.to_string())?
            .into_iter()
            .collect();
        let mut alternative = acked.clone();
        if let Some((k, v)) = &pending {
            match v {
                Some(v) => alternative.insert(k.clone(), v.clone()),
                None => alternative.remove(k),
            };
        }
        if got != acked && got != alternative {
            let missing = acked.iter().filter(|(k, v)| got.get(*k) != Some(v)).count();
            return Err(format!(
                "trial {trial}: kill at {kill}/{total}: {missing} acknowledged keys differ after recovery"
            ));
        }
        let files = dir_files(dir.path());
        if files != store.live_files() {
            return Err(format!("trial {trial}: files {files:?} vs manifest {:?}", store.live_files()));
        }
        kinds.insert(if pending.is_some() { "write" } else { "flush" });
    }
    budget(start, Duration::from_secs(600))?;
    Ok(format!("100 kill points, crashes during {:?}", kinds))
}

fn wal_rec(k: &str, len: usize, count: u8) -> WalRecord {
    WalRecord {
        key: k.as_bytes().to_vec(),
        value: Some(vec![b'x'; len]),
        count,
    }
}

fn mem_state(t: &memwal::MemTable) -> Vec<(Vec<u8>, memwal::MemEntry)> {
    t.entries()
}

// 12
fn wal_gc_boundary() -> Check {
    let start = Instant::now();
    let env = Env::new();
    let max = 64 * MB;
    let dir = tempfile::tempdir().unwrap();

    let boundary = |lens: [usize; 4]| -> Result<memwal::GcReport, String> {
        let path = dir.path().join(format!("wal.b{}", lens[0]));
        let mut wal = Wal::create(&env, &path, max, false).map_err(|e| e.to_string())?;
        let recs: Vec<_> = lens.iter().enumerate().map(|(i, &n)| wal_rec(&format!("a{i}"), n, 1)).collect();
        wal.append(&recs).map_err(|e| e.to_string())?;
        if wal.block_count() != 1 {
            return Err("records did not share one block".into());
        }
        let live = recs[0].clone();
        let report = wal.gc(|r| *r == live).map_err(|e| e.to_string())?;
        drop(wal);
        let (t, _) = memwal::recover(&env, &path, max, false).map_err(|e| e.to_string())?;
        if t.len() != 1 || t.get(&live.key).is_none() {
            return Err("recovery after GC lost the live record".into());
        }
        Ok(report)
    };
    let at = boundary([1000; 4])?;
    let below = boundary([999, 1000, 1000, 1000])?;
    let exact = wal_rec("a0", 1000, 1).encoded_len() * 4 == [1000usize; 4].iter().map(|&n| wal_rec("a0", n, 1).encoded_len()).sum::<usize>();
    if !exact || at.remapped_blocks != 1 || at.rewritten_blocks != 0 {
        return Err(format!("block at 25% live: {at:?}"));
    }
    if below.remapped_blocks != 0 || below.rewritten_blocks != 1 {
        return Err(format!("block below 25% live: {below:?}"));
    }

    let mut rng = StdRng::seed_from_u64(12);
    for round in 0..20 {
        let path = dir.path().join(format!("wal.r{round}"));
        let mut wal = Wal::create(&env, &path, max, false).map_err(|e| e.to_string())?;
        let mut counts: BTreeMap<String, u8> = BTreeMap::new();
        for _ in 0..rng.gen_range(50..400) {
            let batch: Vec<WalRecord> = (0..rng.gen_range(1..6))
                .map(|_| {
                    let k = format!("k{}", rng.gen_range(0..80));
                    let c = counts.entry(k.clone()).or_insert(0);
                    *c = c.saturating_add(1);
                    let len = rng.gen_range(10..900);
                    if rng.gen_bool(0.1) {
                        WalRecord { key: k.into_bytes(), value: None, count: *c }
                    } else {
                        wal_rec(&k, len, *c)
                    }
                })
                .collect();
            wal.append(&batch).map_err(|e| e.to_string())?;
        }
        let copy = dir.path().join(format!("wal.c{round}"));
        std::fs::copy(&path, &copy).map_err(|e| e.to_string())?;
        let (before, _) = memwal::recover(&env, &copy, max, false).map_err(|e| e.to_string())?;
        let state = mem_state(&before);
        let live_keys: BTreeSet<Vec<u8>> = state
            .iter()
            .filter(|_| rng.gen_bool(0.4))
            .map(|(k, _)| k.clone())
            .collect();
        let expected: Vec<_> = state.iter().filter(|(k, _)| live_keys.contains(k)).cloned().collect();
        let current: BTreeMap<_, _> = state.into_iter().collect();
        wal.gc(|r| {
            live_keys.contains(&r.key)
                && current
                    .get(&r.key)
                    .is_some_and(|e| e.value == r.value && e.count == r.count)
        })
        .map_err(|e| e.to_string())?;
        drop(wal);
        let (after, _) = memwal::recover(&env, &path, max, false).map_err(|e| e.to_string())?;
        if mem_state(&after) != expected {
            return Err(format!("round {round}: recovery after GC differs from live state"));
        }
    }
    budget(start, Duration::from_secs(60))?;
    Ok(format!(
        "25% block remapped {at:?}; below rewritten ({} bytes); 20 randomized logs recover their live state",
        below.rewritten_record_bytes
    ))
}

fn main() -> ExitCode {
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|s| s.contains(&n));
    let mut failed = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Check| {
        if !wanted(n) {
            return;
        }
        let t = Instant::now();
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS {n:>2} {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({secs:.1}s): {d}");
            }
        }
    };
    report(1, "oracle equivalence", &mut oracle_equivalence);
    report(2, "comparison-free next", &mut comparison_free_next);
    report(3, "seek comparison counts", &mut seek_comparison_counts);
    report(4, "storage cost formula", &mut storage_cost_formula);
    if (5..=8).any(wanted) {
        let speeds = measure_speeds();
        report(5, "seek speedup", &mut || seek_speedup(&speeds));
        report(6, "seek+next50 speedup", &mut || next50_speedup(&speeds));
        report(7, "get vs bloom baseline", &mut || get_vs_bloom(&speeds));
        report(8, "partial vs full in-group search", &mut || partial_vs_full(&speeds));
    }
    report(9, "write amplification", &mut write_amplification);
    report(10, "compaction planner cases", &mut planner_cases);
    report(11, "crash safety", &mut crash_safety);
    report(12, "wal gc boundary", &mut wal_gc_boundary);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
