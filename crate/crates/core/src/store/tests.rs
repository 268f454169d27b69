use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};

use super::*;
use crate::env::FaultInjector;

fn small() -> StoreConfig {
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

fn k(i: u32) -> Vec<u8> {
    format!("k{i:07}").into_bytes()
}

fn scan_all(s: &Store) -> Vec<(Vec<u8>, Vec<u8>)> {
    s.scan(b"", usize::MAX).unwrap()
}

fn oracle_scan(m: &BTreeMap<Vec<u8>, Vec<u8>>) -> Vec<(Vec<u8>, Vec<u8>)> {
    m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
}

fn dir_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

fn expected_files(s: &Store) -> Vec<String> {
    s.live_files()
}

#[test]
fn fresh_store_has_one_empty_partition() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    let v = s.version();
    assert_eq!(v.partitions.len(), 1);
    assert!(v.partitions[0].lower.is_empty());
    assert!(v.partitions[0].remix.is_none());
    assert_eq!(s.get(b"x").unwrap(), None);
    assert!(!s.iter().unwrap().valid());
}

#[test]
fn set_get_del() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    s.set(b"k", b"v").unwrap();
    assert_eq!(s.get(b"k").unwrap(), Some(b"v".to_vec()));
    s.del(b"k").unwrap();
    assert_eq!(s.get(b"k").unwrap(), None);
    let big = vec![0u8; MAX_RECORD];
    assert!(matches!(s.set(b"k", &big), Err(Error::EntryTooLarge { .. })));
}

#[test]
fn flush_into_one_table_partition_is_minor() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    for i in 0..50 {
        s.set(&k(i * 2), b"a").unwrap();
    }
    s.flush().unwrap();
    for i in 0..50 {
        s.set(&k(i * 2 + 1), b"b").unwrap();
    }
    s.flush().unwrap();
    let v = s.version();
    assert_eq!(v.partitions.len(), 1);
    let view = v.partitions[0].remix.as_ref().unwrap();
    assert_eq!(view.run_count(), 2);
    assert_eq!(s.flush_stats().minor, 2);
    assert_eq!(s.flush_stats().minor_rewritten_bytes, 0);
    assert_eq!(s.get(&k(7)).unwrap(), Some(b"b".to_vec()));
    assert_eq!(scan_all(&s).len(), 100);
}

#[test]
fn memtable_shadows_tables_both_ways() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    s.set(b"a", b"old").unwrap();
    s.set(b"b", b"old").unwrap();
    s.flush().unwrap();
    s.del(b"a").unwrap();
    s.flush().unwrap();
    s.set(b"a", b"new").unwrap();
    s.del(b"b").unwrap();
    assert_eq!(s.get(b"a").unwrap(), Some(b"new".to_vec()));
    assert_eq!(s.get(b"b").unwrap(), None);
    assert_eq!(scan_all(&s), vec![(b"a".to_vec(), b"new".to_vec())]);
}

#[test]
fn reopen_preserves_contents_and_file_set() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = BTreeMap::new();
    {
        let s = Store::open(dir.path(), small()).unwrap();
        for i in 0..3000 {
            let key = k(i * 7 % 2000);
            let v = format!("v{i}").into_bytes();
            s.set(&key, &v).unwrap();
            m.insert(key, v);
        }
        assert!(s.flush_stats().flushes > 0);
        s.close().unwrap();
    }
    let s = Store::open(dir.path(), small()).unwrap();
    assert_eq!(scan_all(&s), oracle_scan(&m));
    assert_eq!(dir_files(dir.path()), expected_files(&s));
}

#[test]
fn aborted_partition_stays_buffered_and_durable() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.compaction.wa_abort_threshold = 1.0;
    cfg.compaction.abort_budget_fraction = 1.0;
    {
        let s = Store::open(dir.path(), cfg.clone()).unwrap();
        for i in 0..20 {
            s.set(&k(i), b"v").unwrap();
        }
        s.flush().unwrap();
        assert_eq!(s.flush_stats().aborted, 1);
        assert_eq!(s.version().table_count(), 0);
        assert_eq!(s.get(&k(3)).unwrap(), Some(b"v".to_vec()));
    }
    let s = Store::open(dir.path(), cfg).unwrap();
    assert_eq!(scan_all(&s).len(), 20);
}

#[test]
fn hot_keys_return_to_memtable_with_halved_counts() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    for _ in 0..10 {
        s.set(b"hot", b"h").unwrap();
    }
    s.set(b"cold", b"c").unwrap();
    s.flush().unwrap();
    assert_eq!(s.flush_stats().hot_keys_reinserted, 1);
    let e = s.inner.mem.active().get(b"hot").unwrap();
    assert_eq!(e.count, 5);
    assert_eq!(s.version().partitions[0].tables[0].entry_count(), 1);
    drop(s);
    let s = Store::open(dir.path(), small()).unwrap();
    assert_eq!(s.inner.mem.active().get(b"hot").unwrap().count, 5);
    assert_eq!(s.get(b"hot").unwrap(), Some(b"h".to_vec()));
    assert_eq!(s.get(b"cold").unwrap(), Some(b"c".to_vec()));
}

#[test]
fn scans_cross_partition_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    let mut m = BTreeMap::new();
    let mut rng = rand::rngs::StdRng::seed_from_u64(3);
    for round in 0..30 {
        for _ in 0..400 {
            let key = k(rng.gen_range(0..5000));
            let v = vec![round as u8; 40];
            s.set(&key, &v).unwrap();
            m.insert(key, v);
        }
    }
    s.flush().unwrap();
    let v = s.version();
    assert!(v.partitions.len() > 2, "{} partitions", v.partitions.len());
    assert!(v.partitions.windows(2).all(|w| w[0].lower < w[1].lower));
    assert_eq!(scan_all(&s), oracle_scan(&m));
    for p in &v.partitions[1..] {
        let got = s.scan(&p.lower, 3).unwrap();
        let want: Vec<_> = m.range(p.lower.clone()..).take(3).map(|(a, b)| (a.clone(), b.clone())).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn random_ops_match_map() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    let mut m: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();
    let mut rng = rand::rngs::StdRng::seed_from_u64(99);
    for op in 0..40_000u32 {
        let key = k(rng.gen_range(0..3000));
        match rng.gen_range(0..10) {
            0..=5 => {
                let v = format!("{op}-{}", "x".repeat(rng.gen_range(0..60))).into_bytes();
                s.set(&key, &v).unwrap();
                m.insert(key, v);
            }
            6 => {
                s.del(&key).unwrap();
                m.remove(&key);
            }
            7 if op % 97 == 0 => s.flush().unwrap(),
            _ => assert_eq!(s.get(&key).unwrap(), m.get(&key).cloned()),
        }
        if op % 5000 == 0 {
            let start = k(rng.gen_range(0..3000));
            let got = s.scan(&start, 20).unwrap();
            let want: Vec<_> = m.range(start..).take(20).map(|(a, b)| (a.clone(), b.clone())).collect();
            assert_eq!(got, want);
        }
    }
    let st = s.flush_stats();
    assert!(st.major + st.split > 0, "{st:?}");
    assert_eq!(scan_all(&s), oracle_scan(&m));
    drop(s);
    let s = Store::open(dir.path(), small()).unwrap();
    assert_eq!(scan_all(&s), oracle_scan(&m));
}

#[test]
fn iterator_pins_its_version() {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), small()).unwrap();
    for i in 0..500 {
        s.set(&k(i), b"one").unwrap();
    }
    s.flush().unwrap();
    let mut it = s.iter().unwrap();
    let before = it.version().clone();
    for i in 0..500 {
        s.del(&k(i)).unwrap();
    }
    s.flush().unwrap();
    assert!(!Arc::ptr_eq(&before, &s.version()));
    let mut n = 0;
    while it.valid() {
        assert_eq!(it.value().unwrap(), b"one");
        it.next().unwrap();
        n += 1;
    }
    assert_eq!(n, 500);
    assert!(scan_all(&s).is_empty());
}

#[test]
fn background_flush_keeps_reads_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.background_flush = true;
    let s = Store::open(dir.path(), cfg).unwrap();
    let mut m = BTreeMap::new();
    for i in 0..20_000u32 {
        let key = k(i % 4000);
        let v = i.to_le_bytes().to_vec();
        loop {
            match s.set(&key, &v) {
                Ok(()) => break,
                Err(Error::Busy) => s.wait_for_flush().unwrap(),
                Err(e) => panic!("{e}"),
            }
        }
        m.insert(key, v);
    }
    s.wait_for_flush().unwrap();
    assert!(s.background_error().is_none());
    assert_eq!(scan_all(&s), oracle_scan(&m));
}

#[test]
fn crash_mid_compaction_recovers_prior_version() {
    let dir = tempfile::tempdir().unwrap();
    let fill = |s: &Store, tag: &[u8]| {
        for i in 0..400 {
            s.set(&k(i), tag).unwrap();
        }
    };
    let ops = {
        let faults = FaultInjector::counting();
        let s = Store::open_with_env(dir.path(), small(), Env::with_faults(faults.clone())).unwrap();
        fill(&s, b"first");
        s.flush().unwrap();
        fill(&s, b"second");
        let before = faults.operations();
        s.flush().unwrap();
        (before, faults.operations())
    };
    // replay the same history, crashing half way through the second flush
    let dir = tempfile::tempdir().unwrap();
    let faults = FaultInjector::crash_after(ops.0 + (ops.1 - ops.0) / 2);
    let s = Store::open_with_env(dir.path(), small(), Env::with_faults(faults.clone())).unwrap();
    fill(&s, b"first");
    s.flush().unwrap();
    fill(&s, b"second");
    assert!(s.flush().is_err());
    assert!(faults.has_crashed());
    drop(s);
    let s = Store::open(dir.path(), small()).unwrap();
    for i in 0..400 {
        assert_eq!(s.get(&k(i)).unwrap(), Some(b"second".to_vec()));
    }
    assert_eq!(dir_files(dir.path()), expected_files(&s));
}

#[test]
fn busy_when_log_is_full() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.max_log_bytes = 8 * crate::env::UNIT as u64;
    cfg.memtable_bytes = 1 << 20;
    let s = Store::open(dir.path(), cfg).unwrap();
    let v = vec![1u8; 3000];
    let mut busy = false;
    for i in 0..20 {
        if let Err(e) = s.set(&k(i), &v) {
            assert!(matches!(e, Error::Busy));
            busy = true;
            break;
        }
    }
    assert!(busy);
    s.flush().unwrap();
    s.set(&k(100), &v).unwrap();
}
