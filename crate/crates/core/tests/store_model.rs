use std::collections::BTreeMap;

use proptest::prelude::*;
use remixdb::compact::CompactionConfig;
use remixdb::{Store, StoreConfig};

#[derive(Debug, Clone)]
enum Op {
    Set(u16, Vec<u8>),
    Del(u16),
    Flush,
    Reopen,
}

fn key(i: u16) -> Vec<u8> {
    format!("user{i:04}").into_bytes()
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        16 => (0u16..500, prop::collection::vec(any::<u8>(), 1..600)).prop_map(|(k, v)| Op::Set(k, v)),
        3 => (0u16..500).prop_map(Op::Del),
        1 => Just(Op::Flush),
        1 => Just(Op::Reopen),
    ]
}

fn config(background: bool) -> StoreConfig {
    StoreConfig {
        memtable_bytes: 24 * 1024,
        compaction: CompactionConfig {
            max_file_size: 16 * 1024,
            table_count_threshold: 4,
            group_size: 16,
            ..Default::default()
        },
        background_flush: background,
        ..Default::default()
    }
}

fn check(store: &Store, model: &BTreeMap<Vec<u8>, Vec<u8>>) -> Result<(), TestCaseError> {
    let all = store.scan(b"", usize::MAX).unwrap();
    let want: Vec<_> = model.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    prop_assert_eq!(all, want);
    for i in (0..500).step_by(37) {
        prop_assert_eq!(store.get(&key(i)).unwrap(), model.get(&key(i)).cloned());
        let got = store.scan(&key(i), 3).unwrap();
        let want: Vec<_> = model
            .range(key(i)..)
            .take(3)
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        prop_assert_eq!(got, want);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn store_matches_ordered_map(
        ops in prop::collection::vec(op_strategy(), 1..600),
        background in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path(), config(background)).unwrap();
        let mut model = BTreeMap::new();
        for op in ops {
            match op {
                Op::Set(k, v) => {
                    store.set(&key(k), &v).unwrap();
                    model.insert(key(k), v);
                }
                Op::Del(k) => {
                    store.del(&key(k)).unwrap();
                    model.remove(&key(k));
                }
                Op::Flush => {
                    store.flush().unwrap();
                    store.wait_for_flush().unwrap();
                    check(&store, &model)?;
                }
                Op::Reopen => {
                    store.close().unwrap();
                    store = Store::open(dir.path(), config(background)).unwrap();
                    check(&store, &model)?;
                }
            }
        }
        check(&store, &model)?;
        store.close().unwrap();
        let store = Store::open(dir.path(), config(background)).unwrap();
        check(&store, &model)?;
    }
}

#[test]
fn iterator_walks_keys_in_order_across_partitions() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path(), config(false)).unwrap();
    let value = vec![b'x'; 300];
    for i in (0..2000u16).rev() {
        store.set(&key(i % 1000), &value).unwrap();
    }
    store.flush().unwrap();
    assert!(store.version().partitions.len() > 1);
    let mut it = store.seek(&key(250)).unwrap();
    let mut seen = Vec::new();
    while let Some(k) = it.key() {
        seen.push(k.to_vec());
        it.next().unwrap();
    }
    let want: Vec<_> = (250..1000).map(key).collect();
    assert_eq!(seen, want);
}
