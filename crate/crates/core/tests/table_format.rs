use std::sync::Arc;

use proptest::prelude::*;
use remixdb::{CursorOffset, Env, KVEntry, Table, TableId};

fn entries_strategy() -> impl Strategy<Value = Vec<KVEntry>> {
    prop::collection::btree_map(
        prop::collection::vec(any::<u8>(), 1..40),
        prop::option::weighted(0.9, prop::collection::vec(any::<u8>(), 0..700)),
        0..600,
    )
    .prop_map(|m| m.into_iter().map(|(key, value)| KVEntry { key, value }).collect())
}

fn read_all(t: &Arc<Table>) -> Vec<KVEntry> {
    let mut s = t.scan();
    let mut out = Vec::new();
    while let Some(e) = s.current().unwrap() {
        out.push(e.to_entry());
        s.advance();
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn file_round_trip_preserves_entries(entries in entries_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let env = Env::new();
        let mut it = entries.clone().into_iter().peekable();
        let built = Table::build(&env, dir.path(), TableId(3), &mut it, u64::MAX >> 1, None).unwrap();
        prop_assert!(it.next().is_none());
        prop_assert!(built.file_size() >= built.unit_count() as u64 * 4096);
        let t = Arc::new(Table::open(&env, dir.path(), TableId(3), None).unwrap());
        prop_assert_eq!(t.entry_count() as usize, entries.len());
        prop_assert_eq!(read_all(&t), entries);
    }

    #[test]
    fn size_limit_stops_before_overflow(entries in entries_strategy(), units in 1u64..6) {
        let dir = tempfile::tempdir().unwrap();
        let env = Env::new();
        let mut it = entries.clone().into_iter().peekable();
        let t = Arc::new(Table::build(&env, dir.path(), TableId(1), &mut it, units * 4096, None).unwrap());
        prop_assert!(t.unit_count() as u64 * 4096 <= units * 4096 || t.entry_count() == 1);
        let n = t.entry_count() as usize;
        prop_assert_eq!(read_all(&t), entries[..n].to_vec());
        prop_assert_eq!(it.count(), entries.len() - n);
    }

    #[test]
    fn advance_and_rank_agree(entries in entries_strategy(), steps in prop::collection::vec(0usize..50, 1..20)) {
        let t = Arc::new(Table::from_entries(TableId(1), entries.iter().map(KVEntry::as_ref)).unwrap());
        let mut at = t.first();
        let mut rank = 0usize;
        for n in steps {
            at = t.advance(at, n);
            rank = (rank + n).min(entries.len());
            prop_assert_eq!(t.rank(at), rank);
            if at == CursorOffset::EXHAUSTED {
                prop_assert_eq!(rank, entries.len());
                break;
            }
            prop_assert_eq!(t.read_entry(at).unwrap(), entries[rank].clone());
        }
    }
}
