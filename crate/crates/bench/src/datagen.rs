//! Sorted-run generation with controlled locality.

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use remixdb::table::EntryRef;
use remixdb::{Result, Table, TableId};

/// Keys per chunk dealt to a single run under strong locality.
pub const STRONG_CHUNK: usize = 64;
pub const KEY_LEN: usize = 16;
pub const VALUE_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    /// Each key goes to a random run.
    Weak,
    /// Each chunk of consecutive keys goes to a random run.
    Strong,
}

#[derive(Debug, Clone, Serialize)]
pub struct GenSpec {
    pub runs: usize,
    pub keys_per_run: usize,
    pub locality: Locality,
    pub value_len: usize,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(runs: usize, keys_per_run: usize, locality: Locality, seed: u64) -> Self {
        GenSpec {
            runs,
            keys_per_run,
            locality,
            value_len: VALUE_LEN,
            seed,
        }
    }

    pub fn total_keys(&self) -> usize {
        self.runs * self.keys_per_run
    }

    /// Number of keys per run that fills `bytes` of table space.
    pub fn keys_for_bytes(bytes: usize, value_len: usize) -> usize {
        bytes / (KEY_LEN + value_len + 5)
    }
}

/// Fixed-width key of global index `i`.
pub fn key(i: u64) -> [u8; KEY_LEN] {
    let mut k = [0u8; KEY_LEN];
    k.copy_from_slice(format!("{i:016}").as_bytes());
    k
}

/// Run chosen for each global key index.
pub fn deal(total: usize, runs: usize, locality: Locality, rng: &mut impl Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(total);
    match locality {
        Locality::Weak => out.extend((0..total).map(|_| rng.gen_range(0..runs) as u8)),
        Locality::Strong => {
            while out.len() < total {
                let r = rng.gen_range(0..runs) as u8;
                let n = STRONG_CHUNK.min(total - out.len());
                out.extend(std::iter::repeat_n(r, n));
            }
        }
    }
    out
}

/// Builds `spec.runs` in-memory runs, oldest first, that partition the global
/// key set `key(0..total)` per the locality rule.
pub fn gen_runs(spec: &GenSpec) -> Result<Vec<Arc<Table>>> {
    assert!((1..=16).contains(&spec.runs), "run count must be in 1..=16");
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let owner = deal(spec.total_keys(), spec.runs, spec.locality, &mut rng);
    let mut per_run: Vec<Vec<u64>> = vec![Vec::new(); spec.runs];
    for (i, &r) in owner.iter().enumerate() {
        per_run[r as usize].push(i as u64);
    }
    let mut value = vec![0u8; spec.value_len];
    per_run
        .iter()
        .enumerate()
        .map(|(r, ids)| {
            let keys: Vec<_> = ids.iter().map(|&i| key(i)).collect();
            let values: Vec<Vec<u8>> = ids
                .iter()
                .map(|_| {
                    rng.fill(value.as_mut_slice());
                    value.clone()
                })
                .collect();
            let entries = keys.iter().zip(&values).map(|(k, v)| EntryRef {
                key: k,
                value: Some(v),
            });
            Table::from_entries(TableId(r as u64 + 1), entries).map(Arc::new)
        })
        .collect()
}
