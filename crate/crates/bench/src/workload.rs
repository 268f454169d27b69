//! YCSB-style operation mixes against an open store.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution as _, Zipf};
use serde::Serialize;

use crate::error::{BenchError, Result};
use remixdb::{Error, Store};

pub const ZIPF_THETA: f64 = 0.99;
pub const SCAN_LEN: usize = 50;
pub const VALUE_SIZES: [usize; 3] = [40, 120, 400];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KeyDistribution {
    Sequential,
    Uniform,
    Zipfian,
    /// Zipfian over recency: the newest records are the hottest.
    Latest,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub read: u8,
    pub update: u8,
    pub insert: u8,
    pub scan: u8,
    pub read_modify_write: u8,
    pub distribution: KeyDistribution,
    pub scan_len: usize,
    /// Records loaded before the run.
    pub records: u64,
    pub operations: u64,
    pub value_len: usize,
}

impl WorkloadSpec {
    /// One of the standard mixes A to F.
    pub fn ycsb(letter: char, records: u64, operations: u64, value_len: usize) -> Option<WorkloadSpec> {
        use KeyDistribution::*;
        let (read, update, insert, scan, rmw, dist) = match letter.to_ascii_uppercase() {
            'A' => (50, 50, 0, 0, 0, Zipfian),
            'B' => (95, 5, 0, 0, 0, Zipfian),
            'C' => (100, 0, 0, 0, 0, Zipfian),
            'D' => (95, 0, 5, 0, 0, Latest),
            'E' => (0, 0, 5, 95, 0, Zipfian),
            'F' => (50, 0, 0, 0, 50, Zipfian),
            _ => return None,
        };
        Some(WorkloadSpec {
            name: letter.to_ascii_uppercase().to_string(),
            read,
            update,
            insert,
            scan,
            read_modify_write: rmw,
            distribution: dist,
            scan_len: SCAN_LEN,
            records,
            operations,
            value_len,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let sum = u32::from(self.read)
            + u32::from(self.update)
            + u32::from(self.insert)
            + u32::from(self.scan)
            + u32::from(self.read_modify_write);
        if sum != 100 {
            return Err(BenchError::InvalidSpec(format!("operation mix sums to {sum}")));
        }
        if self.value_len == 0 {
            return Err(BenchError::InvalidSpec("empty values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Read,
    Update,
    Insert,
    Scan,
    ReadModifyWrite,
}

fn pick_op(spec: &WorkloadSpec, rng: &mut impl Rng) -> Op {
    let mut x = rng.gen_range(0..100u8);
    for (share, op) in [
        (spec.read, Op::Read),
        (spec.update, Op::Update),
        (spec.insert, Op::Insert),
        (spec.scan, Op::Scan),
    ] {
        if x < share {
            return op;
        }
        x -= share;
    }
    Op::ReadModifyWrite
}

fn scramble(id: u64) -> u64 {
    let mut z = id.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Store key of record `id`; record ids map to scattered keys.
pub fn record_key(id: u64) -> [u8; 16] {
    let mut k = [0u8; 16];
    k.copy_from_slice(format!("{:016x}", scramble(id)).as_bytes());
    k
}

/// Value of record `id` at write `version`, recognizable when read back.
pub fn record_value(id: u64, version: u64, len: usize) -> Vec<u8> {
    let tag = format!("{id}:{version}:");
    let mut v = Vec::with_capacity(len);
    while v.len() < len {
        v.extend_from_slice(tag.as_bytes());
    }
    v.truncate(len);
    v
}

/// Draws record ids from a key distribution over a growing record set.
pub struct KeyChooser {
    dist: KeyDistribution,
    zipf: Option<(u64, Zipf<f64>)>,
    next_sequential: u64,
}

impl KeyChooser {
    pub fn new(dist: KeyDistribution) -> Self {
        KeyChooser {
            dist,
            zipf: None,
            next_sequential: 0,
        }
    }

    fn zipf_rank(&mut self, n: u64, rng: &mut impl Rng) -> u64 {
        if self.zipf.as_ref().is_none_or(|(m, _)| *m != n) {
            self.zipf = Some((n, Zipf::new(n, ZIPF_THETA).expect("positive record count")));
        }
        let (m, z) = self.zipf.as_ref().unwrap();
        (z.sample(rng) as u64 - 1).min(m - 1)
    }

    /// An existing record id in `0..n`.
    pub fn choose(&mut self, n: u64, rng: &mut impl Rng) -> u64 {
        match self.dist {
            KeyDistribution::Sequential => {
                let id = self.next_sequential % n;
                self.next_sequential += 1;
                id
            }
            KeyDistribution::Uniform => rng.gen_range(0..n),
            KeyDistribution::Zipfian => scramble(self.zipf_rank(n, rng)) % n,
            KeyDistribution::Latest => n - 1 - self.zipf_rank(n, rng),
        }
    }
}

fn retry_busy(store: &Store, mut f: impl FnMut() -> remixdb::Result<()>) -> Result<()> {
    loop {
        match f() {
            Err(Error::Busy) => store.wait_for_flush()?,
            other => return Ok(other?),
        }
    }
}

/// Inserts records `0..records` in id order with the given value size.
pub fn load(store: &Store, records: u64, value_len: usize) -> Result<()> {
    for id in 0..records {
        let v = record_value(id, 0, value_len);
        retry_busy(store, || store.set(&record_key(id), &v))?;
    }
    store.wait_for_flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LatencySummary {
    pub mean_us: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub max_us: f64,
}

impl LatencySummary {
    fn of(mut samples: Vec<Duration>) -> LatencySummary {
        if samples.is_empty() {
            return LatencySummary::default();
        }
        samples.sort();
        let us = |d: Duration| d.as_secs_f64() * 1e6;
        let at = |q: f64| us(samples[((samples.len() - 1) as f64 * q).round() as usize]);
        LatencySummary {
            mean_us: samples.iter().map(|&d| us(d)).sum::<f64>() / samples.len() as f64,
            p50_us: at(0.5),
            p99_us: at(0.99),
            max_us: us(*samples.last().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkloadReport {
    pub operations: u64,
    pub elapsed_secs: f64,
    pub throughput: f64,
    /// Bytes written to storage over user bytes; `None` when nothing was written.
    pub write_amplification: Option<f64>,
    pub latency: LatencySummary,
    pub reads_found: u64,
    pub reads_missing: u64,
    /// Reads that disagreed with the shadow map (check mode only).
    pub mismatches: u64,
}

/// Runs the mix on `threads` clients. With `check` set the run is single
/// threaded and every read is compared against a shadow map.
pub fn run_workload(
    store: &Store,
    spec: &WorkloadSpec,
    threads: usize,
    seed: u64,
    check: bool,
) -> Result<WorkloadReport> {
    spec.validate()?;
    let threads = if check { 1 } else { threads.max(1) };
    let io_before = store.io();
    let record_count = AtomicU64::new(spec.records);
    let found = AtomicU64::new(0);
    let missing = AtomicU64::new(0);
    let mismatches = AtomicU64::new(0);
    let done = AtomicUsize::new(0);
    let start = Instant::now();
    let per_thread = spec.operations / threads as u64;
    let extra = spec.operations % threads as u64;
    let latencies = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let (record_count, found, missing, mismatches, done) =
                    (&record_count, &found, &missing, &mismatches, &done);
                let ops = per_thread + u64::from((t as u64) < extra);
                scope.spawn(move || -> Result<Vec<Duration>> {
                    let mut rng = StdRng::seed_from_u64(seed.wrapping_add(t as u64 * 7919));
                    let mut chooser = KeyChooser::new(spec.distribution);
                    let mut shadow: Option<BTreeMap<[u8; 16], Vec<u8>>> = check.then(|| {
                        (0..spec.records)
                            .map(|id| (record_key(id), record_value(id, 0, spec.value_len)))
                            .collect()
                    });
                    let mut lat = Vec::with_capacity(ops as usize);
                    for i in 0..ops {
                        let op = pick_op(spec, &mut rng);
                        let n = record_count.load(Ordering::Acquire).max(1);
                        let version = seed ^ (t as u64) << 40 ^ i;
                        let t0 = Instant::now();
                        match op {
                            Op::Read => {
                                let k = record_key(chooser.choose(n, &mut rng));
                                let v = store.get(&k)?;
                                if v.is_some() {
                                    found.fetch_add(1, Ordering::Relaxed);
                                } else {
                                    missing.fetch_add(1, Ordering::Relaxed);
                                }
                                if let Some(m) = &shadow {
                                    if m.get(&k) != v.as_ref() {
                                        mismatches.fetch_add(1, Ordering::Relaxed);
                                    }
                                }
                            }
                            Op::Update | Op::ReadModifyWrite => {
                                let id = chooser.choose(n, &mut rng);
                                let k = record_key(id);
                                if op == Op::ReadModifyWrite {
                                    let v = store.get(&k)?;
                                    if let Some(m) = &shadow {
                                        if m.get(&k) != v.as_ref() {
                                            mismatches.fetch_add(1, Ordering::Relaxed);
                                        }
                                    }
                                }
                                let v = record_value(id, version, spec.value_len);
                                retry_busy(store, || store.set(&k, &v))?;
                                if let Some(m) = &mut shadow {
                                    m.insert(k, v);
                                }
                            }
                            Op::Insert => {
                                let id = record_count.fetch_add(1, Ordering::AcqRel);
                                let k = record_key(id);
                                let v = record_value(id, version, spec.value_len);
                                retry_busy(store, || store.set(&k, &v))?;
                                if let Some(m) = &mut shadow {
                                    m.insert(k, v);
                                }
                            }
                            Op::Scan => {
                                let k = record_key(chooser.choose(n, &mut rng));
                                let got = store.scan(&k, spec.scan_len)?;
                                if let Some(m) = &shadow {
                                    let want: Vec<_> = m
                                        .range(k..)
                                        .take(spec.scan_len)
                                        .map(|(k, v)| (k.to_vec(), v.clone()))
                                        .collect();
                                    if got != want {
                                        mismatches.fetch_add(1, Ordering::Relaxed);
                                    }
                                }
                            }
                        }
                        lat.push(t0.elapsed());
                        done.fetch_add(1, Ordering::Relaxed);
                    }
                    Ok(lat)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("workload thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    store.wait_for_flush()?;
    let elapsed = start.elapsed().as_secs_f64();
    let io = store.io().since(&io_before);
    let ops = done.load(Ordering::Relaxed) as u64;
    Ok(WorkloadReport {
        operations: ops,
        elapsed_secs: elapsed,
        throughput: ops as f64 / elapsed,
        write_amplification: io.write_amplification(),
        latency: LatencySummary::of(latencies.into_iter().flatten().collect()),
        reads_found: found.into_inner(),
        reads_missing: missing.into_inner(),
        mismatches: mismatches.into_inner(),
    })
}

/// Random-order insertion of `bytes` worth of 16-byte keys and `value_len`
/// values, as used for write-amplification measurements. Returns the
/// store-wide WA over the load.
pub fn random_insert_load(store: &Store, bytes: u64, value_len: usize, seed: u64) -> Result<Option<f64>> {
    let before = store.io();
    let mut rng = StdRng::seed_from_u64(seed);
    let n = bytes / (16 + value_len as u64);
    let v = vec![0x5a; value_len];
    for _ in 0..n {
        let k = format!("{:016x}", rng.gen::<u64>());
        retry_busy(store, || store.set(k.as_bytes(), &v))?;
    }
    store.wait_for_flush()?;
    Ok(store.io().since(&before).write_amplification())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_mixes_are_valid() {
        for c in "ABCDEF".chars() {
            WorkloadSpec::ycsb(c, 10, 10, 120).unwrap().validate().unwrap();
        }
        assert!(WorkloadSpec::ycsb('G', 10, 10, 120).is_none());
    }

    #[test]
    fn bad_mix_is_rejected() {
        let mut s = WorkloadSpec::ycsb('A', 10, 10, 120).unwrap();
        s.read = 60;
        assert!(s.validate().is_err());
    }

    #[test]
    fn zipfian_prefers_hot_records() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut c = KeyChooser::new(KeyDistribution::Latest);
        let hits = (0..10_000).filter(|_| c.choose(1000, &mut rng) >= 990).count();
        assert!(hits > 3000, "{hits}");
        let mut c = KeyChooser::new(KeyDistribution::Zipfian);
        assert!((0..1000).all(|_| c.choose(50, &mut rng) < 50));
    }

    #[test]
    fn sequential_cycles() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut c = KeyChooser::new(KeyDistribution::Sequential);
        let ids: Vec<_> = (0..5).map(|_| c.choose(3, &mut rng)).collect();
        assert_eq!(ids, [0, 1, 2, 0, 1]);
    }

    #[test]
    fn values_round_trip_their_tag() {
        let v = record_value(12, 3, 40);
        assert_eq!(v.len(), 40);
        assert!(v.starts_with(b"12:3:"));
    }
}
