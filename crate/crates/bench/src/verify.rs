//! Randomized equivalence checks between REMIX and the merging iterator.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::baseline::BaselineIndex;
use crate::error::{BenchError, Result};
use remixdb::remix::{is_newest, selector_run};
use remixdb::{KVEntry, RemixView, SearchMode, Table, TableId};

pub const MAX_RUNS: usize = 8;
pub const MAX_KEYS_PER_RUN: usize = 10_000;
pub const OVERLAPS: [f64; 3] = [0.0, 0.5, 1.0];
pub const TOMBSTONE_RATE: f64 = 0.05;
pub const SEEKS_PER_TRIAL: usize = 100;
const ENTRIES_AFTER_SEEK: usize = 8;

/// Shape of one randomized trial, fully determined by its seed.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSpec {
    pub seed: u64,
    pub keys_per_run: Vec<usize>,
    pub overlap: f64,
    pub group_size: usize,
    pub mode: SearchModeName,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchModeName {
    Full,
    Partial,
}

impl From<SearchModeName> for SearchMode {
    fn from(m: SearchModeName) -> SearchMode {
        match m {
            SearchModeName::Full => SearchMode::Full,
            SearchModeName::Partial => SearchMode::Partial,
        }
    }
}

impl TrialSpec {
    pub fn from_seed(seed: u64) -> TrialSpec {
        let mut rng = StdRng::seed_from_u64(seed);
        let r = rng.gen_range(1..=MAX_RUNS);
        let scale = *[10usize, 200, MAX_KEYS_PER_RUN].choose(&mut rng).unwrap();
        TrialSpec {
            seed,
            keys_per_run: (0..r).map(|_| rng.gen_range(0..=scale)).collect(),
            overlap: *OVERLAPS.choose(&mut rng).unwrap(),
            group_size: [8usize, 16, 32, 64][rng.gen_range(0..4)],
            mode: if rng.gen_bool(0.5) {
                SearchModeName::Full
            } else {
                SearchModeName::Partial
            },
        }
    }

    pub fn runs(&self) -> usize {
        self.keys_per_run.len()
    }
}

/// Fault planted in the REMIX before checking, to confirm it is caught.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    None,
    SwapSelectors,
}

#[derive(Debug, Clone, Serialize)]
pub struct Divergence {
    pub check: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialOutcome {
    pub spec: TrialSpec,
    pub entries: usize,
    pub divergence: Option<Divergence>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub entries: usize,
    pub divergences: usize,
    /// First failing trial, replayable from its seed.
    pub first: Option<(u64, Divergence)>,
}

fn key_of(id: u64) -> Vec<u8> {
    format!("k{id}").into_bytes()
}

/// Sorted, duplicate-free run contents for `spec`.
pub fn trial_runs(spec: &TrialSpec) -> Vec<Vec<KVEntry>> {
    let mut rng = StdRng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let shared_domain = (2 * spec.keys_per_run.iter().max().copied().unwrap_or(0)).max(1) as u64;
    let slots = MAX_RUNS as u64 + 1;
    spec.keys_per_run
        .iter()
        .enumerate()
        .map(|(r, &n)| {
            let mut run = BTreeMap::new();
            let mut private = 0u64;
            while run.len() < n {
                let id = if rng.gen_bool(spec.overlap) {
                    rng.gen_range(0..shared_domain) * slots + MAX_RUNS as u64
                } else {
                    private += 1 + rng.gen_range(0..3);
                    private * slots + r as u64
                };
                let e = if rng.gen_bool(TOMBSTONE_RATE) {
                    None
                } else {
                    let len = rng.gen_range(0..48);
                    Some((0..len).map(|_| rng.gen()).collect::<Vec<u8>>())
                };
                run.insert(key_of(id), e);
            }
            run.into_iter()
                .map(|(key, value)| KVEntry { key, value })
                .collect()
        })
        .collect()
}

fn plant(view: &mut RemixView) -> bool {
    for g in 0..view.group_count() {
        let sels = view.group_selectors(g);
        let newest: Vec<usize> = (0..sels.len())
            .filter(|&j| selector_run(sels[j]).is_some() && is_newest(sels[j]))
            .collect();
        for &a in &newest {
            for &b in &newest {
                if a < b && selector_run(sels[a]) != selector_run(sels[b]) {
                    view.swap_selectors(g, a, b);
                    return true;
                }
            }
        }
    }
    false
}

fn describe(e: Option<&KVEntry>) -> String {
    match e {
        None => "end".into(),
        Some(e) => format!(
            "{}{}",
            String::from_utf8_lossy(&e.key),
            if e.is_tombstone() { " (deleted)" } else { "" }
        ),
    }
}

/// Runs one trial. `Ok(None)` from the fault path means no fault could be
/// planted (fewer than two runs share a group).
pub fn run_trial(spec: &TrialSpec, fault: Fault) -> Result<Option<TrialOutcome>> {
    let contents = trial_runs(spec);
    let tables: Vec<Arc<Table>> = contents
        .iter()
        .enumerate()
        .map(|(i, run)| {
            Table::from_entries(TableId(i as u64 + 1), run.iter().map(KVEntry::as_ref)).map(Arc::new)
        })
        .collect::<remixdb::Result<_>>()?;
    let mut view = RemixView::build(tables.clone(), spec.group_size)?.with_search_mode(spec.mode.into());
    if fault == Fault::SwapSelectors && !plant(&mut view) {
        return Ok(None);
    }
    let view = Arc::new(view);
    let oracle = BaselineIndex::build(&tables, true)?;
    let mut out = TrialOutcome {
        spec: spec.clone(),
        entries: contents.iter().map(Vec::len).sum(),
        divergence: None,
    };

    // full scan
    let mut expected = Vec::new();
    let mut m = oracle.iter();
    m.seek_to_first()?;
    while let Some(e) = m.entry() {
        expected.push(e);
        m.next()?;
    }
    let mut it = view.iter();
    it.seek_to_first();
    for (i, want) in expected.iter().enumerate() {
        let got = it.entry()?;
        if got.as_ref() != Some(want) {
            out.divergence = Some(Divergence {
                check: "scan",
                detail: format!("position {i}: remix {} vs oracle {}", describe(got.as_ref()), describe(Some(want))),
            });
            return Ok(Some(out));
        }
        it.next();
    }
    if let Some(extra) = it.entry()? {
        out.divergence = Some(Divergence {
            check: "scan",
            detail: format!("remix yields extra {}", describe(Some(&extra))),
        });
        return Ok(Some(out));
    }

    // seeks and point lookups
    let mut rng = StdRng::seed_from_u64(spec.seed.rotate_left(17));
    let all: Vec<&KVEntry> = contents.iter().flatten().collect();
    for _ in 0..SEEKS_PER_TRIAL {
        let target = if !all.is_empty() && rng.gen_bool(0.7) {
            all[rng.gen_range(0..all.len())].key.clone()
        } else {
            key_of(rng.gen_range(0..40_000))
        };
        let mut r = view.seek(&target)?;
        let mut m = oracle.seek(&target)?;
        for step in 0..ENTRIES_AFTER_SEEK {
            let (a, b) = (r.entry()?, m.entry());
            if a != b {
                out.divergence = Some(Divergence {
                    check: "seek",
                    detail: format!(
                        "seek {} step {step}: remix {} vs oracle {}",
                        String::from_utf8_lossy(&target),
                        describe(a.as_ref()),
                        describe(b.as_ref())
                    ),
                });
                return Ok(Some(out));
            }
            if a.is_none() {
                break;
            }
            r.next();
            m.next()?;
        }
        let (a, b) = (view.point_get(&target)?, oracle.get(&target)?);
        if a != b {
            out.divergence = Some(Divergence {
                check: "get",
                detail: format!(
                    "get {}: remix {a:?} vs oracle {b:?}",
                    String::from_utf8_lossy(&target)
                ),
            });
            return Ok(Some(out));
        }
    }
    Ok(Some(out))
}

/// Seed of trial `i` in a run started from `seed`.
pub fn trial_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn verify_oracle(seed: u64, trials: usize) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    for i in 0..trials {
        let spec = TrialSpec::from_seed(trial_seed(seed, i));
        let outcome = run_trial(&spec, Fault::None)?.expect("no fault requested");
        report.trials += 1;
        report.entries += outcome.entries;
        if let Some(d) = outcome.divergence {
            report.divergences += 1;
            report.first.get_or_insert((spec.seed, d));
        }
    }
    Ok(report)
}

impl VerifyReport {
    /// Fails on the first divergence with its replay seed.
    pub fn into_result(self) -> Result<VerifyReport> {
        match &self.first {
            Some((seed, d)) => Err(BenchError::Divergence {
                trial: self.trials,
                seed: *seed,
                detail: format!("{}: {}", d.check, d.detail),
            }),
            None => Ok(self),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_are_sorted_and_unique() {
        let spec = TrialSpec {
            seed: 5,
            keys_per_run: vec![300, 0, 120],
            overlap: 0.5,
            group_size: 16,
            mode: SearchModeName::Full,
        };
        for run in trial_runs(&spec) {
            assert!(run.windows(2).all(|w| w[0].key < w[1].key));
        }
    }

    #[test]
    fn zero_overlap_runs_are_disjoint() {
        let spec = TrialSpec {
            seed: 9,
            keys_per_run: vec![500, 500, 500],
            overlap: 0.0,
            group_size: 16,
            mode: SearchModeName::Full,
        };
        let runs = trial_runs(&spec);
        let mut all: Vec<_> = runs.iter().flatten().map(|e| e.key.clone()).collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn single_run_trial_agrees() {
        let spec = TrialSpec {
            seed: 1,
            keys_per_run: vec![2000],
            overlap: 0.0,
            group_size: 32,
            mode: SearchModeName::Full,
        };
        let out = run_trial(&spec, Fault::None).unwrap().unwrap();
        assert!(out.divergence.is_none(), "{:?}", out.divergence);
    }

    #[test]
    fn swapped_selectors_are_caught() {
        let spec = TrialSpec {
            seed: 3,
            keys_per_run: vec![800, 800, 800],
            overlap: 0.5,
            group_size: 16,
            mode: SearchModeName::Full,
        };
        let out = run_trial(&spec, Fault::SwapSelectors).unwrap().unwrap();
        assert!(out.divergence.is_some());
    }

    #[test]
    fn short_fixed_seed_run_is_clean() {
        let report = verify_oracle(42, 40).unwrap();
        assert_eq!(report.divergences, 0, "{:?}", report.first);
    }
}
