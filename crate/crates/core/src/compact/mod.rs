//! Compaction planning and execution.
//!
//! Each flush stages a sorted slice of new data per partition. The planner
//! picks one of four procedures per partition: abort (keep the data
//! buffered), minor (write new tables only), major (merge the new data with
//! the smallest tables) or split (merge everything into new partitions).

mod exec;

pub use exec::{execute_compaction, CompactionOutcome, ExecContext, NewPartition};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::remix::{cost, RemixView, DEFAULT_GROUP_SIZE};
use crate::table::{format, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Abort,
    Minor,
    /// Merge the given number of smallest tables with the new data.
    Major(usize),
    Split,
}

/// How the REMIX size of a partition is predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RemixCostModel {
    /// The on-disk layout written by this crate.
    #[default]
    Stored,
    /// `(L + 4R)/D + ⌈log₂ R⌉/8` bytes per key.
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionConfig {
    pub wa_abort_threshold: f64,
    pub abort_budget_fraction: f64,
    /// Table count threshold T.
    pub table_count_threshold: usize,
    /// Tables per new partition M.
    pub split_fanout: usize,
    /// Keys updated more often than this stay in the MemTable.
    pub hot_key_threshold: u8,
    pub split_ratio_floor: f64,
    pub max_file_size: u64,
    pub group_size: usize,
    pub cost_model: RemixCostModel,
}

impl Default for CompactionConfig {
    fn default() -> Self {
        CompactionConfig {
            wa_abort_threshold: 5.0,
            abort_budget_fraction: 0.15,
            table_count_threshold: 10,
            split_fanout: 2,
            hot_key_threshold: 4,
            split_ratio_floor: 1.5,
            max_file_size: 16 << 20,
            group_size: DEFAULT_GROUP_SIZE,
            cost_model: RemixCostModel::Stored,
        }
    }
}

impl CompactionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.table_count_threshold < 2 {
            return bad("table count threshold must exceed 1");
        }
        if self.split_fanout == 0 {
            return bad("split fanout must be positive");
        }
        if self.wa_abort_threshold <= 0.0 || self.split_ratio_floor <= 0.0 {
            return bad("ratios must be positive");
        }
        if !(0.0..=1.0).contains(&self.abort_budget_fraction) {
            return bad("abort budget must be a fraction");
        }
        if (self.max_file_size as usize) < 2 * format::UNIT {
            return bad("max file size below two blocks");
        }
        // a partition may briefly hold T tables plus one flush worth of new ones
        if self.group_size < self.table_count_threshold + 1
            || !self.group_size.is_power_of_two()
            || self.group_size > crate::remix::MAX_GROUP_SIZE
        {
            return bad("group size must be a power of two above the table count threshold");
        }
        Ok(())
    }
}

/// A buffered write headed for a partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StagedEntry {
    pub key: Vec<u8>,
    pub value: Option<Vec<u8>>,
    pub count: u8,
}

impl StagedEntry {
    /// Size of the entry once stored in a table.
    pub fn stored_len(&self) -> usize {
        2 + format::entry_len(&self.key, self.value.as_deref())
    }
}

/// Splits out entries updated more than `threshold` times.
pub fn split_hot(staged: Vec<StagedEntry>, threshold: u8) -> (Vec<StagedEntry>, Vec<StagedEntry>) {
    staged.into_iter().partition(|e| e.count <= threshold)
}

/// Size statistics of one partition's tables and its staged data.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionLayout {
    /// File sizes, oldest table first.
    pub table_sizes: Vec<u64>,
    pub key_count: u64,
    pub avg_key_len: f64,
}

impl PartitionLayout {
    pub fn of(tables: &[Arc<Table>], remix: Option<&RemixView>) -> Self {
        let avg_key_len = match remix {
            Some(v) if v.group_count() > 0 => v.anchor_key_bytes() as f64 / v.group_count() as f64,
            _ => 0.0,
        };
        PartitionLayout {
            table_sizes: tables.iter().map(|t| t.file_size()).collect(),
            key_count: tables.iter().map(|t| u64::from(t.entry_count())).sum(),
            avg_key_len,
        }
    }

    pub fn total_bytes(&self) -> u64 {
        self.table_sizes.iter().sum()
    }
}

/// New data aimed at one partition, as seen by the planner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagedStats {
    pub bytes: u64,
    pub keys: u64,
    pub avg_key_len: f64,
}

impl StagedStats {
    pub fn of(entries: &[StagedEntry]) -> Self {
        let bytes = entries.iter().map(|e| e.stored_len() as u64).sum();
        let key_bytes: u64 = entries.iter().map(|e| e.key.len() as u64).sum();
        let keys = entries.len() as u64;
        StagedStats {
            bytes,
            keys,
            avg_key_len: if keys == 0 { 0.0 } else { key_bytes as f64 / keys as f64 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompactionPlan {
    pub partition: usize,
    pub decision: Decision,
    pub staged_bytes: u64,
    pub estimated_wa: f64,
    pub excluded: Vec<StagedEntry>,
}

fn tables_for(bytes: u64, max: u64) -> usize {
    bytes.div_ceil(max) as usize
}

/// Tables of the layout sorted by size, smallest first, as indexes.
pub fn smallest_first(layout: &PartitionLayout) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..layout.table_sizes.len()).collect();
    idx.sort_by_key(|&i| (layout.table_sizes[i], i));
    idx
}

/// Chooses minor, major or split for a partition receiving `staged_bytes`.
pub fn plan_compaction(layout: &PartitionLayout, staged_bytes: u64, cfg: &CompactionConfig) -> Decision {
    let n = layout.table_sizes.len();
    let max = cfg.max_file_size;
    let t = cfg.table_count_threshold;
    if n + tables_for(staged_bytes, max) <= t {
        return Decision::Minor;
    }
    let order = smallest_first(layout);
    let mut best: Option<(f64, usize)> = None;
    let mut sum = 0;
    for (i, &table) in order.iter().enumerate() {
        sum += layout.table_sizes[table];
        let k = i + 1;
        if k < 2 {
            continue;
        }
        let outputs = tables_for(sum + staged_bytes, max).max(1);
        if n - k + outputs > t {
            continue;
        }
        let ratio = k as f64 / outputs as f64;
        if best.is_none_or(|(r, _)| ratio > r) {
            best = Some((ratio, k));
        }
    }
    match best {
        Some((ratio, k)) if ratio > cfg.split_ratio_floor => Decision::Major(k),
        _ => Decision::Split,
    }
}

/// Predicted REMIX bytes for `keys` keys over `runs` runs.
pub fn predict_remix_bytes(keys: u64, avg_key_len: f64, runs: usize, cfg: &CompactionConfig) -> f64 {
    if keys == 0 || runs == 0 {
        return 0.0;
    }
    let d = cfg.group_size;
    match cfg.cost_model {
        RemixCostModel::Stored => cost::file_size(keys.div_ceil(d as u64), avg_key_len, runs, d),
        RemixCostModel::Analytic => keys as f64 * cost::bytes_per_key(avg_key_len, runs, 4.0, d),
    }
}

/// Bytes written by `decision` per staged byte: new and rewritten tables
/// plus the rebuilt REMIX.
pub fn estimate_wa(
    layout: &PartitionLayout,
    staged: &StagedStats,
    decision: Decision,
    cfg: &CompactionConfig,
) -> f64 {
    if staged.bytes == 0 {
        return 0.0;
    }
    let max = cfg.max_file_size;
    let n = layout.table_sizes.len();
    let keys = layout.key_count + staged.keys;
    let avg_key_len = if keys == 0 {
        0.0
    } else {
        (layout.avg_key_len * layout.key_count as f64 + staged.avg_key_len * staged.keys as f64)
            / keys as f64
    };
    let (table_bytes, runs) = match decision {
        Decision::Abort => return 0.0,
        Decision::Minor => (staged.bytes, n + tables_for(staged.bytes, max)),
        Decision::Major(k) => {
            let merged: u64 = smallest_first(layout)[..k]
                .iter()
                .map(|&i| layout.table_sizes[i])
                .sum();
            (merged + staged.bytes, n - k + tables_for(merged + staged.bytes, max))
        }
        Decision::Split => (layout.total_bytes() + staged.bytes, cfg.split_fanout),
    };
    let remix = predict_remix_bytes(keys, avg_key_len, runs.max(1), cfg);
    (table_bytes as f64 + remix) / staged.bytes as f64
}

/// Plans every partition, then aborts the partitions with the highest
/// estimated WA while it exceeds the threshold and the aborted data stays
/// within the budget.
pub fn global_schedule(
    inputs: &[(PartitionLayout, StagedStats)],
    cfg: &CompactionConfig,
) -> Vec<CompactionPlan> {
    let mut plans: Vec<CompactionPlan> = inputs
        .iter()
        .enumerate()
        .map(|(i, (layout, staged))| {
            let decision = plan_compaction(layout, staged.bytes, cfg);
            CompactionPlan {
                partition: i,
                decision,
                staged_bytes: staged.bytes,
                estimated_wa: estimate_wa(layout, staged, decision, cfg),
                excluded: Vec::new(),
            }
        })
        .collect();
    let total: u64 = plans.iter().map(|p| p.staged_bytes).sum();
    let budget = cfg.abort_budget_fraction * total as f64;
    let mut order: Vec<usize> = (0..plans.len()).filter(|&i| plans[i].staged_bytes > 0).collect();
    order.sort_by(|&a, &b| plans[b].estimated_wa.total_cmp(&plans[a].estimated_wa));
    let mut aborted = 0u64;
    for i in order {
        let p = &mut plans[i];
        if p.estimated_wa <= cfg.wa_abort_threshold {
            break;
        }
        if (aborted + p.staged_bytes) as f64 > budget {
            break;
        }
        aborted += p.staged_bytes;
        p.decision = Decision::Abort;
    }
    plans
}
