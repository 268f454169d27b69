use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use remix_bench::cost::{self, PROFILES};
use remix_bench::datagen::{self, GenSpec, Locality};
use remix_bench::micro::{self, Fixture, IndexKind, MicroOp};
use remix_bench::output::{Record, RecordSink};
use remix_bench::verify;
use remix_bench::workload::{self, KeyDistribution, WorkloadSpec};
use remix_bench::Result;
use remixdb::compact::CompactionConfig;
use remixdb::{Env, Store, StoreConfig, TableId};

#[derive(Parser)]
#[command(name = "remix-bench", about = "Benchmarks and checks for remixdb")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file for measurement records; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate sorted runs and report their shape.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        #[arg(long, default_value_t = 8)]
        run_mb: usize,
        #[arg(long, value_enum, default_value_t = Locality::Weak)]
        locality: Locality,
        /// Write the runs as table files into this directory.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Seek, Seek+Next50 and Get microbenchmarks.
    Micro {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 16])]
        runs: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        run_mb: usize,
        #[arg(long, value_enum, default_value_t = Locality::Weak)]
        locality: Locality,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [MicroOp::Seek, MicroOp::SeekNext50, MicroOp::Get])]
        op: Vec<MicroOp>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = IndexKind::ALL)]
        index: Vec<IndexKind>,
        #[arg(long, default_value_t = 32)]
        group_size: usize,
        #[arg(long, default_value_t = 200_000)]
        ops: usize,
        #[arg(long, default_value_t = 3)]
        rounds: usize,
    },
    /// Compare REMIX against the merging iterator on randomized runs.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Evaluate the REMIX storage cost per key.
    Cost {
        #[command(flatten)]
        common: Common,
        /// Average key length; the published store profiles when omitted.
        #[arg(long)]
        key_len: Option<f64>,
        #[arg(long, default_value_t = 8)]
        runs: usize,
        #[arg(long, default_value_t = 4.0)]
        cursor_bytes: f64,
        #[arg(long, default_value_t = 32)]
        group_size: usize,
    },
    /// Run a YCSB-style workload against a store.
    Workload {
        #[command(flatten)]
        common: Common,
        /// Mix letter A to F.
        #[arg(long, default_value = "A")]
        workload: char,
        #[arg(long, value_enum)]
        distribution: Option<KeyDistribution>,
        #[arg(long, default_value_t = 1_000_000)]
        records: u64,
        #[arg(long, default_value_t = 1_000_000)]
        operations: u64,
        #[arg(long, default_value_t = 120)]
        value_len: usize,
        #[arg(long, default_value_t = 4)]
        threads: usize,
        /// Store directory; a temporary one when omitted.
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        memtable_mb: usize,
        #[arg(long, default_value_t = 16)]
        table_mb: usize,
        /// Compare every read with a shadow map (single client).
        #[arg(long)]
        check: bool,
    },
}

fn sink(common: &Common) -> Result<RecordSink> {
    Ok(match &common.out {
        Some(p) => RecordSink::new(Box::new(BufWriter::new(File::create(p)?))),
        None => RecordSink::stdout(),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen {
            common,
            runs,
            run_mb,
            locality,
            dir,
        } => {
            let mut out = sink(&common)?;
            let keys = GenSpec::keys_for_bytes(run_mb << 20, datagen::VALUE_LEN);
            let spec = GenSpec::new(runs, keys, locality, common.seed);
            let tables = datagen::gen_runs(&spec)?;
            let cfg = serde_json::to_value(&spec).unwrap();
            for (i, t) in tables.iter().enumerate() {
                let c = json!({"spec": cfg, "run": i});
                out.emit(&Record::new("run_keys", c.clone(), f64::from(t.entry_count()), "keys"))?;
                out.emit(&Record::new("run_bytes", c, t.file_size() as f64, "bytes"))?;
            }
            if let Some(dir) = dir {
                std::fs::create_dir_all(&dir)?;
                let env = Env::new();
                for (i, t) in tables.iter().enumerate() {
                    let mut s = t.scan();
                    let mut entries = Vec::with_capacity(t.entry_count() as usize);
                    while let Some(e) = s.current()? {
                        entries.push(e.to_entry());
                        s.advance();
                    }
                    let mut it = entries.into_iter().peekable();
                    remixdb::Table::build(&env, &dir, TableId(i as u64 + 1), &mut it, u64::MAX, None)?;
                }
            }
            out.flush()?;
            Ok(true)
        }
        Command::Micro {
            common,
            runs,
            run_mb,
            locality,
            op,
            index,
            group_size,
            ops,
            rounds,
        } => {
            let mut out = sink(&common)?;
            let keys = GenSpec::keys_for_bytes(run_mb << 20, datagen::VALUE_LEN);
            for &r in &runs {
                let spec = GenSpec::new(r, keys, locality, common.seed);
                let fx = Fixture::generate_with_group_size(&spec, group_size.max(r.next_power_of_two()))?;
                for &o in &op {
                    let results = micro::compare_throughput(&fx, o, &index, ops, rounds, common.seed)?;
                    for (k, res) in index.iter().zip(results) {
                        let c = json!({"runs": r, "run_mb": run_mb, "locality": locality, "op": o,
                                       "index": k, "group_size": group_size, "ops": ops});
                        out.emit(&Record::new("ops_per_sec", c.clone(), res.ops_per_sec, "ops/s"))?;
                        out.emit(&Record::new("comparisons_per_op", c.clone(), res.comparisons_per_op, "comparisons"))?;
                        out.emit(&Record::new("blocks_per_op", c, res.blocks_per_op, "blocks"))?;
                    }
                }
            }
            out.flush()?;
            Ok(true)
        }
        Command::Verify { common, trials } => {
            let mut out = sink(&common)?;
            let report = verify::verify_oracle(common.seed, trials)?;
            let c = json!({"seed": common.seed, "trials": trials});
            out.emit(&Record::new("divergences", c.clone(), report.divergences as f64, "trials"))?;
            out.emit(&Record::new("entries_checked", c, report.entries as f64, "entries"))?;
            out.flush()?;
            if let Some((seed, d)) = &report.first {
                eprintln!("divergence ({}) replay seed {seed}: {}", d.check, d.detail);
                let spec = verify::TrialSpec::from_seed(*seed);
                eprintln!("trial: {}", serde_json::to_string(&spec).unwrap());
            }
            Ok(report.divergences == 0)
        }
        Command::Cost {
            common,
            key_len,
            runs,
            cursor_bytes,
            group_size,
        } => {
            let mut out = sink(&common)?;
            match key_len {
                Some(l) => {
                    let v = cost::estimate_remix_cost(l, runs, cursor_bytes, group_size);
                    let c = json!({"avg_key_len": l, "runs": runs, "cursor_bytes": cursor_bytes, "group_size": group_size});
                    out.emit(&Record::new("remix_bytes_per_key", c, v, "bytes/key"))?;
                }
                None => {
                    for p in &PROFILES {
                        for d in cost::GROUP_SIZES {
                            let c = json!({"store": p.name, "avg_key_len": p.avg_key_len, "runs": cost::RUNS, "group_size": d});
                            out.emit(&Record::new("remix_bytes_per_key", c, p.cost(d), "bytes/key"))?;
                        }
                        let c = json!({"store": p.name, "avg_key_len": p.avg_key_len,
                                       "avg_value_len": p.avg_value_len, "group_size": 32});
                        out.emit(&Record::new("remix_size_ratio", c, p.ratio_pct(), "percent"))?;
                    }
                }
            }
            out.flush()?;
            Ok(true)
        }
        Command::Workload {
            common,
            workload: letter,
            distribution,
            records,
            operations,
            value_len,
            threads,
            dir,
            memtable_mb,
            table_mb,
            check,
        } => {
            let mut out = sink(&common)?;
            let Some(mut spec) = WorkloadSpec::ycsb(letter, records, operations, value_len) else {
                eprintln!("unknown workload {letter}");
                return Ok(false);
            };
            if let Some(d) = distribution {
                spec.distribution = d;
            }
            let tmp = tempfile::tempdir()?;
            let path = dir.unwrap_or_else(|| tmp.path().to_path_buf());
            let cfg = StoreConfig {
                memtable_bytes: memtable_mb << 20,
                compaction: CompactionConfig {
                    max_file_size: (table_mb as u64) << 20,
                    ..Default::default()
                },
                ..Default::default()
            };
            let store = Store::open(&path, cfg)?;
            workload::load(&store, records, value_len)?;
            let report = workload::run_workload(&store, &spec, threads, common.seed, check)?;
            let c = json!({"workload": spec, "threads": threads, "check": check});
            out.emit(&Record::new("throughput", c.clone(), report.throughput, "ops/s"))?;
            out.emit(&Record::new(
                "write_amplification",
                c.clone(),
                report.write_amplification.unwrap_or(f64::NAN),
                "ratio",
            ))?;
            out.emit(&Record::new("latency_p50", c.clone(), report.latency.p50_us, "us"))?;
            out.emit(&Record::new("latency_p99", c.clone(), report.latency.p99_us, "us"))?;
            out.emit(&Record::new("reads_missing", c.clone(), report.reads_missing as f64, "reads"))?;
            out.emit(&Record::new("mismatches", c, report.mismatches as f64, "reads"))?;
            out.flush()?;
            store.close()?;
            Ok(report.mismatches == 0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
