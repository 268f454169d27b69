use std::process::Command;

fn run(args: &[&str]) -> (bool, Vec<serde_json::Value>) {
    let out = Command::new(env!("CARGO_BIN_EXE_remix-bench")).args(args).output().unwrap();
    let records = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    (out.status.success(), records)
}

#[test]
fn cost_lists_every_profile() {
    let (ok, records) = run(&["cost"]);
    assert!(ok);
    let costs = records.iter().filter(|r| r["name"] == "remix_bytes_per_key").count();
    let ratios = records.iter().filter(|r| r["name"] == "remix_size_ratio").count();
    assert_eq!((costs, ratios), (24, 8));
}

#[test]
fn cost_for_one_key_length() {
    let (ok, records) = run(&["cost", "--key-len", "16", "--group-size", "16"]);
    assert!(ok);
    let v = records[0]["value"].as_f64().unwrap();
    assert!((v - ((16.0 + 4.0 * 8.0) / 16.0 + 3.0 / 8.0)).abs() < 1e-9, "{v}");
}

#[test]
fn verify_reports_no_divergence() {
    let (ok, records) = run(&["verify", "--trials", "5", "--seed", "8"]);
    assert!(ok);
    assert_eq!(records[0]["name"], "divergences");
    assert_eq!(records[0]["value"], 0.0);
}

#[test]
fn micro_emits_one_record_set_per_index() {
    let (ok, records) = run(&[
        "micro", "--runs", "2", "--run-mb", "1", "--op", "seek", "--ops", "1000", "--rounds", "1",
    ]);
    assert!(ok);
    assert_eq!(records.iter().filter(|r| r["name"] == "ops_per_sec").count(), 4);
}
