//! Drives the `sq-meanest` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sq-meanest"));
    c.env_remove("SQ_MEANEST_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Header line and data rows, split into cells.
fn table(csv: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().expect("header").split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

fn column<'a>(header: &[String], rows: &'a [Vec<String>], name: &str) -> Vec<&'a str> {
    let i = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("column {name}"));
    rows.iter().map(|r| r[i].as_str()).collect()
}

fn write_two_point(dir: &Path) -> String {
    let path = dir.join("two_point.json");
    std::fs::write(&path, r#"{"dim":2,"support":[[1.0,-0.5],[-0.25,1.0]],"weights":[0.25,0.75]}"#).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn linf_estimate_on_two_point_distribution_meets_eps() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_two_point(dir.path());
    let o = run(&["estimate", "--norm", "linf", "--instance", &file, "--eps", "0.05", "--oracle", "stat:auto:adversarial", "--reps", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = table(&stdout(&o));
    assert_eq!(rows.len(), 5);
    assert!(column(&h, &rows, "within_eps").iter().all(|v| *v == "true"));
    assert!(column(&h, &rows, "queries").iter().all(|v| *v == "2"));
}

#[test]
fn symmetric_estimate_reports_per_ring_counts() {
    let o = run(&["estimate", "--norm", "lp:4", "--instance", r#"random:{"dim":16,"points":5}"#, "--reps", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = table(&stdout(&o));
    for (used, per_ring) in column(&h, &rows, "rings_used").iter().zip(column(&h, &rows, "ring_queries")) {
        assert!(used.parse::<usize>().unwrap() > 0);
        // 2d + 1 queries per used ring, one per skipped ring.
        assert!(per_ring.split(';').all(|q| q == "33" || q == "1"), "{per_ring}");
    }
    assert!(column(&h, &rows, "within_eps").iter().all(|v| *v == "true"));
}

#[test]
fn identical_config_gives_identical_rows_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["estimate", "--norm", "topk:3", "--instance", r#"random:{"dim":24,"points":4}"#, "--reps", "6", "--seed", "9"];
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "4", "4"].iter().enumerate() {
        let path = dir.path().join(format!("out{k}.csv"));
        let o = bin().args(args).args(["--out", path.to_str().unwrap()]).env("SQ_MEANEST_THREADS", threads).output().unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(std::fs::read_to_string(path).unwrap());
    }
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&outputs[0]), body(&outputs[1]));
    assert_eq!(body(&outputs[1]), body(&outputs[2]));
    let strip = |s: &str| {
        s.lines().filter(|l| !l.starts_with("# created_unix") && !l.starts_with("# elapsed_ms")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip(&outputs[0]), strip(&outputs[2]));
}

#[test]
fn json_output_parses() {
    let o = run(&["estimate", "--norm", "lp:2", "--instance", r#"random:{"dim":8,"points":3}"#, "--reps", "2", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["meta"]["estimator"], "l2");
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);
    assert_eq!(v["rows"][0]["queries"], 8);
}

#[test]
fn missing_instance_file_fails_with_message() {
    let o = run(&["estimate", "--norm", "linf", "--instance", "/definitely/missing.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.json"));
}

#[test]
fn bad_specs_are_config_errors() {
    for args in [
        vec!["estimate", "--norm", "lq:3", "--instance", r#"random:{"dim":4,"points":2}"#],
        vec!["estimate", "--norm", "linf", "--instance", r#"random:{"dim":4,"points":2}"#, "--oracle", "stat:x:honest"],
        vec!["estimate", "--norm", "linf", "--instance", r#"random:{"dim":4,"points":2}"#, "--eps", "1.5"],
        vec!["estimate", "--norm", "linf", "--instance", r#"random:{"dim":4,"points":2}"#, "--reps", "0"],
    ] {
        assert_eq!(run(&args).status.code(), Some(2), "{args:?}");
    }
    let o = bin()
        .args(["estimate", "--norm", "linf", "--instance", r#"random:{"dim":4,"points":2}"#])
        .env("SQ_MEANEST_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schatten_hardness_curve_is_monotone() {
    let o = run(&["hardness", "--instance", r#"schatten:{"d":8,"p":4,"eps0":0.05}"#, "--reps", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = table(&stdout(&o));
    let taus: Vec<f64> = column(&h, &rows, "tau").iter().map(|v| v.parse().unwrap()).collect();
    let rates: Vec<f64> = column(&h, &rows, "success_rate").iter().map(|v| v.parse().unwrap()).collect();
    assert!(taus.windows(2).all(|w| w[0] > w[1]));
    assert!(rates.windows(2).all(|w| w[0] <= w[1]), "{rates:?}");
    assert_eq!(rates[0], 0.0);
    assert_eq!(*rates.last().unwrap(), 1.0);
}

#[test]
fn degenerate_family_is_flagged() {
    let o = run(&["hardness", "--instance", r#"schatten:{"d":4,"p":4,"eps0":0.0}"#, "--reps", "2", "--taus", "0.1,0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("degenerate"));
    let (h, rows) = table(&stdout(&o));
    assert_eq!(rows.len(), 2);
    assert!(column(&h, &rows, "degenerate").iter().all(|v| *v == "true"));
    assert!(column(&h, &rows, "success_rate").iter().all(|v| v.is_empty()));
}

#[test]
fn type2_l1_basis_hardness_curve() {
    let o = run(&["hardness", "--instance", r#"type2:{"witness":"basis:1:8","eps0":0.5}"#, "--reps", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = table(&stdout(&o));
    assert_eq!(rows.len(), 9);
    let rates: Vec<f64> = column(&h, &rows, "success_rate").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(*rates.last().unwrap(), 1.0);
}

#[test]
fn verify_default_suite_passes() {
    let o = run(&["verify", "--trials", "300"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = table(&stdout(&o));
    assert!(column(&h, &rows, "passed").iter().all(|v| *v == "true"));
    for check in ["symmetric-norm", "interpolation", "ring-inclusion", "discrimination"] {
        assert!(column(&h, &rows, "check").contains(&check), "{check}");
    }
}

#[test]
fn verify_names_the_broken_gauge_invariant() {
    let o = run(&["verify", "--norm", "gauge:broken-asym", "--dim", "8", "--trials", "100"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("symmetric-norm") && err.contains("permutation"), "{err}");
}

#[test]
fn verify_rejects_zero_trials() {
    let o = run(&["verify", "--trials", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--trials"));
}

#[test]
fn estimate_refuses_unvalidated_broken_gauge() {
    let o = run(&["estimate", "--norm", "gauge:broken-asym", "--instance", r#"random:{"dim":6,"points":2}"#, "--t2-bound", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("validation"));
}

#[test]
fn bench_emits_one_row_per_rep() {
    let o = run(&["bench", "--norm", "linf", "--dim", "16", "--reps", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (h, rows) = table(&stdout(&o));
    assert_eq!(rows.len(), 3);
    assert!(column(&h, &rows, "queries").iter().all(|v| *v == "16"));
}
