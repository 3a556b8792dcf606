use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_discrete-lfdr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn example_histogram(dir: &Path) -> PathBuf {
    write(dir, "h.tsv", "count\tn_positions\n0\t800\n1\t90\n2\t40\n5\t70\n")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const DESIGN: &str = "\
null.family = zigp
null.eta = 0.8
null.lambda = 1.5
null.theta = 0.3
nonnull.kind = geometric
nonnull.p = 0.08
pi0 = 0.8
N = 300
reps = 3
fit = zigp, poisson
";

#[test]
fn fit_json_has_table_columns() {
    let dir = TempDir::new().unwrap();
    let h = example_histogram(dir.path());
    let o = run(&["fit", h.to_str().unwrap(), "--family", "zigp", "--cutoff", "c1", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    for key in ["eta", "lambda", "theta", "pi0", "C", "D"] {
        assert!(v.get(key).is_some(), "missing {key} in {v}");
    }
    assert!(v["C"].as_u64().unwrap() < v["D"].as_u64().unwrap());
}

#[test]
fn fixed_cutoff_skips_the_scan() {
    let dir = TempDir::new().unwrap();
    let h = example_histogram(dir.path());
    let o = run(&["fit", h.to_str().unwrap(), "--cutoff", "fixed:3", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["C"], 3);
    assert!(v["scan"].is_null());
}

#[test]
fn fit_all_families_tsv() {
    let dir = TempDir::new().unwrap();
    let h = example_histogram(dir.path());
    let o = run(&["fit", h.to_str().unwrap(), "--family", "all"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut lines = out.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(&header[..7], ["family", "eta", "lambda", "theta", "pi", "C", "D"]);
    assert_eq!(lines.count(), 4);
}

#[test]
fn test_reports_four_reject_columns() {
    let dir = TempDir::new().unwrap();
    let h = example_histogram(dir.path());
    let o = run(&["test", h.to_str().unwrap(), "--procedure", "all"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let header = out.lines().find(|l| l.starts_with("count\t")).unwrap();
    let rejects = header.split('\t').filter(|c| c.starts_with("reject_")).count();
    assert_eq!(rejects, 4, "{header}");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let single = write(dir.path(), "one.tsv", "count\tn_positions\n4\t25\n");
    let o = run(&["test", single.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let o = run(&["fit", dir.path().join("missing.tsv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = write(dir.path(), "bad.tsv", "count\tn_positions\n0\tmany\n");
    assert_eq!(run(&["fit", bad.to_str().unwrap()]).status.code(), Some(2));

    let design = write(dir.path(), "d.txt", "pi0 = 2\nnull.family = poisson\nnull.lambda = 1\n");
    assert_eq!(run(&["simulate", design.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(run(&["fit"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_emits_histograms() {
    let dir = TempDir::new().unwrap();
    let design = write(dir.path(), "d.txt", DESIGN);
    let hist_dir = dir.path().join("hist");
    let args = |extra: &[&str]| {
        let mut a = vec!["simulate", design.to_str().unwrap(), "--seed", "1"];
        a.extend_from_slice(extra);
        run(&a)
    };
    let first = args(&["--emit-histogram", hist_dir.to_str().unwrap()]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let second = args(&[]);
    assert_eq!(first.stdout, second.stdout);

    let out = stdout(&first);
    let header: Vec<&str> = out.lines().next().unwrap().split('\t').collect();
    assert_eq!(
        &header[..8],
        ["procedure", "family", "R", "FDR", "TPR", "sd_R", "sd_FDR", "sd_TPR"]
    );
    // Four procedures for each of two families.
    assert_eq!(out.lines().count(), 1 + 8);
    for i in 0..3 {
        let f = hist_dir.join(format!("rep_{i}.tsv"));
        let body = std::fs::read_to_string(&f).unwrap();
        let total: u64 = body
            .lines()
            .skip(1)
            .map(|l| l.split('\t').nth(1).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 300);
    }

    let json = args(&["--format", "json", "--reps", "2"]);
    assert_eq!(json.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    assert!(v["rows"].is_array());
}
