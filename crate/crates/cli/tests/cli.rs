use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn odb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odb")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

const FIVE: &str = "x\n-1\n-0.8\n0\n0.7\n1\n";

#[test]
fn design_line_d_optimal() {
    let out = odb(&["design", "--dim", "1", "--criterion", "D", "--grid", "21"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    assert_eq!(v["support"], serde_json::json!([[-1.0], [1.0]]));
    for w in v["weights"].as_array().unwrap() {
        assert!((w.as_f64().unwrap() - 0.5).abs() < 1e-6);
    }
    assert_eq!(v["certified"], true);
}

#[test]
fn design_tolerance_does_not_move_two_point_optimum() {
    let loose = json(&odb(&["design", "--dim", "1", "--tolerance", "1e-2", "--grid", "21"]).stdout);
    let tight = json(&odb(&["design", "--dim", "1", "--tolerance", "1e-6", "--grid", "21"]).stdout);
    assert_eq!(loose["support"], tight["support"]);
    assert_eq!(loose["certified"], true);
    assert_eq!(tight["certified"], true);
}

#[test]
fn design_writes_file_and_reads_model_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(dir.path(), "m.json", r#"{"basis": "quadratic", "family": "linear"}"#);
    let out_dir = dir.path().join("o");
    let out = odb(&["design", "--model", &model, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&fs::read(out_dir.join("design.json")).unwrap());
    assert_eq!(v["support"].as_array().unwrap().len(), 3);

    // the flag wins over the file
    let out = odb(&["design", "--model", &model, "--basis", "linear"]);
    assert_eq!(json(&out.stdout)["support"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_file_names_the_path() {
    let out = odb(&["quality", "--data", "/nonexistent/data.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.csv"));
}

#[test]
fn quality_of_replicated_optimal_design_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x\n-1\n1\n-1\n1\n");
    let out = odb(&["quality", "--data", &data]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out.stdout);
    assert!((v["dataset_efficiency"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert_eq!(v["criterion"], "D");
}

#[test]
fn quality_of_one_row_is_zero_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x\n0.3\n");
    let out = odb(&["quality", "--data", &data]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out.stdout)["dataset_efficiency"], 0.0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
}

#[test]
fn sample_odb_picks_the_ends() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", FIVE);
    let o = dir.path().join("o");
    let out = odb(&["sample", "--data", &data, "--n", "2", "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&fs::read(o.join("selection.json")).unwrap())["rows"], serde_json::json!([0, 4]));
    assert_eq!(fs::read_to_string(o.join("selection.csv")).unwrap(), "row\n0\n4\n");
    assert_eq!(fs::read_to_string(o.join("subsample.csv")).unwrap().lines().count(), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("D-efficiency 1.0000"));
}

#[test]
fn sample_srs_full_is_identity_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", FIVE);
    let run = |o: &str| {
        let o = dir.path().join(o);
        let out = odb(&["sample", "--data", &data, "--sampler", "srs", "--n", "5", "--seed", "9", "--out", o.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        fs::read(o.join("selection.json")).unwrap()
    };
    let a = run("a");
    assert_eq!(json(&a)["rows"], serde_json::json!([0, 1, 2, 3, 4]));
    assert_eq!(a, run("b"));
}

#[test]
fn random_sampler_without_seed_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", FIVE);
    for s in ["SRS", "PPS", "EXCHANGE"] {
        let out = odb(&["sample", "--data", &data, "--sampler", s, "--n", "2"]);
        assert_eq!(out.status.code(), Some(1), "{s}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    }
}

#[test]
fn sample_rejects_oversized_n_and_unknown_sampler() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", FIVE);
    assert_eq!(odb(&["sample", "--data", &data, "--n", "6"]).status.code(), Some(1));
    assert_eq!(odb(&["sample", "--data", &data, "--n", "2", "--sampler", "nope"]).status.code(), Some(1));
}

#[test]
fn oracle_on_three_points() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", "x\n-1\n0\n1\n");
    let out = odb(&["oracle", "--data", &data, "--n", "2"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out.stdout)["rows"], serde_json::json!([0, 2]));
}

#[test]
fn simulate_smoke_writes_four_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.json");
    let o = dir.path().join("study");
    let out = odb(&["simulate", "--config", cfg.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("replication 1/1"));
    for (name, header) in [
        ("estimates.csv", "replication,repeat,sampler,coefficient,estimate"),
        ("efficiencies.csv", "replication,sampler,criterion,value"),
        ("boxplot.csv", "sampler,coefficient,min,q1,median,q3,max"),
    ] {
        let text = fs::read_to_string(o.join(name)).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{name}");
    }
    assert_eq!(json(&fs::read(o.join("summary.json")).unwrap())["R"], 1);
}

#[test]
fn simulate_lists_every_config_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"seed": "x", "N": 10, "bogus": 1}"#);
    let out = odb(&["simulate", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["bogus", "seed", "model"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
}

#[test]
fn help_lists_defaults() {
    for cmd in ["design", "quality", "sample", "simulate", "oracle"] {
        let out = odb(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("[default:"), "{cmd}");
    }
}
