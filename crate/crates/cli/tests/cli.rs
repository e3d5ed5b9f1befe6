use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn plsom(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plsom"))
        .args(args)
        .env("PLSOM_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["--version"], &["verify-ordering", "--help"]] {
        let o = plsom(dir.path(), args);
        assert_eq!(o.status.code(), Some(0), "{args:?}");
        assert!(!o.stdout.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--no-such-flag"][..], &["train", "--lattice", "20"], &["experiment", "run"], &["bogus"]] {
        let o = plsom(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty());
    }
}

#[test]
fn missing_spec_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = plsom(dir.path(), &["experiment", "run", "--spec", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/run.toml"), "{}", stderr(&o));
}

#[test]
fn coarse_ordering_sweep_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = plsom(dir.path(), &["verify-ordering", "--spacing", "0.02", "--check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&dir.path().join("ordering_report.json"));
    assert_eq!(r["passes"], true);
    assert_eq!(r["certifies_subspace"], false);
    assert_eq!(r["violation_count"], 0);
    let m = json(&dir.path().join("verify-ordering.manifest.json"));
    assert!(m["outputs"].as_array().unwrap().iter().any(|o| o == "ordering_report.json"));
}

#[test]
fn failed_check_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = plsom(dir.path(), &["verify-ordering", "--spacing", "0.05", "--attractor", "0.9,0.1,0.5", "--check"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let r = json(&dir.path().join("ordering_report.json"));
    assert!(r["violation_count"].as_u64().unwrap() > 0);
    assert_eq!(r["attractor_ordered"], false);
}

#[test]
fn lemma_suites_run_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = plsom(dir.path(), &["verify-ordering", "--lemmas", "--trials", "2000", "--check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&dir.path().join("lemma_report.json"));
    assert!(r["outcomes"].as_array().unwrap().iter().all(|o| o["violations"] == 0));
}

#[test]
fn train_then_measure_a_map() {
    let dir = tempfile::tempdir().unwrap();
    let o = plsom(dir.path(), &["train", "--lattice", "6x6", "--iterations", "3000", "--metric-every", "500", "--seed", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let weights = dir.path().join("weights.csv");
    assert!(weights.is_file());
    assert!(dir.path().join("metrics_plsom.csv").is_file());
    assert_eq!(json(&dir.path().join("train.manifest.json"))["seed"], 4);

    let m = dir.path().join("measure");
    let w = weights.to_str().unwrap();
    let o = plsom(&m, &["metrics", "--weights", w, "--lattice", "6x6"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = json(&m.join("metrics.json"));
    assert!(metrics["metrics"]["unused_space"].as_f64().unwrap() < 1.0);

    let o = plsom(&m, &["expected-field", "--weights", w, "--lattice", "6x6", "--grid", "50", "--node", "7", "--resolution", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(m.join("field.csv")).unwrap().lines().count(), 1 + 36);
    assert_eq!(fs::read_to_string(m.join("map_node7.csv")).unwrap().lines().count(), 1 + 400);
}

#[test]
fn same_seed_same_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["train", "--lattice", "5x5", "--iterations", "2000", "--trainer", "som", "--seed", "8"];
    assert!(plsom(a.path(), &args).status.success());
    let mut args_b = args.to_vec();
    args_b.extend(["--workers", "1"]);
    assert!(plsom(b.path(), &args_b).status.success());
    for f in ["weights.csv", "metrics_som.csv", "summary.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn experiment_list_and_builtin_run() {
    let dir = tempfile::tempdir().unwrap();
    let o = plsom(dir.path(), &["experiment", "list"]);
    assert_eq!(o.status.code(), Some(0));
    let listing = String::from_utf8_lossy(&o.stdout);
    for name in ["uniform-comparison", "plasticity", "memory", "gaussian-warping", "difficult-init"] {
        assert!(listing.contains(name), "{listing}");
    }
    let o = plsom(dir.path(), &["experiment", "run", "--builtin", "difficult-init", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = json(&dir.path().join("manifest.json"));
    assert_eq!(m["seed"], 2);
    assert!(dir.path().join("summary.json").is_file());
    let o = plsom(dir.path(), &["experiment", "run", "--builtin", "no-such-experiment"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ik_map_trains_and_solves() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("arm.csv");
    let o = plsom(dir.path(), &["ik", "train", "--nodes", "5x5x5", "--iterations", "3000", "--out", map.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = plsom(dir.path(), &["ik", "solve", "--map", map.to_str().unwrap(), "--target", "0.4,0.1,0.2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = json(&dir.path().join("ik_solution.json"));
    assert_eq!(s["solution"]["joints"].as_array().unwrap().len(), 3);
}

#[test]
fn classifier_threshold_sets_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["classify", "eval", "--grid", "8x8", "--iterations", "3000"];
    let o = plsom(dir.path(), &[&args[..], &["--min-accuracy", "0.5"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = json(&dir.path().join("classification_report.json"));
    assert!(r["accuracy"].as_f64().unwrap() >= 0.5);
    let o = plsom(dir.path(), &[&args[..], &["--min-accuracy", "1.01"]].concat());
    assert_eq!(o.status.code(), Some(2));
}
