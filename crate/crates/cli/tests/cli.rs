use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apcjust_cli::{config, pipeline, Stage};

const BIN: &str = env!("CARGO_BIN_EXE_apcjust");

fn apcjust(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove(config::CACHE_DIR_ENV)
        .output()
        .unwrap()
}

/// Two external linear models on a two-point grid. `marker` is touched by
/// every model run.
fn fixture(dir: &Path, command_a: &str) -> PathBuf {
    fs::write(dir.join("obs.csv"), "quantity,space,time,value\nq,0,0,1.5\nq,1,0,0.9\n").unwrap();
    let cfg = format!(
        r#"
output_dir = "out"
parallelism = 2

[expansion]
degree = 1
n_updates = 2

[monte_carlo]
bme = 2000
bapc = 500
confusion = 200

[seeds]
bme = 1
bapc = 2
confusion = 3

[[parameters]]
name = "a"
kind = "uniform"
lower = 0.0
upper = 1.0

[[parameters]]
name = "b"
kind = "uniform"
lower = 0.0
upper = 2.0

[[observations]]
quantity = "q"
file = "obs.csv"
subset_sizes = [1, 2]

[[models]]
id = "A"
kind = "external"
parameters = ["a", "b"]
command = '''{command_a}'''

[[models]]
id = "B"
kind = "external"
parameters = ["b"]
command = '''touch marker; awk -F= '{{print 0.5 * $2; print 0.3 + 0.2 * $2}}' {{params}} > {{output}}'''
"#
    );
    let cfg = cfg.replace("touch marker", &format!("touch '{}'", dir.join("marker").display()));
    let path = dir.join("analysis.toml");
    fs::write(&path, cfg).unwrap();
    path
}

const GOOD_A: &str = "touch marker; awk -F= '{v[$1]=$2} END {print v[\"a\"] + v[\"b\"]; print v[\"a\"] - 0.5 * v[\"b\"] + 1}' {params} > {output}";

#[test]
fn validate_lists_problems_and_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture(dir.path(), GOOD_A);
    let text = fs::read_to_string(&path)
        .unwrap()
        .replace("parameters = [\"b\"]", "parameters = [\"bb\"]");
    fs::write(&path, text).unwrap();
    let out = apcjust(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("models[1] (B).parameters: unknown parameter 'bb'"),
        "{stderr}"
    );
    assert!(!dir.path().join("marker").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_accepts_a_good_config_without_running_models() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture(dir.path(), GOOD_A);
    let out = apcjust(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("marker").exists());
}

#[test]
fn all_writes_the_artifact_layout_and_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture(dir.path(), GOOD_A);
    let analysis = config::load(&path).unwrap();
    let first = pipeline::run(&analysis, Stage::All).unwrap();
    assert!(first.fresh_executions > 0);
    assert!(dir.path().join("marker").exists());
    let out = dir.path().join("out");
    for f in [
        "manifest.json",
        "surrogates/A.json",
        "surrogates/B_loocv.csv",
        "traces/A.csv",
        "bms/q_n1.csv",
        "bms/q_n2.json",
        "confusion/q_n1_raw.csv",
        "confusion/q_n2_corrected.csv",
        "rmse/rmse.csv",
        "plots/confusion.csv",
        "plots/loocv_evolution.csv",
        "plots/model_weights.csv",
        "plots/rmse.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let before = fs::read(out.join("confusion/q_n2_raw.csv")).unwrap();
    let second = pipeline::run(&analysis, Stage::All).unwrap();
    assert_eq!(second.fresh_executions, 0);
    assert_eq!(before, fs::read(out.join("confusion/q_n2_raw.csv")).unwrap());
    assert_eq!(first.models[0].surrogate.collocation().len(), 5);
}

#[test]
fn cache_directory_can_be_overridden_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture(dir.path(), GOOD_A);
    let cache = dir.path().join("elsewhere");
    let out = Command::new(BIN)
        .args(["surrogate", path.to_str().unwrap()])
        .env(config::CACHE_DIR_ENV, &cache)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cache.join("A.jsonl").is_file());
    assert!(!dir.path().join("out/cache").exists());
}

#[test]
fn failing_model_exits_with_run_failure() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture(dir.path(), "echo boom >&2; exit 3");
    let out = apcjust(&["all", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("'A'"), "{stderr}");
}

#[test]
fn short_model_output_names_the_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = fixture(dir.path(), "echo 1.0 > {output}");
    let out = apcjust(&["surrogate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("expected 2 values, got 1"), "{stderr}");
}

#[test]
fn export_plots_needs_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = apcjust(&["export-plots", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = apcjust(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}
