use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SIM: &str = r#"
target = "gdp"
[dgp]
kind = "sparse_linear"
p = 3
s = 2
beta = 1.0
sigma = 0.5
n = 56
seed = 7
[publication]
default_lag_days = 30
"#;

const ORIGIN: &str = "1983-08-15";

fn config(extra_feature_line: &str, tolerance: &str) -> String {
    format!(
        r#"
[paths]
observations = "obs.csv"
output_dir = "out"

[recipe.target]
series = "gdp"

[[recipe.features]]
name = "x001"
series = "x001"
block = "domestic_demand"

[[recipe.features]]
name = "x002"
series = "x002"
block = "prices"
{extra_feature_line}

[plan]
origin_schedule = {{ first = "1981-05-15", last = "{ORIGIN}", every_months = 3 }}
benchmarks = ["ar1"]
portfolio = [
  {{ id = "ar1", family = "ar", hyperparams = {{ p = 1 }} }},
  {{ id = "ols", family = "ols" }},
  {{ id = "ridge", family = "ridge", hyperparams = {{ lambda = 0.5 }} }},
]

[bootstrap]
replicates = 49
seed = 3
alpha = 0.2
scheme = {{ kind = "moving_block", block_length = 4 }}
coverage_models = ["ols"]

[mcs]
replicates = 99

[reporting]
model = "ols"
{tolerance}
"#
    )
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(cfg: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("sim.toml"), SIM).unwrap();
        std::fs::write(dir.path().join("run.toml"), cfg).unwrap();
        let f = Self { dir };
        let out = f.run(&["simulate", "--spec", "sim.toml", "--out", "obs.csv"], &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        f
    }

    fn clean() -> Self {
        Self::new(&config("", "tolerance = 10.0"))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str], env: &[(&str, &str)]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nowcast"));
        cmd.args(args).current_dir(self.dir.path());
        for var in ["NOWCAST_OBSERVATIONS", "NOWCAST_OUTPUT_DIR", "NOWCAST_AUDIT_LOG", "NOWCAST_THREADS"] {
            cmd.env_remove(var);
        }
        for (k, v) in env {
            cmd.env(k, v);
        }
        cmd.output().unwrap()
    }
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error record");
    serde_json::from_str(line).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn clean_nowcast_writes_a_package_and_an_audit_record() {
    let f = Fixture::clean();
    let out = f.run(&["nowcast", "--config", "run.toml", "--origin", ORIGIN], &[]);
    assert_eq!(out.status.code(), Some(0));
    let summary = stdout_json(&out);

    let pkg: Value = serde_json::from_str(&read(&f.path(&format!("out/release_{ORIGIN}.json")))).unwrap();
    assert_eq!(pkg["flags"]["leakage_clean"], true);
    assert_eq!(pkg["config_hash"], summary["config_hash"]);
    let w = &pkg["waterfall"];
    let bars: f64 = w["bars"].as_array().unwrap().iter().map(|b| b["contribution"].as_f64().unwrap()).sum();
    let total = w["base"].as_f64().unwrap() + bars + w["residual"].as_f64().unwrap();
    assert!((total - pkg["point"].as_f64().unwrap()).abs() < 1e-12);
    assert!(read(&f.path(&format!("out/release_{ORIGIN}.txt"))).contains(summary["config_hash"].as_str().unwrap()));

    // replay: same digest, a second audit record
    let again = stdout_json(&f.run(&["nowcast", "--config", "run.toml", "--origin", ORIGIN], &[]));
    assert_eq!(again["package_digest"], summary["package_digest"]);
    let audit: Vec<Value> = read(&f.path("out/audit.jsonl")).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(audit.len(), 2);
    assert_eq!(audit[1]["sequence"], 1);
    assert_eq!(audit[0]["outputs_digest"], audit[1]["outputs_digest"]);
    assert_eq!(audit[0]["outputs_digest"], summary["package_digest"]);
}

#[test]
fn planted_leakage_refuses_the_release() {
    let f = Fixture::new(&config("vintage_offset_days = 200", "tolerance = 10.0"));
    let out = f.run(&["nowcast", "--config", "run.toml", "--origin", ORIGIN], &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_json(&out);
    assert_eq!(err["kind"], "leakage_refused");
    assert_eq!(err["features"], serde_json::json!(["x002"]));
    assert!(!f.path(&format!("out/release_{ORIGIN}.json")).exists());
    assert!(!f.path("out/audit.jsonl").exists());

    let audit = f.run(&["audit", "--config", "run.toml"], &[]);
    assert_eq!(audit.status.code(), Some(3));
    let report: Value = serde_json::from_str(&read(&f.path("out/audit.json"))).unwrap();
    assert_eq!(report["leakage_clean"], false);
}

#[test]
fn tight_tolerance_falls_back_to_the_benchmark() {
    let f = Fixture::new(&config("", "tolerance = 0.01"));
    let out = stdout_json(&f.run(&["nowcast", "--config", "run.toml", "--origin", ORIGIN], &[]));
    assert_eq!(out["fallback_used"], true);
    let pkg: Value = serde_json::from_str(&read(&f.path(&format!("out/release_{ORIGIN}.json")))).unwrap();
    assert_eq!(pkg["provenance"]["fallback_model"], "ar1");
    assert_ne!(pkg["point"], pkg["model_point"]);
}

#[test]
fn backtest_is_reproducible_across_runs_and_thread_counts() {
    let f = Fixture::clean();
    let obs_before = read(&f.path("obs.csv"));
    let a = stdout_json(&f.run(&["backtest", "--config", "run.toml"], &[("NOWCAST_THREADS", "1")]));
    let manifest_a = read(&f.path("out/manifest.json"));
    let b = stdout_json(&f.run(&["backtest", "--config", "run.toml"], &[("NOWCAST_THREADS", "4")]));
    assert_eq!(a["outputs_digest"], b["outputs_digest"]);
    assert_eq!(manifest_a, read(&f.path("out/manifest.json")));
    assert_eq!(obs_before, read(&f.path("obs.csv")));

    let hash = a["config_hash"].as_str().unwrap();
    let manifest: Value = serde_json::from_str(&manifest_a).unwrap();
    for name in manifest["files"].as_object().unwrap().keys() {
        assert!(read(&f.path(&format!("out/{name}"))).contains(hash), "{name}");
    }
    for name in ["forecasts.csv", "losses.csv", "coverage.csv", "mcs.csv", "weights.csv", "appendix.txt"] {
        assert!(manifest["files"].get(name).is_some(), "{name}");
    }
    let appendix = read(&f.path("out/appendix.txt"));
    for section in ["Data sources", "Transformations", "Update rules", "Model specifications"] {
        assert!(appendix.contains(section), "{section}");
    }
}

#[test]
fn paths_and_threads_do_not_change_the_config_hash() {
    let f = Fixture::clean();
    let a = stdout_json(&f.run(&["backtest", "--config", "run.toml"], &[]));
    let b = stdout_json(&f.run(&["backtest", "--config", "run.toml"], &[("NOWCAST_OUTPUT_DIR", "elsewhere")]));
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["outputs_digest"], b["outputs_digest"]);
    assert!(f.path("elsewhere/manifest.json").exists());

    let edited = read(&f.path("run.toml")).replace("lambda = 0.5", "lambda = 0.6");
    std::fs::write(f.path("run.toml"), edited).unwrap();
    let c = stdout_json(&f.run(&["backtest", "--config", "run.toml"], &[]));
    assert_ne!(a["config_hash"], c["config_hash"]);
}

#[test]
fn validation_errors_exit_with_code_two() {
    let missing_tolerance = Fixture::new(&config("", ""));
    let out = missing_tolerance.run(&["backtest", "--config", "run.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "validation");

    let f = Fixture::clean();
    let bad_model = read(&f.path("run.toml")).replace("model = \"ols\"", "model = \"nope\"");
    std::fs::write(f.path("bad.toml"), bad_model).unwrap();
    assert_eq!(f.run(&["backtest", "--config", "bad.toml"], &[]).status.code(), Some(2));

    let out = f.run(&["backtest", "--config", "run.toml"], &[("NOWCAST_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(f.run(&["backtest", "--config", "absent.toml"], &[]).status.code(), Some(2));
    assert_eq!(f.run(&["nowcast", "--config", "run.toml"], &[]).status.code(), Some(2));
}

#[test]
fn ingest_reports_rejects_and_merges_idempotently() {
    let f = Fixture::clean();
    let batch = "series_id,ref_period,value,published_at,frequency\n\
                 cpi,2020-01,1.5,2020-02-10,monthly\n\
                 cpi,2020-02,NaN,2020-03-10,monthly\n\
                 cpi,2020-03,1.7,2020-03-15,monthly\n";
    std::fs::write(f.path("batch.csv"), batch).unwrap();
    let first = stdout_json(&f.run(&["ingest", "--data", "batch.csv", "--store", "store.csv"], &[]));
    assert_eq!(first["inserts"], 1);
    assert_eq!(first["rejects"].as_array().unwrap().len(), 2);
    let second = stdout_json(&f.run(&["ingest", "--data", "batch.csv", "--store", "store.csv"], &[]));
    assert_eq!(second["inserts"], 0);
    assert_eq!(second["log_digest"], first["log_digest"]);

    let merged = stdout_json(&f.run(&["ingest", "--data", "obs.csv", "--store", "store.csv"], &[]));
    assert_eq!(merged["log_entries"], merged["log_entries_before"].as_u64().unwrap() + merged["inserts"].as_u64().unwrap());

    std::fs::write(f.path("broken.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(f.run(&["ingest", "--data", "broken.csv"], &[]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic() {
    let f = Fixture::clean();
    let first = read(&f.path("obs.csv"));
    let out = f.run(&["simulate", "--spec", "sim.toml", "--out", "again.csv"], &[]);
    assert!(out.status.success());
    assert_eq!(first, read(&f.path("again.csv")));
    let truth: Value = serde_json::from_str(&read(&f.path("obs.truth.json"))).unwrap();
    assert_eq!(truth["truth"]["support"].as_array().unwrap().len(), 2);
}
