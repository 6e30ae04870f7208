use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use schedplane_core::dsl::builtin;
use schedplane_core::sim::{gen_longtail_batch, simulate_with, SimConfig};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_schedplane"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).stdin(Stdio::null()).output().unwrap()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn longtail_file(dir: &Path) -> PathBuf {
    let p = dir.join("longtail.json");
    let w = gen_longtail_batch(39, 1_000_000, 1, 30_000_000).unwrap();
    std::fs::write(&p, serde_json::to_string(&w).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sim_matches_library_and_is_repeatable() {
    let d = tempfile::tempdir().unwrap();
    let w = longtail_file(d.path());
    let csv = d.path().join("trace.csv");
    let o = run(&["sim", s(&w), "--policy", "ljf", "--seed", "5", "--csv", s(&csv)]);
    let v = json(&o);
    let lib = simulate_with(
        &gen_longtail_batch(39, 1_000_000, 1, 30_000_000).unwrap(),
        &builtin("ljf").unwrap(),
        &SimConfig::seeded(5),
    )
    .unwrap();
    assert_eq!(v["metrics"]["avg_completion"], lib.metrics.unwrap().avg_completion);
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 41);
    let again = run(&["sim", s(&w), "--policy", "ljf", "--seed", "5"]);
    assert_eq!(o.stdout, again.stdout);
}

#[test]
fn sim_exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let w = longtail_file(d.path());
    assert_eq!(run(&["sim", s(&w), "--policy", "nope"]).status.code(), Some(3));
    assert_eq!(run(&["sim", "missing.json", "--policy", "ljf"]).status.code(), Some(2));
    assert_eq!(run(&["sim", s(&w)]).status.code(), Some(2));
}

#[test]
fn bench_longtail_table() {
    let v = json(&run(&["bench", "longtail", "--policies", "fifo,ljf"]));
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 9);
    for r in runs.iter().filter(|r| r["policy"] == "ljf") {
        assert!(r["improvement_pct"].as_f64().unwrap() >= 10.0, "{r}");
    }
    let names: Vec<&str> = v["summary"].as_array().unwrap().iter().map(|r| r["policy"].as_str().unwrap()).collect();
    assert_eq!(names, ["fair_vruntime", "fifo", "ljf"]);

    let v = json(&run(&["bench", "longtail"]));
    assert_eq!(v["summary"].as_array().unwrap().len(), 1);
    assert_eq!(run(&["bench", "nope"]).status.code(), Some(3));

    let o = run(&["bench", "build-dag", "--policies", "ljf", "--seeds", "2", "--format", "csv"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("policy,seed,"));
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn loop_runs_headless() {
    let d = tempfile::tempdir().unwrap();
    let w = longtail_file(d.path());
    let v = json(&run(&["loop", s(&w), "--max-iters", "3"]));
    let base = v["baseline_metric"].as_f64().unwrap();
    let recs = v["records"].as_array().unwrap();
    assert!(!recs.is_empty());
    for r in recs {
        assert!(r["live_metric"].as_f64().unwrap() <= base * 1.10);
    }
    assert!(recs.last().unwrap()["live_metric"].as_f64().unwrap() <= base);

    let v = json(&run(&["loop", s(&w), "--max-iters", "0"]));
    assert!(v["records"].as_array().unwrap().is_empty());
    assert_eq!(run(&["loop", "missing.json"]).status.code(), Some(2));
}

#[test]
fn repo_commands() {
    let d = tempfile::tempdir().unwrap();
    let a = d.path().join("a");
    let list = json(&run(&["repo", "--path", s(&a), "list"]));
    assert_eq!(list.as_array().unwrap().len(), 6);

    let bundle = d.path().join("bundle.json");
    assert!(run(&["repo", "--path", s(&a), "export", "--out", s(&bundle)]).status.success());
    let b = d.path().join("b");
    let text = std::fs::read_to_string(&bundle).unwrap();
    let mut tampered: Value = serde_json::from_str(&text).unwrap();
    tampered["records"][0]["id"] = "0".repeat(64).into();
    let bad = d.path().join("bad.json");
    std::fs::write(&bad, tampered.to_string()).unwrap();
    assert_eq!(run(&["repo", "--path", s(&b), "import", s(&bad)]).status.code(), Some(3));

    json(&run(&["repo", "--path", s(&b), "import", s(&bundle)]));
    let ids = |p: &Path| -> Vec<Value> {
        json(&run(&["repo", "--path", s(p), "list"])).as_array().unwrap().iter().map(|r| r["id"].clone()).collect()
    };
    assert_eq!(ids(&a), ids(&b));
    assert_eq!(run(&["repo", "--path", s(&a), "show", "nope"]).status.code(), Some(3));
}

#[test]
fn serve_config_handling() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.toml");
    std::fs::write(&bad, "listen = \"carrier-pigeon\"\n").unwrap();
    let o = run(&["serve", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());

    let repo = d.path().join("nested/repo");
    let ok = d.path().join("ok.toml");
    std::fs::write(&ok, format!("repo_path = {:?}\n", s(&repo))).unwrap();
    let o = run(&["serve", "--config", s(&ok)]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("serving JSON-RPC on stdio"));
    assert!(repo.join("records").is_dir());
}
