use std::path::Path;
use std::process::{Command, Output};

fn dery(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dery"))
        .args(args)
        .env("DERY_CACHE_DIR", cache)
        .output()
        .expect("spawn dery")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn synth(dir: &Path, cache: &Path) {
    let out = dery(
        &["synth", "--models", "3", "--probe", "96", "--feasible-k", "3", "--seed", "5", "--out", &p(dir, "zoo")],
        cache,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn stderr_line(out: &Output) -> String {
    let s = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(s.trim_end().lines().count(), 1, "stderr: {s}");
    s
}

#[test]
fn full_pipeline_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, cache.path());
    let manifest = p(d, "zoo/manifest.json");
    let run = |args: &[&str]| {
        let out = dery(args, cache.path());
        assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
        out
    };
    run(&["similarity", "--manifest", &manifest, "--out", &p(d, "similarity.json")]);
    run(&["partition", "--manifest", &manifest, "--k", "3", "--restarts", "8", "--out", &p(d, "partition.json")]);
    run(&[
        "reassemble",
        "--partition",
        &p(d, "partition.json"),
        "--manifest",
        &manifest,
        "--candidates",
        "20",
        "--batch-size",
        "16",
        "--out",
        &p(d, "plans.json"),
    ]);

    let plans: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p(d, "plans.json")).unwrap()).unwrap();
    assert_eq!(plans["tool"], "dery");
    assert_eq!(plans["command"], "reassemble");
    for key in ["manifest", "partition", "codes"] {
        assert_eq!(plans["inputs"][key].as_str().unwrap().len(), 64);
    }
    assert!(plans["config"].get("out").is_none());
    assert!(!plans["plans"].as_array().unwrap().is_empty());

    let report = run(&["report", "--plans", &p(d, "plans.json"), "--similarity", &p(d, "similarity.json")]);
    let text = String::from_utf8(report.stdout).unwrap();
    assert!(text.contains("rank"));
    assert!(text.contains("diagonal"));
}

#[test]
fn similarity_cache_is_written_and_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, cache.path());
    let manifest = p(d, "zoo/manifest.json");
    let first = dery(&["similarity", "--manifest", &manifest, "--out", &p(d, "a.json")], cache.path());
    assert!(first.status.success());
    let cached: Vec<_> = std::fs::read_dir(cache.path()).unwrap().collect();
    assert_eq!(cached.len(), 1);
    assert!(!d.join("zoo/.dery-cache").exists());

    let second = dery(
        &["--log-level", "info", "similarity", "--manifest", &manifest, "--out", &p(d, "b.json")],
        cache.path(),
    );
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("cache hit: true"));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p(d, "a.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p(d, "b.json")).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_manifest_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dery(&["similarity", "--manifest", &p(dir.path(), "nope.json")], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[input]: "));
}

#[test]
fn unsatisfiable_size_bound_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    synth(dir.path(), cache.path());
    let out = dery(
        &[
            "partition",
            "--manifest",
            &p(dir.path(), "zoo/manifest.json"),
            "--k",
            "3",
            "--eps",
            "1e-9",
            "--out",
            &p(dir.path(), "partition.json"),
        ],
        cache.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stderr_line(&out).starts_with("error[infeasible]: "));
}

#[test]
fn report_without_inputs_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dery(&["report"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[input]: "));
}
