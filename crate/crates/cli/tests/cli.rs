use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_SPEC: &str = r#"{"L":2,"G":4,"d":16,"samples_per_subgroup":40,"separation":4.0,"noise":1.0,"bias_strength":0.8,"epochs":5,"seed":3}"#;

fn subscope(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subscope"))
        .current_dir(dir)
        .args(args)
        .env_remove("SUBSCOPE_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = subscope(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn synth_small(dir: &Path) {
    std::fs::write(dir.join("spec.json"), SMALL_SPEC).unwrap();
    ok(dir, &["synth", "--spec", "spec.json", "--out", "data.dimx", "--refs-out", "refs.dimx"]);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = subscope(dir.path(), &["decompose", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = subscope(dir.path(), &["decompose", "--data", "absent.dimx", "--out", "b.dimb"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error: "), "{err}");
    assert_eq!(err.matches("absent.dimx").count(), 1, "{err}");
}

#[test]
fn corrupt_container_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.dimx"), b"not a container at all").unwrap();
    let out = subscope(dir.path(), &["decompose", "--data", "bad.dimx", "--out", "b.dimb"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.dimx"));
}

#[test]
fn synth_decompose_identify_flags_half_the_subgroups() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    ok(d, &["decompose", "--data", "data.dimx", "--out", "basis.dimb"]);
    ok(d, &["identify", "--data", "data.dimx", "--basis", "basis.dimb", "--report", "bias.json"]);
    let report = read_json(&d.join("bias.json"));
    let classes = report.as_array().unwrap();
    assert_eq!(classes.len(), 2);
    for c in classes {
        assert_eq!(c["k"], 2);
        assert_eq!(c["biased"].as_array().unwrap().len(), 2);
        assert_eq!(c["accuracies"].as_array().unwrap().len(), 4);
    }
}

#[test]
fn manifest_records_hashes_and_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    ok(d, &["decompose", "--data", "data.dimx", "--method", "pca", "--out", "basis.dimb"]);
    let m = read_json(&d.join("basis.dimb.manifest.json"));
    assert_eq!(m["subcommand"], "decompose");
    assert_eq!(m["config"]["method"], "pca");
    let out_hash = m["outputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(out_hash.len(), 64);
    assert_eq!(m["inputs"][0]["path"], "data.dimx");
    assert!(m["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_environment_variable_overrides_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let out = Command::new(env!("CARGO_BIN_EXE_subscope"))
        .current_dir(d)
        .args(["synth", "--spec", "spec.json", "--out", "other.dimx"])
        .env("SUBSCOPE_SEED", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = std::fs::read(d.join("data.dimx")).unwrap();
    let b = std::fs::read(d.join("other.dimx")).unwrap();
    assert_ne!(a, b);
    let m = read_json(&d.join("other.dimx.manifest.json"));
    assert_eq!(m["config"]["resolved_spec"]["seed"], 4);
}

#[test]
fn match_with_brute_force_agrees_with_hungarian() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    ok(d, &["decompose", "--data", "data.dimx", "--out", "basis.dimb"]);
    ok(d, &["match", "--basis", "basis.dimb", "--refs", "refs.dimx", "--out", "fast.json"]);
    ok(d, &["match", "--basis", "basis.dimb", "--refs", "refs.dimx", "--out", "slow.json", "--brute-force"]);
    let fast = read_json(&d.join("fast.json"));
    let slow = read_json(&d.join("slow.json"));
    assert_eq!(fast["classes"], slow["classes"]);
    assert!(fast.get("detection").is_none());
}

#[test]
fn mitigate_requires_labels_for_group_methods() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    let out = subscope(d, &["mitigate", "--data", "data.dimx", "--method", "soft_gdro", "--out", "m.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pseudo-labels"));
}

#[test]
fn retrieve_returns_sorted_hits() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_small(d);
    ok(d, &["decompose", "--data", "data.dimx", "--out", "basis.dimb"]);
    ok(
        d,
        &[
            "retrieve", "--basis", "basis.dimb", "--corpus", "data.dimx", "--class", "1", "--component", "2", "--top",
            "7", "--out", "hits.json",
        ],
    );
    let out = read_json(&d.join("hits.json"));
    assert_eq!(out["class_embedding"], "class_center");
    let hits = out["hits"].as_array().unwrap();
    assert_eq!(hits.len(), 7);
    let sims: Vec<f64> = hits.iter().map(|h| h["similarity"].as_f64().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]));
}
