use std::path::Path;
use std::process::{Command, Output};

use attnmesh::dataset::read_manifest;
use attnmesh::report::ReportDoc;

fn attnmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnmesh"))
        .args(args)
        .env_remove("ATTNMESH_THREADS")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = "[train]\nepochs_phase1 = 1\nepochs_phase2 = 1\nbatch_size = 8\n[blend]\nepochs = 1\n";

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let c = dir.join("tiny.toml");
    std::fs::write(&c, TINY).unwrap();
    c
}

fn generate(dir: &Path, count: &str, seed: &str) {
    let o = attnmesh(&["generate", "--out", p(dir), "--count", count, "--seed", seed]);
    assert!(o.status.success(), "{}", stderr(&o));
}

/// Every file in `dir` except the run manifest, whose timestamps differ.
fn contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "run_manifest.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

fn manifest_sans_times(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("run_manifest.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let o = v.as_object_mut().unwrap();
    o.remove("started_unix");
    o.remove("finished_unix");
    v
}

#[test]
fn zero_count_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnmesh(&["generate", "--out", p(dir.path()), "--count", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("count must be positive"), "{}", stderr(&o));
}

#[test]
fn default_generate_is_2000_samples_at_64px() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnmesh(&["generate", "--out", p(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = read_manifest(dir.path()).unwrap();
    assert_eq!((m.count, m.image_size), (2000, 64));
    assert!(dir.path().join("run_manifest.json").exists());
}

#[test]
fn generate_is_bit_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(a.path(), "10", "0");
    generate(b.path(), "10", "0");
    assert_eq!(contents(a.path()), contents(b.path()));
    assert_eq!(manifest_sans_times(a.path()), manifest_sans_times(b.path()));
    let c = tempfile::tempdir().unwrap();
    generate(c.path(), "10", "1");
    assert_ne!(contents(a.path()), contents(c.path()));
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnmesh(&["train", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert_eq!(attnmesh(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(attnmesh(&["generate", "--out", p(dir.path()), "--count", "x"]).status.code(), Some(2));
    assert_eq!(attnmesh(&["--help"]).status.code(), Some(0));

    let o = Command::new(env!("CARGO_BIN_EXE_attnmesh"))
        .args(["generate", "--out", p(dir.path()), "--count", "1"])
        .env("ATTNMESH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = attnmesh(&["eval", "--data", p(&dir.path().join("missing")), "--gt-as-prediction"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nno_such_key = 1\n").unwrap();
    let o = attnmesh(&["bench", "--config", p(&bad), "--images", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gt_as_prediction_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&data, "6", "2");
    let out = dir.path().join("r.json");
    let o = attnmesh(&["eval", "--data", p(&data), "--gt-as-prediction", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = ReportDoc::from_json(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc.evals.len(), 3);
    for r in &doc.evals {
        assert_eq!((r.nme_all, r.nme_lips, r.nme_eyes), (0.0, 0.0, 0.0));
    }
    assert!(dir.path().join("r.json.run.json").exists());
}

#[test]
fn bench_desk_markdown_flags_pass() {
    let o = attnmesh(&["bench", "--images", "2", "--repetitions", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = String::from_utf8(o.stdout).unwrap();
    let line = md.lines().find(|l| l.starts_with("MAC ratio")).expect("ratio line");
    assert!(line.contains("**PASS**"), "{line}");
    assert!(md.contains("| Cascade (sum of above) |") && md.contains("| Attention mesh |"), "{md}");

    let o = attnmesh(&["bench", "--scale", "full", "--images", "0", "--format", "json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc = ReportDoc::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    let c = doc.cost.unwrap();
    assert!(c.pass && c.macs.ratio <= 0.85);
}

#[test]
fn phase_two_needs_a_phase_one_checkpoint_and_infer_emits_landmarks() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    generate(&data, "16", "4");
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");

    let o = attnmesh(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&run), "--phase", "2"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = attnmesh(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&run), "--phase", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = run.join("model.amck");
    let run2 = dir.path().join("run2");
    let o = attnmesh(&[
        "train", "--data", p(&data), "--val", p(&data), "--config", p(&cfg), "--out", p(&run2), "--phase", "2", "--resume", p(&ck),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let log = std::fs::read_to_string(run2.join("train_log.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["phase"], 2);
    assert!(first["val_nme_eyes"].is_f64());

    let ck2 = run2.join("model.amck");
    let json_out = dir.path().join("lm.json");
    let png = dir.path().join("lm.png");
    let o = attnmesh(&[
        "infer", "--checkpoint", p(&ck2), "--image", p(&data.join("sample_000003.amds")), "--out", p(&json_out), "--overlay", p(&png),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(v["count"], 78);
    assert_eq!(v["points"].as_object().unwrap().len(), 78);
    assert_eq!(v["crops"].as_array().unwrap().len(), 3);
    assert_eq!(v["blendshapes"]["mouth"].as_array().unwrap().len(), 10);
    assert_eq!(&std::fs::read(&png).unwrap()[1..4], b"PNG");

    let o = attnmesh(&["eval", "--data", p(&data), "--checkpoint", p(&ck2), "--format", "markdown"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = String::from_utf8(o.stdout).unwrap();
    assert!(md.contains("| Mesh |") && md.contains("| Attention mesh |"), "{md}");

    let full = dir.path().join("full");
    let o = attnmesh(&["generate", "--out", p(&full), "--count", "2", "--topology", "full"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = attnmesh(&["eval", "--data", p(&full), "--checkpoint", p(&ck2)]);
    assert_eq!(o.status.code(), Some(1), "mismatched topology must be refused");
}
