mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oneshot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oneshot")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = oneshot(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(oneshot(&["generate", "--bogus"]).status.code(), Some(1));
    assert_eq!(oneshot(&["frobnicate"]).status.code(), Some(1));
    let out = oneshot(&["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--input"));
    assert_eq!(oneshot(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = oneshot(&["generate", "--model", p(&dir.path().join("missing.ckpt")), "--out", p(&dir.path().join("x.bvh"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.ckpt"));
}

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let (dir, ckpt, _) = common::model_dir();
    let a = dir.path().join("a.bvh");
    let b = dir.path().join("b.bvh");
    let c = dir.path().join("c.bvh");
    ok(&["generate", "--model", p(&ckpt), "--seed", "7", "--out", p(&a)]);
    ok(&["generate", "--model", p(&ckpt), "--seed", "7", "--out", p(&b)]);
    ok(&["generate", "--model", p(&ckpt), "--seed", "8", "--out", p(&c)]);
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.starts_with(b"HIERARCHY"));
    let j = json_of(&ok(&["generate", "--model", p(&ckpt), "--seed", "7", "--frames", "120", "--out", p(&dir.path().join("d.json")), "--json"]));
    assert_eq!(j["frames"], 120);
    let back: oneshot_motion::motion::MotionJson = serde_json::from_slice(&std::fs::read(dir.path().join("d.json")).unwrap()).unwrap();
    assert_eq!(back.frames.len(), 120);
}

#[test]
fn train_writes_checkpoint_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let bvh = common::write(&dir.path().join("walk.bvh"), &oneshot_motion::motion::write_bvh(&common::walk()));
    let cfg = common::write(&dir.path().join("tiny.toml"), &common::tiny_config().to_toml());
    let ckpt = dir.path().join("out").join("walk.ckpt");
    let out = ok(&["train", "--input", p(&bvh), "--config", p(&cfg), "--seed", "3", "--out", p(&ckpt), "--json"]);
    let j = json_of(&out);
    assert_eq!(j["total_iterations"], 8);
    let trace = std::fs::read_to_string(dir.path().join("out").join("walk.trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,stage,d_loss"));
    assert_eq!(trace.lines().count(), 1 + 14);
    let model = oneshot_motion::network::load_checkpoint_file(&ckpt).unwrap();
    assert!(model.is_trained());
    assert_eq!(model.metadata.seed, 3);

    std::fs::write(dir.path().join("out").join(oneshot_cli::io::LOCK_FILE), "").unwrap();
    let locked = oneshot(&["train", "--input", p(&bvh), "--config", p(&cfg), "--out", p(&ckpt)]);
    assert_eq!(locked.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&locked.stderr).contains("training job"));
}

#[test]
fn application_subcommands() {
    let (dir, ckpt, bvh) = common::model_dir();
    let d = dir.path();
    let mask = common::write(&d.join("lower.json"), r#"{"preset": "lower"}"#);
    let frames = common::write(&d.join("frames.json"), r#"{"frames": [[30, 60]]}"#);
    ok(&["compose", "--model", p(&ckpt), "--reference", p(&bvh), "--mask", p(&mask), "--out", p(&d.join("c.bvh"))]);
    ok(&["inpaint", "--model", p(&ckpt), "--reference", p(&bvh), "--mask", p(&frames), "--out", p(&d.join("i.bvh"))]);
    ok(&["restyle", "--style-model", p(&ckpt), "--content", p(&bvh), "--out", p(&d.join("r.bvh"))]);
    let j = json_of(&ok(&["expand", "--model", p(&ckpt), "--reference", p(&bvh), "--extra", "32", "--out", p(&d.join("e.json")), "--json"]));
    assert_eq!(j["frames"], 128);
    let j = json_of(&ok(&["crowd", "--model", p(&ckpt), "--n", "3", "--out-dir", p(&d.join("crowd")), "--json"]));
    assert_eq!(j["files"].as_array().unwrap().len(), 3);
    assert!(d.join("crowd").join("crowd_002.bvh").exists());
    let bad = common::write(&d.join("bad.json"), r#"{"kept_joints": [99]}"#);
    let out = oneshot(&["compose", "--model", p(&ckpt), "--reference", p(&bvh), "--mask", p(&bad), "--out", p(&d.join("x.bvh"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_and_cka_reports() {
    let (dir, ckpt, bvh) = common::model_dir();
    let d = dir.path();
    let j = json_of(&ok(&["evaluate", "--model", p(&ckpt), "--input", p(&bvh), "--samples", "4", "--json", "--csv", p(&d.join("m.csv"))]));
    for key in ["coverage", "global_div", "local_div", "sifid", "inter_div", "intra_div", "harmonic_mode"] {
        assert!(j.get(key).is_some(), "missing {key}");
    }
    assert_eq!(j["samples"], 4);
    assert!(std::fs::read_to_string(d.join("m.csv")).unwrap().starts_with("coverage,"));
    let j = json_of(&ok(&["analyze-cka", "--model", p(&ckpt), "--probes", "8", "--out-dir", p(&d.join("cka")), "--json"]));
    let n = 7 * 4;
    assert_eq!(j["pairs"], n * (n + 1) / 2);
    for f in ["cka.csv", "cka_offset.csv", "cka.json", "cka.svg"] {
        assert!(d.join("cka").join(f).exists(), "{f}");
    }
}
