use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scene_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/desk_scene.json")
}

fn dexgrasp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dexgrasp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dexgrasp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = "[synthesis]\ngrasp_points = 3\n[synthesis.grid]\nn_approach = 16\n\
[training]\niterations = 10\npoints = 1024\n[views]\ntraining_views = 2\n";

#[test]
fn full_command_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let scene = scene_path().to_str().unwrap().to_string();
    let cfg = cfg.to_str().unwrap();

    let out = ok(&["synth", "--scene", &scene, "--config", cfg, "--out", &p("synth")]);
    assert!(out.contains("valid_rate="), "{out}");
    ok(&["graspness", "--scene", &scene, "--labels", &p("synth/dataset.json"), "--config", cfg, "--out", &p("gs")]);
    assert!(tmp.path().join("gs/graspness.json").is_file());
    ok(&["train", "--dataset", &p("synth"), "--config", cfg, "--out", &p("train")]);
    let out = ok(&[
        "sample",
        "--checkpoint",
        &p("train/checkpoint.bin"),
        "--scene",
        &scene,
        "--config",
        cfg,
        "--k",
        "12",
        "--out",
        &p("sample"),
    ]);
    assert!(out.starts_with("12 proposals"), "{out}");
    let out = ok(&["eval", "--proposals", &p("sample/proposals.json"), "--scene", &scene, "--config", cfg, "--out", &p("eval")]);
    let metrics: serde_json::Value = serde_json::from_str(&out).unwrap();
    for key in ["top1_proxy_success", "topk_proxy_rate", "mean_penetration_m", "n_seeds", "runtime_s"] {
        assert!(metrics.get(key).is_some(), "{key} missing from {out}");
    }

    // Default config differs from the one the proposals were made under.
    let out = dexgrasp(&["eval", "--proposals", &p("sample/proposals.json"), "--scene", &scene, "--out", &p("eval")]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("provenance"));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dexgrasp(&["synth", "--scene", "/nonexistent/scene.json", "--out", tmp.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[training]\niteration = 3\n").unwrap();
    let out = dexgrasp(&["synth", "--scene", "x.json", "--config", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));

    assert!(!dexgrasp(&["synth", "--scene", "x.json", "--profile", "laptop"]).status.success());
    assert!(!dexgrasp(&["sample"]).status.success());
}
