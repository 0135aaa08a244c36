use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[synth]
n_images = 12
width = 40
height = 40
[cluster]
standard_size = [40, 40]
k = 2
[train]
max_iters = 25
weak_max_iters = 10
pixels_per_image = 200
[pso]
n_agents = 4
n_iters = 3
n_runs = 1
[enhance]
tune_sample = 2
tune_size = [16, 16]
"#;

fn bin(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.join("small.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, SMALL).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_grapheneseg"))
        .current_dir(dir)
        .env_remove("GRAPHENESEG_CONFIG")
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn pipeline_report_is_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "3", "pipeline", "--out", "a"]);
    ok(d, &["--seed", "3", "pipeline", "--out", "b"]);
    ok(d, &["--seed", "3", "--jobs", "1", "pipeline", "--out", "c"]);
    ok(d, &["--seed", "3", "--jobs", "8", "pipeline", "--out", "e"]);
    let read = |p: &str| std::fs::read(d.join(p).join("report.json")).unwrap();
    let a = read("a");
    assert!(!a.is_empty());
    for other in ["b", "c", "e"] {
        assert!(a == read(other), "report differs for run {other}");
    }
    assert_eq!(
        std::fs::read(d.join("a/models/base.json")).unwrap(),
        std::fs::read(d.join("c/models/base.json")).unwrap()
    );
    let text = String::from_utf8(a).unwrap();
    assert!(!text.contains(d.to_str().unwrap()), "report leaks absolute paths");
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "c"]);
    let stats = ok(d, &["stats", "--manifest", "c/manifest.jsonl", "--out", "stats.json"]);
    assert!(stats.contains("background"));
    ok(
        d,
        &[
            "enhance",
            "--manifest",
            "c/manifest.jsonl",
            "--out",
            "e",
            "--alpha",
            "0.5",
        ],
    );
    ok(
        d,
        &["cluster", "--manifest", "e/manifest.jsonl", "--out", "e/groups.jsonl"],
    );
    ok(d, &["split", "--manifest", "e/groups.jsonl", "--out", "e/split.jsonl"]);
    let split = std::fs::read_to_string(d.join("e/split.jsonl")).unwrap();
    assert!(split.contains("\"split\":\"train\"") && split.contains("\"split\":\"test\""));
    assert!(split.contains("\"group\":"));
    ok(d, &["train", "--manifest", "e/split.jsonl", "--out", "m.json"]);
    ok(
        d,
        &[
            "weaklearn",
            "--model",
            "m.json",
            "--manifest",
            "e/split.jsonl",
            "--group",
            "0",
            "--out",
            "m0.json",
        ],
    );
    ok(
        d,
        &[
            "predict",
            "--model",
            "m0.json",
            "--manifest",
            "e/split.jsonl",
            "--out",
            "p",
            "--overlays",
        ],
    );
    assert!(d.join("p/overlays/images/00000.png").exists());
    let report = ok(
        d,
        &[
            "eval",
            "--manifest",
            "e/split.jsonl",
            "--pred",
            "p",
            "--out",
            "eval.json",
        ],
    );
    assert!(report.contains("mIoU"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("eval.json")).unwrap()).unwrap();
    assert!(json["miou"].as_f64().unwrap() >= 0.0);
}

#[test]
fn eval_rejects_mismatched_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "c"]);
    ok(d, &["synth", "--out", "small", "--width", "20", "--height", "20"]);
    // 20x20 masks laid out as predictions for the 40x40 corpus
    std::fs::create_dir_all(d.join("pred")).unwrap();
    std::fs::rename(d.join("small/masks"), d.join("pred/images")).unwrap();
    let out = bin(d, &["eval", "--manifest", "c/manifest.jsonl", "--pred", "pred"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dimension mismatch"), "{err}");
}

#[test]
fn no_clobber_protects_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--out", "c"]);
    ok(d, &["train", "--manifest", "c/manifest.jsonl", "--out", "m.json"]);
    let before = std::fs::read(d.join("m.json")).unwrap();
    let out = bin(
        d,
        &[
            "--no-clobber",
            "--seed",
            "9",
            "train",
            "--manifest",
            "c/manifest.jsonl",
            "--out",
            "m.json",
        ],
    );
    assert!(!out.status.success());
    assert_eq!(std::fs::read(d.join("m.json")).unwrap(), before);
    let out = bin(d, &["--no-clobber", "synth", "--out", "c"]);
    assert!(!out.status.success());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_grapheneseg"))
        .current_dir(d)
        .args(["--config", "bad.toml", "synth", "--out", "c"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
    assert!(!d.join("c").exists());
}

#[test]
fn config_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("env.toml"), "[synth]\nn_images = 3\nwidth = 16\nheight = 16\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_grapheneseg"))
        .current_dir(d)
        .env("GRAPHENESEG_CONFIG", d.join("env.toml"))
        .args(["synth", "--out", "c"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let m = std::fs::read_to_string(d.join("c/manifest.jsonl")).unwrap();
    assert_eq!(m.lines().count(), 3);
}

#[test]
fn missing_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(dir.path(), &["stats", "--manifest", "nope.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
