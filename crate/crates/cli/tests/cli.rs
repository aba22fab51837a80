use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gaussblend(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaussblend"))
        .args(args)
        .env("GAUSSBLEND_THREADS", "1")
        .output()
        .expect("spawning gaussblend")
}

fn ok(args: &[&str]) -> String {
    let out = gaussblend(args);
    assert!(
        out.status.success(),
        "gaussblend {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    gaussblend(args).status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SPEC: &str = r#"{
  "frame_count": 10,
  "width": 32,
  "height": 24,
  "blendshape_count": 3,
  "subdivisions": 2,
  "init": { "neutral_target_count": 300, "mouth_target_count": 20, "sh_degree": 1 }
}"#;

const TRAIN: &str = r#"{
  "optimizer": { "iterations": 6, "densify_from": 2, "densify_interval": 2, "densify_until_fraction": 1.0 },
  "checkpoint_interval": 3,
  "eval_interval": 3,
  "eval_frames": 2,
  "holdout_frames": 2
}"#;

fn synth(root: &Path, name: &str) -> PathBuf {
    let spec = root.join("spec.json");
    std::fs::write(&spec, SPEC).unwrap();
    let out = root.join(name);
    ok(&["synth", "--spec", s(&spec), "--out", s(&out)]);
    out
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn csv_rows(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iteration,l_rgb,l_alpha,l_reg,total,heldout_psnr"));
    lines.map(String::from).collect()
}

#[test]
fn synth_writes_every_frame_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a");
    let b = synth(dir.path(), "b");
    assert_eq!(files(&a.join("images")).len(), 10);
    assert_eq!(files(&a.join("masks")).len(), 10);
    let frames = std::fs::read_to_string(a.join("frames.jsonl")).unwrap();
    assert_eq!(frames.lines().count(), 10);
    for name in ["model.gbm", "gt_avatar.gba", "frames.jsonl", "scenario.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    for sub in ["images", "masks"] {
        for (x, y) in files(&a.join(sub)).iter().zip(files(&b.join(sub))) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }
}

#[test]
fn training_zero_iterations_writes_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), "ds");
    let init_cfg = dir.path().join("init.json");
    std::fs::write(&init_cfg, r#"{ "neutral_target_count": 300, "mouth_target_count": 20, "sh_degree": 1 }"#)
        .unwrap();
    let init = dir.path().join("init.gba");
    ok(&["init", "--model", s(&ds.join("model.gbm")), "--config", s(&init_cfg), "--out", s(&init)]);
    let trained = dir.path().join("t0.gba");
    ok(&["train", "--dataset", s(&ds), "--out", s(&trained), "--iterations", "0"]);
    assert_eq!(std::fs::read(&init).unwrap(), std::fs::read(&trained).unwrap());
    assert!(csv_rows(&dir.path().join("t0.gba.metrics.csv")).is_empty());
}

#[test]
fn training_logs_every_iteration_and_resumes_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), "ds");
    let cfg = dir.path().join("train.json");
    std::fs::write(&cfg, TRAIN).unwrap();

    let full = dir.path().join("full.gba");
    ok(&["train", "--dataset", s(&ds), "--config", s(&cfg), "--out", s(&full)]);
    let rows = csv_rows(&dir.path().join("full.gba.metrics.csv"));
    assert_eq!(rows.len(), 6);
    for (i, r) in rows.iter().enumerate() {
        let cols: Vec<&str> = r.split(',').collect();
        assert_eq!(cols[0], (i + 1).to_string());
        assert_eq!(cols[5].is_empty(), (i + 1) % 3 != 0, "held-out PSNR column of row {r}");
    }

    let half = dir.path().join("half.gba");
    ok(&["train", "--dataset", s(&ds), "--config", s(&cfg), "--out", s(&half), "--iterations", "3"]);
    let resumed = dir.path().join("resumed.gba");
    let metrics = dir.path().join("resumed.csv");
    std::fs::copy(dir.path().join("half.gba.metrics.csv"), &metrics).unwrap();
    ok(&[
        "train",
        "--dataset",
        s(&ds),
        "--config",
        s(&cfg),
        "--out",
        s(&resumed),
        "--resume",
        s(&half),
        "--metrics",
        s(&metrics),
    ]);
    assert_eq!(std::fs::read(&full).unwrap(), std::fs::read(&resumed).unwrap());
    assert_eq!(csv_rows(&metrics), rows);
}

#[test]
fn render_writes_one_png_per_frame_for_both_renderers() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), "ds");
    let gt = ds.join("gt_avatar.gba");
    let frames = ds.join("frames.jsonl");
    let tiled = dir.path().join("tiled");
    let reference = dir.path().join("reference");
    ok(&["render", "--avatar", s(&gt), "--frames", s(&frames), "--out", s(&tiled), "--npy"]);
    ok(&[
        "render",
        "--avatar",
        s(&gt),
        "--frames",
        s(&frames),
        "--out",
        s(&reference),
        "--renderer",
        "reference",
    ]);
    let t = files(&tiled);
    assert_eq!(t.iter().filter(|p| p.extension().unwrap() == "png").count(), 10);
    assert_eq!(t.iter().filter(|p| p.extension().unwrap() == "npy").count(), 10);
    let r = files(&reference);
    assert_eq!(r.len(), 10);
    for p in &r {
        let name = p.file_name().unwrap();
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(tiled.join(name)).unwrap());
    }
    // The ground truth rendered through the CLI reproduces the dataset.
    for i in 0..10 {
        let name = format!("{i:06}.png");
        assert_eq!(
            std::fs::read(tiled.join(&name)).unwrap(),
            std::fs::read(ds.join("images").join(&name)).unwrap()
        );
    }
}

#[test]
fn eval_reports_capped_psnr_for_the_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), "ds");
    let gt = ds.join("gt_avatar.gba");
    let out = dir.path().join("report");
    ok(&["eval", "--avatar", s(&gt), "--dataset", s(&ds), "--holdout", "3", "--out", s(&out)]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["frame_count"], 3);
    assert_eq!(report["mean_psnr"].as_f64(), Some(99.0));
    assert!(report["mean_ssim"].as_f64().unwrap() > 0.9999);
    let csv = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let holdout0 = ["eval", "--avatar", s(&gt), "--dataset", s(&ds), "--holdout", "0", "--out", s(&out)];
    assert_eq!(code(&holdout0), 1);
    let too_many = ["eval", "--avatar", s(&gt), "--dataset", s(&ds), "--holdout", "11", "--out", s(&out)];
    assert_eq!(code(&too_many), 1);
}

#[test]
fn bench_reports_all_stages() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("bench.json");
    let stdout = ok(&[
        "bench",
        "--gaussians",
        "500",
        "--blendshapes",
        "4",
        "--frames",
        "3",
        "--width",
        "32",
        "--height",
        "32",
        "--json",
        s(&json),
    ]);
    assert!(stdout.contains("model updates"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report["n"], 500);
    assert_eq!(report["k"], 4);
    assert_eq!(report["stages"].as_array().unwrap().len(), 3);
    assert!(report["model_updates_per_second"].as_f64().unwrap() > 0.0);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["render", "--avatar", "a.gba"]), 1);
    assert_eq!(code(&["bench", "--stage", "fast"]), 1);
    assert_eq!(code(&["--threads", "0", "bench"]), 1);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["eval", "--avatar", s(&missing), "--dataset", s(&missing), "--holdout", "1", "--out", "x"]), 2);

    let corrupt = dir.path().join("corrupt.gba");
    std::fs::write(&corrupt, b"GBAVATAR but not really").unwrap();
    let frames = dir.path().join("frames.jsonl");
    std::fs::write(&frames, "").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["render", "--avatar", s(&corrupt), "--frames", s(&frames), "--out", s(&out)]), 2);

    let spec = dir.path().join("bad.json");
    std::fs::write(&spec, r#"{ "frame_count": 2, "width": 0 }"#).unwrap();
    assert_eq!(code(&["synth", "--spec", s(&spec), "--out", s(&out)]), 2);

    let ds = synth(dir.path(), "ds");
    let gt = ds.join("gt_avatar.gba");
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    assert_eq!(code(&["serve", "--avatar", s(&gt), "--port", &port]), 3);
}
