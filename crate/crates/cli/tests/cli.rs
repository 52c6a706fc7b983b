use std::path::Path;
use std::process::{Command, Output};

const MINI: &str = r#"
seed = 3
[data]
count = 4
height = 64
width = 64
face_area = 0.2
max_faces = 2
[oracle]
region_size = [4, 8]
[srnet]
width = 4
blocks = 1
[masknet]
width = 4
layers = 3
[disc]
width = 4
[pretrain]
steps = 2
batch = 2
patch = 32
[train]
alpha = 0.1
batch = 2
steps = 2
outer_patch = 32
[eval]
tasks = 2
steps = [0, 1]
mask_faces = 2
samples = 1
"#;

fn run(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facesr")).args(args).output().unwrap()
}

fn ok(args: &[&Path]) -> String {
    let out = run(args);
    assert!(out.status.success(), "facesr {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

macro_rules! p {
    ($s:expr) => {
        Path::new($s)
    };
}

#[test]
fn usage_errors_exit_two_and_runtime_errors_exit_one() {
    assert_eq!(run(&[p!("frobnicate")]).status.code(), Some(2));
    assert_eq!(run(&[p!("train")]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let out = run(&[p!("train"), p!("--config"), &missing]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn full_pipeline_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("mini.toml");
    std::fs::write(&cfg, MINI).unwrap();
    let (data, lr, run_dir) = (d.join("data"), d.join("lr"), d.join("run"));

    ok(&[p!("gen-data"), p!("--config"), &cfg, p!("--out"), &data, p!("--count"), p!("3")]);
    assert!(data.join("scene_0002.png").exists());
    ok(&[p!("degrade"), p!("--input"), &data.join("scenes.json"), p!("--out"), &lr, p!("--seed"), p!("5")]);
    assert!(lr.join("lr_0000.png").exists() && lr.join("specs.json").exists());
    ok(&[p!("degrade"), p!("--input"), &data.join("scene_0000.png"), p!("--out"), &d.join("one")]);
    assert!(d.join("one/lr.png").exists());

    ok(&[p!("--sequential"), p!("train"), p!("--config"), &cfg, p!("--out"), &run_dir]);
    let ckpt = run_dir.join("model.ckpt");
    assert!(ckpt.exists() && run_dir.join("train_log.csv").exists());

    // zero adaptation steps must reproduce the plain super-resolution exactly
    let base = d.join("base.png");
    let printed = ok(&[
        p!("eval"), p!("--checkpoint"), &ckpt, p!("--input"), &lr.join("lr_0000.png"),
        p!("--reference"), &data.join("scene_0000.png"), p!("--out"), &base,
    ]);
    assert!(printed.starts_with("psnr,"), "{printed}");
    let adapt = |steps: &str, out: &Path| {
        ok(&[
            p!("adapt"), p!("--checkpoint"), &ckpt, p!("--input"), &lr.join("lr_0000.png"),
            p!("--faces"), &lr.join("scenes.json"), p!("--gt"), &data.join("scene_0000.png"),
            p!("--steps"), p!(steps), p!("--out"), out,
        ])
    };
    let (zero, one) = (d.join("zero.png"), d.join("one.png"));
    adapt("0", &zero);
    adapt("1", &one);
    assert_eq!(std::fs::read(&base).unwrap(), std::fs::read(&zero).unwrap());
    assert_ne!(std::fs::read(&base).unwrap(), std::fs::read(&one).unwrap());

    let eval = d.join("eval");
    let printed = ok(&[p!("eval"), p!("--checkpoint"), &ckpt, p!("--out"), &eval]);
    assert!(printed.contains("mean_psnr_n1,") && printed.contains("mask_pearson,"), "{printed}");
    assert!(eval.join("summary.csv").exists() && eval.join("eval.csv").exists());

    let report = d.join("report");
    ok(&[p!("report"), p!("--run"), &run_dir, p!("--eval"), &eval, p!("--out"), &report]);
    assert!(report.join("train_log_summary.csv").exists());
}
