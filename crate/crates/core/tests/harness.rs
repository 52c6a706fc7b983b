use std::path::Path;

use facesr_core::harness::config::RunConfig;
use facesr_core::harness::log::{read_csv, LOG_COLUMNS};
use facesr_core::harness::run::{self, CHECKPOINT_FILE, LOG_FILE};
use facesr_core::harness::scenes::{gen_scenes, SceneConfig};
use facesr_core::nets::Checkpoint;
use facesr_core::par::Exec;

fn mini() -> RunConfig {
    RunConfig::from_toml(
        r#"
seed = 5
[data]
count = 6
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
steps = 3
batch = 2
patch = 32
[train]
alpha = 0.1
batch = 2
steps = 3
outer_patch = 32
[eval]
tasks = 3
steps = [0, 1, 2]
mask_faces = 3
samples = 2
"#,
    )
    .unwrap()
}

fn quiet(_: &str) {}

#[test]
fn generated_scenes_cover_about_a_tenth_with_faces() {
    let cfg = SceneConfig { count: 100, ..SceneConfig::default() };
    let scenes = gen_scenes(&cfg, 4, 1, Exec::default()).unwrap();
    let mean = scenes.iter().map(|s| s.face_area_fraction()).sum::<f64>() / 100.0;
    assert!((0.07..=0.13).contains(&mean), "{mean}");
    assert!(scenes.iter().all(|s| !s.faces.is_empty()));
}

fn train_into(dir: &Path, exec: Exec) -> (String, u64) {
    let out = run::train(&mini(), dir, exec, &mut quiet).unwrap();
    assert_eq!(out.rows, 3);
    let log = std::fs::read_to_string(dir.join(LOG_FILE)).unwrap();
    (log, Checkpoint::load(&dir.join(CHECKPOINT_FILE)).unwrap().hash())
}

#[test]
fn runs_repeat_exactly_in_both_execution_modes() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_into(&dir.path().join("a"), Exec::Sequential);
    let b = train_into(&dir.path().join("b"), Exec::Parallel);
    let c = train_into(&dir.path().join("c"), Exec::Parallel);
    assert_eq!(a, b);
    assert_eq!(b, c);
}

#[test]
fn train_eval_report_round() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    train_into(&run_dir, Exec::default());
    let (header, rows) = read_csv(&run_dir.join(LOG_FILE)).unwrap();
    assert_eq!(header, LOG_COLUMNS);
    assert_eq!(rows.len(), 3);
    assert!(!run_dir.join("run.lock").exists());

    let (cfg, models, state) = run::load_checkpoint(&run_dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(cfg, mini());
    assert_eq!(state.step, 3);
    let (report, tasks, images) = run::evaluate(&cfg, &models, &state, Exec::default()).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.psnr.len() == 3 && r.psnr.iter().all(|p| p.is_finite())));
    let mask = report.mask.as_ref().unwrap();
    assert_eq!(mask.faces, 3);
    assert!(mask.mean_pearson.is_finite());
    assert!(report.mean_psnr(5).is_err());

    let eval_dir = dir.path().join("eval");
    report.write(&eval_dir).unwrap();
    run::write_samples(&eval_dir.join("samples"), &report.steps, &tasks, &images, 2).unwrap();
    let (header, rows) = read_csv(&eval_dir.join("summary.csv")).unwrap();
    assert_eq!(header, ["metric", "value"]);
    assert!(rows.iter().any(|r| r[0] == "improved_fraction_n1"));

    let notes = run::report(&run_dir, Some(&eval_dir), &dir.path().join("report")).unwrap();
    assert!(notes.iter().all(|n| !n.starts_with("warning")), "{notes:?}");
    assert!(dir.path().join("report/task_001_grid.png").exists());
    assert!(dir.path().join("report/train_log_summary.csv").exists());
}

#[test]
fn a_locked_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let _held = facesr_core::harness::log::RunLock::acquire(dir.path()).unwrap();
    assert!(run::train(&mini(), dir.path(), Exec::Sequential, &mut quiet).is_err());
}

#[test]
fn missing_logs_are_warnings_in_reports() {
    let dir = tempfile::tempdir().unwrap();
    let notes = run::report(dir.path(), None, &dir.path().join("out")).unwrap();
    assert_eq!(notes.len(), 2);
    assert!(notes.iter().all(|n| n.starts_with("warning")));
}
