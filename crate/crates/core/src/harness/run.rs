//! Training, evaluation and report drivers behind the CLI.

use std::io::Write;
use std::path::{Path, PathBuf};

use facesr_grad::{adam_step, AdamConfig, AdamState, Tensor, Var};

use super::config::{OracleConfig, RunConfig};
use super::log::{read_csv, RunLock, TrainLog};
use super::metrics::{pearson, psnr, sharpness};
use super::scenes::{gen_scenes, SceneSample};
use super::tasks::{build_task, mix_seed, pretrain_pair, train_sample, Task};
use crate::degrade::{resize, DistributionProfile, ResampleFilter};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::meta::{adapt_trajectory, supervised_gradient, train_step, Models, TrainState};
use crate::nets::Checkpoint;
use crate::oracle::error_map;
use crate::par::Exec;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.csv";

// Seed streams.
const STREAM_SCENES: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_TASKS: u64 = 3;
const STREAM_PATCHES: u64 = 4;
const STREAM_EVAL_SCENES: u64 = 5;
const STREAM_EVAL_TASKS: u64 = 6;
const STREAM_MASK_TASKS: u64 = 7;

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub rows: usize,
}

fn sum_into(acc: &mut Option<Vec<Tensor>>, g: Vec<Tensor>) -> Result<()> {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for (x, y) in a.iter_mut().zip(&g) {
                *x = x.zip_map(y, |p, q| p + q)?;
            }
        }
    }
    Ok(())
}

fn pretrain(
    cfg: &RunConfig,
    models: &Models,
    state: &mut TrainState,
    scenes: &[SceneSample],
    profile: &DistributionProfile,
    out_dir: &Path,
    exec: Exec,
) -> Result<()> {
    let p = &cfg.pretrain;
    if p.steps == 0 {
        return Ok(());
    }
    let path = out_dir.join(PRETRAIN_LOG_FILE);
    let mut log = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    writeln!(log, "# facesr pretrain log v1\nstep,l1").map_err(|e| Error::io(&path, e))?;
    let mut adam = AdamState::new(&state.theta);
    let lambda = crate::meta::Lambdas { l1: 1.0, perceptual: 0.0, adv: 0.0, reg: 0.0 };
    for step in 0..p.steps {
        let theta = &state.theta;
        let outs = exec.map_range(p.batch, |i| {
            let seed = mix_seed(cfg.seed, STREAM_PRETRAIN, (step * p.batch + i) as u64);
            let scene = &scenes[(seed % scenes.len() as u64) as usize];
            let (lr, hr) = pretrain_pair(scene, profile, p.patch, seed)?;
            supervised_gradient(models, theta, &lr, &hr, &lambda)
        });
        let mut acc = None;
        let mut loss = 0.0;
        for o in outs {
            let (g, l) = o?;
            loss += l / p.batch as f64;
            sum_into(&mut acc, g)?;
        }
        let g = acc.expect("batch >= 1");
        state.theta = adam_step(&state.theta, &g, &mut adam, &AdamConfig::new(p.lr, 0.9, 0.999))?;
        writeln!(log, "{step},{loss:e}").map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Builds the batch of training tasks for meta step `step`.
pub fn training_batch(
    cfg: &RunConfig,
    scenes: &[SceneSample],
    profile: &DistributionProfile,
    step: usize,
    exec: Exec,
) -> Result<Vec<crate::meta::TaskSample>> {
    let b = cfg.train.batch;
    exec.map_range(b, |i| {
        let seed = mix_seed(cfg.seed, STREAM_TASKS, (step * b + i) as u64);
        let scene = &scenes[(seed % scenes.len() as u64) as usize];
        let task = build_task(scene, profile, &cfg.oracle, cfg.train.faces_per_task, seed)?;
        train_sample(&task, &cfg.train, cfg.scale(), mix_seed(seed, STREAM_PATCHES, 0))
    })
    .into_iter()
    .collect()
}

/// Scenes used for training.
pub fn training_scenes(cfg: &RunConfig, exec: Exec) -> Result<Vec<SceneSample>> {
    gen_scenes(&cfg.data, cfg.scale(), mix_seed(cfg.seed, STREAM_SCENES, 0), exec)
}

/// Pretraining followed by `train.steps` meta-training steps. Writes the CSV
/// logs and the checkpoint into `out_dir`.
pub fn train(
    cfg: &RunConfig,
    out_dir: &Path,
    exec: Exec,
    progress: &mut dyn FnMut(&str),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let _lock = RunLock::acquire(out_dir)?;
    let config_echo = cfg.to_toml()?;
    let cfg_path = out_dir.join("config.toml");
    std::fs::write(&cfg_path, &config_echo).map_err(|e| Error::io(&cfg_path, e))?;

    let models = cfg.models()?;
    let profile = cfg.profile()?;
    let mut state = TrainState::init(&models, cfg.seed);
    let scenes = training_scenes(cfg, exec)?;
    progress(&format!("generated {} training scenes", scenes.len()));
    pretrain(cfg, &models, &mut state, &scenes, &profile, out_dir, exec)?;
    progress(&format!("pretrained for {} steps", cfg.pretrain.steps));

    let log_path = out_dir.join(LOG_FILE);
    let mut log = TrainLog::create(&log_path)?;
    for step in 0..cfg.train.steps {
        let tasks = training_batch(cfg, &scenes, &profile, step, exec)?;
        let m = train_step(&models, &mut state, &tasks, &cfg.train, exec)?;
        log.append(&m)?;
        if step % 10 == 0 || step + 1 == cfg.train.steps {
            progress(&format!(
                "step {step}: total {:.5} l1 {:.5} inner {:.5} mask {:.4}",
                m.parts.total, m.parts.l1, m.inner, m.mask_mean
            ));
        }
    }
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    state.to_checkpoint(&config_echo).save(&ckpt_path)?;
    Ok(TrainOutcome { state, checkpoint: ckpt_path, log: log_path, rows: cfg.train.steps })
}

/// Reads a checkpoint together with the configuration echoed inside it.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, Models, TrainState)> {
    let c = Checkpoint::load(path)?;
    let cfg = RunConfig::from_toml(&c.config)?;
    let models = cfg.models()?;
    let state = TrainState::from_checkpoint(&models, &c)?;
    Ok((cfg, models, state))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub task: usize,
    pub faces: usize,
    /// One entry per requested step count.
    pub psnr: Vec<f64>,
    pub l1: Vec<f64>,
    pub sharpness: Vec<f64>,
    pub inner_first: f64,
    pub inner_last: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskStats {
    pub faces: usize,
    pub mean_pearson: f64,
    pub mean_inside: f64,
    pub mean_outside: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub steps: Vec<usize>,
    pub rows: Vec<EvalRow>,
    pub mask: Option<MaskStats>,
}

impl EvalReport {
    fn index(&self, n: usize) -> Result<usize> {
        self.steps
            .iter()
            .position(|&s| s == n)
            .ok_or_else(|| Error::Invalid(format!("step count {n} was not evaluated")))
    }

    pub fn mean_psnr(&self, n: usize) -> Result<f64> {
        let k = self.index(n)?;
        Ok(self.rows.iter().map(|r| r.psnr[k]).sum::<f64>() / self.rows.len() as f64)
    }

    /// Fraction of tasks whose whole-image L1 after `b` steps is strictly
    /// below the L1 after `a` steps.
    pub fn improved_fraction(&self, a: usize, b: usize) -> Result<f64> {
        let (ka, kb) = (self.index(a)?, self.index(b)?);
        let better = self.rows.iter().filter(|r| r.l1[kb] < r.l1[ka]).count();
        Ok(better as f64 / self.rows.len() as f64)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("eval.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(e.to_string()))?;
        let mut header = vec!["task".to_string(), "faces".to_string()];
        for metric in ["psnr", "l1", "sharpness"] {
            header.extend(self.steps.iter().map(|n| format!("{metric}_n{n}")));
        }
        header.extend(["inner_first".to_string(), "inner_last".to_string()]);
        w.write_record(&header).map_err(|e| Error::Format(e.to_string()))?;
        for r in &self.rows {
            let mut row = vec![r.task.to_string(), r.faces.to_string()];
            for vals in [&r.psnr, &r.l1, &r.sharpness] {
                row.extend(vals.iter().map(|v| format!("{v:e}")));
            }
            row.extend([format!("{:e}", r.inner_first), format!("{:e}", r.inner_last)]);
            w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Format(e.to_string()))?;
        w.write_record(["metric", "value"]).map_err(|e| Error::Format(e.to_string()))?;
        let mut put = |k: String, v: f64| w.write_record([k, format!("{v}")]);
        for &n in &self.steps {
            put(format!("mean_psnr_n{n}"), self.mean_psnr(n)?).map_err(|e| Error::Format(e.to_string()))?;
        }
        if self.steps.contains(&0) {
            for &n in self.steps.iter().filter(|&&n| n > 0) {
                put(format!("improved_fraction_n{n}"), self.improved_fraction(0, n)?)
                    .map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        if let Some(m) = &self.mask {
            for (k, v) in [
                ("mask_faces", m.faces as f64),
                ("mask_pearson", m.mean_pearson),
                ("mask_mean_inside", m.mean_inside),
                ("mask_mean_outside", m.mean_outside),
            ] {
                put(k.to_string(), v).map_err(|e| Error::Format(e.to_string()))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Held-out tasks: fresh scenes and degradations from the eval seed.
pub fn eval_tasks(cfg: &RunConfig, oracle: &OracleConfig, stream: u64, count: usize, exec: Exec) -> Result<Vec<Task>> {
    let profile = DistributionProfile::preset(&cfg.eval.preset, cfg.scale())?;
    let data = super::scenes::SceneConfig { count, ..cfg.data.clone() };
    let scenes = gen_scenes(&data, cfg.scale(), mix_seed(cfg.eval.seed, STREAM_EVAL_SCENES, stream), exec)?;
    exec.map(&scenes, |i, scene| {
        build_task(scene, &profile, oracle, usize::MAX, mix_seed(cfg.eval.seed, stream, i as u64))
    })
    .into_iter()
    .collect()
}

/// Whole-image adaptation benefit over held-out tasks for every step count
/// in `cfg.eval.steps`, and mask/error-map agreement.
pub fn evaluate(cfg: &RunConfig, models: &Models, state: &TrainState, exec: Exec) -> Result<(EvalReport, Vec<Task>, Vec<Vec<Image>>)> {
    let steps = cfg.eval.steps.clone();
    let tasks = eval_tasks(cfg, &cfg.oracle, STREAM_EVAL_TASKS, cfg.eval.tasks, exec)?;
    let theta_m = cfg.train.use_masknet.then_some(&state.theta_m);
    let alpha = cfg.adapt_alpha();
    let s = cfg.scale();
    let results = exec.map(&tasks, |i, t| -> Result<(EvalRow, Vec<Image>)> {
        let faces = t.adapt_faces(s);
        let (srs, _, losses, _) = adapt_trajectory(models, &state.theta, theta_m, &t.lr, &faces, &steps, alpha)?;
        let srs: Vec<Image> = srs.iter().map(Image::clamp01).collect();
        let mut row = EvalRow {
            task: i,
            faces: faces.len(),
            psnr: Vec::new(),
            l1: Vec::new(),
            sharpness: Vec::new(),
            inner_first: losses.first().copied().unwrap_or(f64::NAN),
            inner_last: losses.last().copied().unwrap_or(f64::NAN),
        };
        for sr in &srs {
            row.psnr.push(psnr(sr, &t.hr)?);
            row.l1.push(sr.mean_abs_diff(&t.hr)?);
            row.sharpness.push(sharpness(sr));
        }
        Ok((row, srs))
    });
    let mut rows = Vec::with_capacity(results.len());
    let mut images = Vec::with_capacity(results.len());
    for r in results {
        let (row, srs) = r?;
        rows.push(row);
        images.push(srs);
    }
    let mask = if cfg.train.use_masknet && cfg.eval.mask_faces > 0 {
        Some(mask_stats(cfg, models, state, exec)?)
    } else {
        None
    };
    Ok((EvalReport { steps, rows, mask }, tasks, images))
}

/// Pearson correlation between the predicted mask and `1 - EM` per face,
/// averaged over faces, and mean mask value inside and outside the oracle's
/// corruption support.
pub fn mask_stats(cfg: &RunConfig, models: &Models, state: &TrainState, exec: Exec) -> Result<MaskStats> {
    let want = cfg.eval.mask_faces;
    let oracle = OracleConfig {
        strength: [cfg.eval.mask_strength; 2],
        kinds: vec![cfg.eval.mask_kind],
        ..cfg.oracle.clone()
    };
    let tasks = eval_tasks(cfg, &oracle, STREAM_MASK_TASKS, want, exec)?;
    let faces: Vec<_> = tasks.iter().flat_map(|t| t.faces.iter()).take(want).collect();
    if faces.is_empty() {
        return Err(Error::Invalid("no faces for mask statistics".into()));
    }
    let per_face = exec.map(&faces, |_, f| -> Result<(f64, f64, usize, f64, usize)> {
        let fs = &f.sample;
        let theta_m = state.theta_m.constants();
        let m = models.mask.forward(
            &theta_m,
            Some(&Var::constant(fs.lr.to_tensor())),
            &Var::constant(fs.bfr.to_tensor()),
        )?;
        let m = m.value().data().to_vec();
        let em = error_map(&fs.gt, &fs.bfr)?;
        let one_minus: Vec<f64> = em.data().iter().map(|e| 1.0 - e).collect();
        let (mut sin, mut nin, mut sout, mut nout) = (0.0, 0, 0.0, 0);
        for (i, &v) in m.iter().enumerate() {
            if fs.support.mask[i] {
                sin += v;
                nin += 1;
            } else {
                sout += v;
                nout += 1;
            }
        }
        Ok((pearson(&m, &one_minus), sin, nin, sout, nout))
    });
    let (mut r_sum, mut sin, mut nin, mut sout, mut nout) = (0.0, 0.0, 0, 0.0, 0);
    for p in per_face {
        let (r, a, b, c, d) = p?;
        r_sum += r;
        sin += a;
        nin += b;
        sout += c;
        nout += d;
    }
    Ok(MaskStats {
        faces: faces.len(),
        mean_pearson: r_sum / faces.len() as f64,
        mean_inside: sin / nin.max(1) as f64,
        mean_outside: sout / nout.max(1) as f64,
    })
}

/// Writes `task_NNN_lr.png` (nearest-upsampled), one `task_NNN_nK.png` per
/// step count and `task_NNN_hr.png` for the first `count` tasks.
pub fn write_samples(
    dir: &Path,
    steps: &[usize],
    tasks: &[Task],
    images: &[Vec<Image>],
    count: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (t, srs)) in tasks.iter().zip(images).take(count).enumerate() {
        let up = resize(&t.lr, t.hr.height(), t.hr.width(), ResampleFilter::Nearest)?;
        up.write_png(&dir.join(format!("task_{i:03}_lr.png")))?;
        for (n, sr) in steps.iter().zip(srs) {
            sr.write_png(&dir.join(format!("task_{i:03}_n{n}.png")))?;
        }
        t.hr.write_png(&dir.join(format!("task_{i:03}_hr.png")))?;
    }
    Ok(())
}

/// Per-column first/last/min/max/mean of a numeric CSV log.
pub fn summarize_log(path: &Path) -> Result<Vec<(String, [f64; 5])>> {
    let (header, rows) = read_csv(path)?;
    let mut out = Vec::new();
    for (k, name) in header.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r.get(k)?.parse().ok()).collect();
        if vals.is_empty() {
            continue;
        }
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        out.push((name.clone(), [vals[0], vals[vals.len() - 1], min, max, mean]));
    }
    Ok(out)
}

/// Places images side by side on a white background.
pub fn side_by_side(images: &[Image]) -> Result<Image> {
    let h = images.iter().map(Image::height).max().unwrap_or(0);
    let w: usize = images.iter().map(Image::width).sum::<usize>() + 2 * images.len().saturating_sub(1);
    if h == 0 || w == 0 {
        return Err(Error::Invalid("nothing to place".into()));
    }
    let mut grid = Image::filled(3, h, w, 1.0);
    let mut x = 0;
    for img in images {
        let img = if img.channels() == 3 { img.clone() } else { Image::from_fn(3, img.height(), img.width(), |_, y, x| img.get(0, y, x)) };
        grid.paste(&img, x, 0)?;
        x += img.width() + 2;
    }
    Ok(grid)
}

/// Summaries of a run directory (and optional eval directory) into
/// `report_dir`. Missing pieces are reported as warnings, not errors.
pub fn report(run_dir: &Path, eval_dir: Option<&Path>, report_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(report_dir).map_err(|e| Error::io(report_dir, e))?;
    let mut notes = Vec::new();
    for file in [LOG_FILE, PRETRAIN_LOG_FILE] {
        let path = run_dir.join(file);
        match summarize_log(&path) {
            Ok(summary) => {
                let out = report_dir.join(file.replace(".csv", "_summary.csv"));
                let mut w = csv::Writer::from_path(&out).map_err(|e| Error::Format(e.to_string()))?;
                w.write_record(["column", "first", "last", "min", "max", "mean"])
                    .map_err(|e| Error::Format(e.to_string()))?;
                for (name, v) in summary {
                    let mut row = vec![name];
                    row.extend(v.iter().map(|x| format!("{x:e}")));
                    w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
                }
                w.flush().map_err(|e| Error::io(&out, e))?;
                notes.push(format!("wrote {}", out.display()));
            }
            Err(e) => notes.push(format!("warning: {}: {e}", path.display())),
        }
    }
    if let Some(eval_dir) = eval_dir {
        let samples = eval_dir.join("samples");
        let mut ids: Vec<String> = std::fs::read_dir(&samples)
            .map_err(|e| Error::io(&samples, e))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter_map(|n| n.strip_suffix("_hr.png").map(str::to_string))
            .collect();
        ids.sort();
        for id in ids {
            let mut parts: Vec<(usize, PathBuf)> = Vec::new();
            for entry in std::fs::read_dir(&samples).map_err(|e| Error::io(&samples, e))?.flatten() {
                let name = entry.file_name().into_string().unwrap_or_default();
                if let Some(n) = name.strip_prefix(&format!("{id}_n")).and_then(|r| r.strip_suffix(".png")) {
                    if let Ok(n) = n.parse::<usize>() {
                        parts.push((n, entry.path()));
                    }
                }
            }
            parts.sort();
            let mut imgs = vec![Image::read_png(&samples.join(format!("{id}_lr.png")))?];
            for (_, p) in &parts {
                imgs.push(Image::read_png(p)?);
            }
            imgs.push(Image::read_png(&samples.join(format!("{id}_hr.png")))?);
            let out = report_dir.join(format!("{id}_grid.png"));
            side_by_side(&imgs)?.write_png(&out)?;
            notes.push(format!("wrote {}", out.display()));
        }
    }
    Ok(notes)
}
