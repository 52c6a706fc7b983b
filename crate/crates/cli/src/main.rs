//! `facesr`: data generation, degradation, meta-training, face-guided
//! adaptation, evaluation and reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use facesr_core::degrade::{sample_spec, DegradationSpec, DistributionProfile};
use facesr_core::harness::config::RunConfig;
use facesr_core::harness::metrics::{psnr, sharpness};
use facesr_core::harness::run;
use facesr_core::harness::scenes::{gen_scenes, load_scenes, read_meta, save_scenes, write_meta, SceneMeta};
use facesr_core::harness::tasks::mix_seed;
use facesr_core::meta::{adapt_and_superresolve, AdaptFace};
use facesr_core::oracle::{restore, RestorerSpec};
use facesr_core::par::Exec;
use facesr_core::{Error, Image, Result};
use facesr_grad::Rect;

#[derive(Parser)]
#[command(name = "facesr", version, about = "Face-guided meta-learned blind super-resolution")]
struct Cli {
    /// Run every data-parallel loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes with face metadata.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Scene count, size and face settings come from here when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Degrade a PNG or every scene of a metadata file.
    Degrade {
        /// A PNG image or a scenes JSON file.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "iid")]
        preset: String,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain and meta-train; writes the checkpoint and CSV logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adapt on the faces of one degraded image, then super-resolve it.
    Adapt {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Degraded image.
        #[arg(long)]
        input: PathBuf,
        /// `{image, faces: [{x, y, w, h}]}` with rects in degraded-image pixels.
        #[arg(long)]
        faces: PathBuf,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        /// Directory of restored faces `face_00.png`, `face_01.png`, ...
        #[arg(long, conflicts_with = "gt")]
        bfr: Option<PathBuf>,
        /// Ground-truth HR image; faces are restored with the oracle (self-test).
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        oracle_strength: f64,
        #[arg(long)]
        alpha: Option<f64>,
        /// Use m = 1 instead of the trained MaskNet.
        #[arg(long)]
        no_mask: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out evaluation tables, or a single base super-resolution.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Super-resolve this image without adaptation instead of running the
        /// held-out tasks; `--out` is then the output PNG.
        #[arg(long)]
        input: Option<PathBuf>,
        /// HR reference for `--input`; prints PSNR and sharpness.
        #[arg(long, requires = "input")]
        reference: Option<PathBuf>,
        #[arg(long)]
        tasks: Option<usize>,
        /// Comma-separated adaptation step counts, e.g. `0,1,10,20`.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
    },
    /// CSV summaries and side-by-side PNG grids.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    match dispatch(cli.cmd, exec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command, exec: Exec) -> Result<()> {
    match cmd {
        Command::GenData { out, config, count, seed } => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::default(),
            };
            if let Some(c) = count {
                cfg.data.count = c;
            }
            let seed = seed.unwrap_or(cfg.seed);
            let scenes = gen_scenes(&cfg.data, cfg.scale(), seed, exec)?;
            let meta = save_scenes(&out, &scenes)?;
            eprintln!("wrote {} scenes and {}", scenes.len(), meta.display());
            Ok(())
        }
        Command::Degrade { input, out, preset, scale, seed } => degrade(&input, &out, &preset, scale, seed, exec),
        Command::Train { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let outcome = run::train(&cfg, &dir, exec, &mut |msg| eprintln!("{msg}"))?;
            eprintln!("wrote {} ({} log rows)", outcome.checkpoint.display(), outcome.rows);
            Ok(())
        }
        Command::Adapt { checkpoint, input, faces, steps, bfr, gt, oracle_strength, alpha, no_mask, out } => {
            let (cfg, models, state) = run::load_checkpoint(&checkpoint)?;
            let lr = Image::read_png(&input)?;
            let rects: Vec<Rect> = read_meta(&faces)?
                .into_iter()
                .next()
                .ok_or_else(|| Error::Invalid(format!("{} lists no image", faces.display())))?
                .faces
                .into_iter()
                .map(Rect::from)
                .collect();
            let s = cfg.scale();
            let targets = face_targets(&lr, &rects, s, bfr.as_deref(), gt.as_deref(), oracle_strength, cfg.seed)?;
            let faces: Vec<AdaptFace> =
                rects.iter().zip(targets).map(|(&rect, target)| AdaptFace { rect, target }).collect();
            let theta_m = (!no_mask && cfg.train.use_masknet).then_some(&state.theta_m);
            let alpha = alpha.unwrap_or(cfg.adapt_alpha());
            let o = adapt_and_superresolve(&models, &state.theta, theta_m, &lr, &faces, steps, alpha)?;
            o.sr.clamp01().write_png(&out)?;
            for (i, l) in o.inner_losses.iter().enumerate() {
                eprintln!("inner loss after {i} steps: {l:.6}");
            }
            Ok(())
        }
        Command::Eval { checkpoint, out, input, reference, tasks, steps } => {
            let (mut cfg, models, state) = run::load_checkpoint(&checkpoint)?;
            if let Some(input) = input {
                let lr = Image::read_png(&input)?;
                let sr = models.sr.super_resolve(&state.theta, &lr)?.clamp01();
                sr.write_png(&out)?;
                if let Some(r) = reference {
                    let hr = Image::read_png(&r)?;
                    let sr8 = sr.quantized();
                    println!("psnr,{}", psnr(&sr8, &hr)?);
                    println!("sharpness,{}", sharpness(&sr8));
                }
                return Ok(());
            }
            if let Some(t) = tasks {
                cfg.eval.tasks = t;
            }
            if let Some(s) = steps {
                cfg.eval.steps = s;
            }
            let (report, tasks, images) = run::evaluate(&cfg, &models, &state, exec)?;
            report.write(&out)?;
            run::write_samples(&out.join("samples"), &report.steps, &tasks, &images, cfg.eval.samples)?;
            for &n in &report.steps {
                println!("mean_psnr_n{n},{:.4}", report.mean_psnr(n)?);
            }
            if let Some(m) = &report.mask {
                println!("mask_pearson,{:.4}", m.mean_pearson);
                println!("mask_mean_inside,{:.4}", m.mean_inside);
                println!("mask_mean_outside,{:.4}", m.mean_outside);
            }
            Ok(())
        }
        Command::Report { run: run_dir, eval, out } => {
            for note in run::report(&run_dir, eval.as_deref(), &out)? {
                eprintln!("{note}");
            }
            Ok(())
        }
    }
}

fn degrade(input: &Path, out: &Path, preset: &str, scale: usize, seed: u64, exec: Exec) -> Result<()> {
    let profile = DistributionProfile::preset(preset, scale)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let is_png = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let hr = Image::read_png(input)?;
        let spec = sample_spec(&profile, seed)?;
        spec.apply(&hr)?.write_png(&out.join("lr.png"))?;
        write_spec(&out.join("spec.json"), &[spec])?;
        return Ok(());
    }
    let scenes = load_scenes(input)?;
    let results = exec.map(&scenes, |i, scene| -> Result<(DegradationSpec, Image)> {
        let spec = sample_spec(&profile, mix_seed(seed, i as u64, 0))?;
        let lr = spec.apply(&scene.image)?;
        Ok((spec, lr))
    });
    let mut specs = Vec::new();
    let mut meta = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        let (spec, lr) = r?;
        let name = format!("lr_{i:04}.png");
        lr.write_png(&out.join(&name))?;
        let faces = scenes[i]
            .faces
            .iter()
            .map(|f| Rect::new(f.x / scale, f.y / scale, f.w / scale, f.h / scale).into())
            .collect();
        meta.push(SceneMeta { image: name, faces });
        specs.push(spec);
    }
    write_spec(&out.join("specs.json"), &specs)?;
    write_meta(&out.join("scenes.json"), &meta)?;
    eprintln!("degraded {} scenes into {}", scenes.len(), out.display());
    Ok(())
}

fn write_spec(path: &Path, specs: &[DegradationSpec]) -> Result<()> {
    let text = serde_json::to_string_pretty(specs).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Inner-loop targets, `scale` times the size of each face rect.
fn face_targets(
    lr: &Image,
    rects: &[Rect],
    s: usize,
    bfr: Option<&Path>,
    gt: Option<&Path>,
    strength: f64,
    seed: u64,
) -> Result<Vec<Image>> {
    let gt = gt.map(Image::read_png).transpose()?;
    if let Some(g) = &gt {
        if g.height() != lr.height() * s || g.width() != lr.width() * s {
            return Err(Error::Invalid(format!("ground truth is not {s}x the degraded image")));
        }
    }
    rects
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let face_lr = lr.crop(*r)?;
            if let Some(dir) = bfr {
                let t = Image::read_png(&dir.join(format!("face_{i:02}.png")))?;
                if t.height() != r.h * s || t.width() != r.w * s {
                    return Err(Error::Invalid(format!("restored face {i} must be {}x{}", r.w * s, r.h * s)));
                }
                return Ok(t);
            }
            let Some(g) = &gt else {
                return Err(Error::Invalid("adapt needs --bfr or --gt".into()));
            };
            let face_gt = g.crop(Rect::new(r.x * s, r.y * s, r.w * s, r.h * s))?;
            let side = (r.w * s).min(r.h * s);
            let spec = RestorerSpec {
                strength,
                region_size: [(side / 4).max(1), (side / 2).max(1)],
                seed: mix_seed(seed, 11, i as u64),
                ..RestorerSpec::default()
            };
            Ok(restore(&spec, &face_lr, &face_gt)?.bfr)
        })
        .collect()
}
