//! Building degradation tasks from scenes.

use facesr_grad::Rect;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::OracleConfig;
use super::scenes::SceneSample;
use crate::degrade::{sample_spec, DegradationSpec, DistributionProfile};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::meta::{AdaptFace, FaceSample, TaskSample, TrainConfig};
use crate::oracle::{restore, RestorerSpec, Support};

/// SplitMix64 finaliser over a combined key; used to derive independent seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskFace {
    /// In HR pixels.
    pub rect: Rect,
    pub sample: FaceSample,
}

/// A whole degraded scene with its oracle-restored faces.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub spec: DegradationSpec,
    pub hr: Image,
    pub lr: Image,
    pub faces: Vec<TaskFace>,
}

impl Task {
    pub fn adapt_faces(&self, scale: usize) -> Vec<AdaptFace> {
        self.faces
            .iter()
            .map(|f| AdaptFace {
                rect: Rect::new(f.rect.x / scale, f.rect.y / scale, f.rect.w / scale, f.rect.h / scale),
                target: f.sample.bfr.clone(),
            })
            .collect()
    }
}

/// Degrades `scene` with a spec drawn from `profile` and restores up to
/// `max_faces` of its faces with the oracle. Deterministic in `seed`.
pub fn build_task(
    scene: &SceneSample,
    profile: &DistributionProfile,
    oracle: &OracleConfig,
    max_faces: usize,
    seed: u64,
) -> Result<Task> {
    let s = profile.scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = sample_spec(profile, rng.random())?;
    let lr = spec.apply(&scene.image)?;
    let mut order: Vec<usize> = (0..scene.faces.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut faces = Vec::new();
    for &i in order.iter().take(max_faces) {
        let r = scene.faces[i];
        if r.x % s != 0 || r.y % s != 0 || r.w % s != 0 || r.h % s != 0 {
            return Err(Error::Invalid(format!("face {r:?} is not aligned to scale {s}")));
        }
        let gt = scene.image.crop(r)?;
        let face_lr = lr.crop(Rect::new(r.x / s, r.y / s, r.w / s, r.h / s))?;
        let strength = if oracle.strength[0] == oracle.strength[1] {
            oracle.strength[0]
        } else {
            rng.random_range(oracle.strength[0]..=oracle.strength[1])
        };
        let kind = oracle.kinds[rng.random_range(0..oracle.kinds.len())];
        let max_region = oracle.region_size[1].min(r.w).min(r.h);
        let spec = RestorerSpec {
            strength,
            regions: oracle.regions,
            region_size: [oracle.region_size[0].min(max_region), max_region],
            kind,
            seed: rng.random(),
        };
        let restored = restore(&spec, &face_lr, &gt)?;
        faces.push(TaskFace {
            rect: r,
            sample: FaceSample { lr: face_lr, gt, bfr: restored.bfr, support: restored.support },
        });
    }
    Ok(Task { spec, hr: scene.image.clone(), lr, faces })
}

fn crop_support(s: &Support, r: Rect) -> Support {
    let mut out = Support::empty(r.h, r.w);
    for y in 0..r.h {
        for x in 0..r.w {
            out.mask[y * r.w + x] = s.contains(r.y + y, r.x + x);
        }
    }
    out
}

/// Cuts a training sample out of a task: a random outer patch (on the scale
/// grid) and either whole faces or random inner patches of them.
pub fn train_sample(task: &Task, cfg: &TrainConfig, scale: usize, seed: u64) -> Result<TaskSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (task.hr.height(), task.hr.width());
    let p = cfg.outer_patch;
    let (hr, lr) = if p == 0 || (p >= h && p >= w) {
        (task.hr.clone(), task.lr.clone())
    } else {
        let y = rng.random_range(0..=(h - p) / scale) * scale;
        let x = rng.random_range(0..=(w - p) / scale) * scale;
        (
            task.hr.crop(Rect::new(x, y, p, p))?,
            task.lr.crop(Rect::new(x / scale, y / scale, p / scale, p / scale))?,
        )
    };
    let mut faces = Vec::new();
    for f in &task.faces {
        let fs = &f.sample;
        if cfg.patches_per_face == 0 {
            faces.push(fs.clone());
            continue;
        }
        let q = cfg.inner_patch.min(fs.lr.height()).min(fs.lr.width());
        for _ in 0..cfg.patches_per_face {
            let y = rng.random_range(0..=fs.lr.height() - q);
            let x = rng.random_range(0..=fs.lr.width() - q);
            let hr_rect = Rect::new(x * scale, y * scale, q * scale, q * scale);
            faces.push(FaceSample {
                lr: fs.lr.crop(Rect::new(x, y, q, q))?,
                gt: fs.gt.crop(hr_rect)?,
                bfr: fs.bfr.crop(hr_rect)?,
                support: crop_support(&fs.support, hr_rect),
            });
        }
    }
    Ok(TaskSample { lr, hr, faces })
}

/// Supervised `(lr, hr)` patch pair for warm-start training.
pub fn pretrain_pair(
    scene: &SceneSample,
    profile: &DistributionProfile,
    patch: usize,
    seed: u64,
) -> Result<(Image, Image)> {
    let s = profile.scale;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = sample_spec(profile, rng.random())?;
    let lr = spec.apply(&scene.image)?;
    let (h, w) = (scene.image.height(), scene.image.width());
    let y = rng.random_range(0..=(h - patch) / s) * s;
    let x = rng.random_range(0..=(w - patch) / s) * s;
    Ok((
        lr.crop(Rect::new(x / s, y / s, patch / s, patch / s))?,
        scene.image.crop(Rect::new(x, y, patch, patch))?,
    ))
}
