//! Two-stage stochastic degradation: blur, resample, noise and block
//! compression per stage, then an exact resize to `HR / scale`.

mod jpeg;
mod kernel;
mod profile;
mod resample;

pub use jpeg::{compress, quant_table, MAX_QUALITY, MIN_QUALITY};
pub use kernel::{BlurKind, BlurSpec, Kernel};
pub use profile::{sample_spec, DistributionProfile, Range, StageProfile, Weighted};
pub use resample::{resize, resize_by, ResampleFilter};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Additive, signal-independent.
    Gaussian,
    /// Gaussian with variance proportional to intensity.
    Poisson,
    /// Multiplicative: `x + x * n`.
    Speckle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation (gaussian, speckle) or variance gain (poisson).
    pub strength: f64,
    /// Same realisation on every channel.
    #[serde(default)]
    pub gray: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleSpec {
    pub factor: f64,
    pub filter: ResampleFilter,
}

/// One degradation stage. Absent parts are identities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub blur: Option<BlurSpec>,
    pub resample: Option<ResampleSpec>,
    pub noise: Option<NoiseSpec>,
    /// JPEG quality in `[10, 100]`.
    pub quality: Option<u8>,
}

/// Every sampled parameter of one task's degradation.
///
/// Stages run in order. Within a stage the order is blur, resample, noise;
/// on the last stage the exact resize to `HR / scale` happens after noise and
/// before compression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub stages: Vec<StageSpec>,
    pub final_filter: ResampleFilter,
    pub scale: usize,
    pub seed: u64,
}

impl DegradationSpec {
    /// Plain downscale by `scale` with `filter`; no blur, noise or compression.
    pub fn identity(scale: usize, filter: ResampleFilter) -> Self {
        DegradationSpec {
            stages: vec![
                StageSpec {
                    resample: Some(ResampleSpec { factor: 1.0 / scale as f64, filter }),
                    ..StageSpec::default()
                },
                StageSpec::default(),
            ],
            final_filter: filter,
            scale,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Invalid("scale factor must be >= 1".into()));
        }
        for st in &self.stages {
            if let Some(b) = &st.blur {
                b.kernel()?;
            }
            if let Some(q) = st.quality {
                quant_table(q)?;
            }
            if let Some(n) = &st.noise {
                if !(n.strength >= 0.0) {
                    return Err(Error::Invalid(format!("noise strength {}", n.strength)));
                }
            }
        }
        Ok(())
    }

    /// Degrades `hr` into an image of exactly `(h / scale, w / scale)`.
    pub fn apply(&self, hr: &Image) -> Result<Image> {
        self.validate()?;
        let (_, h, w) = hr.dims();
        if h % self.scale != 0 || w % self.scale != 0 {
            return Err(Error::Invalid(format!(
                "HR size {w}x{h} is not divisible by scale {}",
                self.scale
            )));
        }
        let (th, tw) = (h / self.scale, w / self.scale);
        let mut img = hr.clone();
        let last = self.stages.len().saturating_sub(1);
        for (i, st) in self.stages.iter().enumerate() {
            if let Some(b) = &st.blur {
                img = b.kernel()?.apply(&img)?;
            }
            if let Some(r) = &st.resample {
                img = resize_by(&img, r.factor, r.filter)?;
            }
            if let Some(n) = &st.noise {
                img = add_noise(&img, n, self.seed, i as u64);
            }
            if i == last {
                img = resize(&img, th, tw, self.final_filter)?;
            }
            if let Some(q) = st.quality {
                img = compress(&img, q)?;
            }
        }
        if self.stages.is_empty() {
            img = resize(&img, th, tw, self.final_filter)?;
        }
        Ok(img)
    }
}

/// Seeded noise for stage `stage`; output clipped to `[0, 1]`.
pub fn add_noise(img: &Image, spec: &NoiseSpec, seed: u64, stage: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stage + 1)));
    let (ch, h, w) = img.dims();
    let n = h * w;
    let draws: Vec<f64> = if spec.gray {
        let plane: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        (0..ch).flat_map(|_| plane.iter().copied()).collect()
    } else {
        (0..ch * n).map(|_| StandardNormal.sample(&mut rng)).collect()
    };
    let mut out = img.clone();
    for (v, z) in out.data_mut().iter_mut().zip(draws) {
        let x = *v;
        let noisy = match spec.kind {
            NoiseKind::Gaussian => x + spec.strength * z,
            NoiseKind::Poisson => x + (spec.strength * x.max(0.0)).sqrt() * z,
            NoiseKind::Speckle => x + x * spec.strength * z,
        };
        *v = noisy.clamp(0.0, 1.0);
    }
    out
}
