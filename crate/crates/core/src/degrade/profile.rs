//! Sampling distributions over [`DegradationSpec`]s.
//!
//! The default numbers are desk-scale choices for 64-128 px HR crops, not
//! published values; every one of them is a config key.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    BlurKind, BlurSpec, DegradationSpec, NoiseKind, NoiseSpec, ResampleFilter, ResampleSpec,
    StageSpec, MAX_QUALITY, MIN_QUALITY,
};
use crate::error::{Error, Result};

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min <= self.max) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::Config(format!("{name}: min {} > max {}", self.min, self.max)));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    /// Uniform integer in `[ceil(min), floor(max)]`.
    fn sample_int(&self, rng: &mut impl Rng) -> i64 {
        let (lo, hi) = (self.min.ceil() as i64, self.max.floor() as i64);
        rng.random_range(lo..=hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weighted<T> {
    pub value: T,
    pub weight: f64,
}

fn w<T>(value: T, weight: f64) -> Weighted<T> {
    Weighted { value, weight }
}

fn check_weights<T>(name: &str, items: &[Weighted<T>]) -> Result<()> {
    let total: f64 = items.iter().map(|i| i.weight).sum();
    if items.is_empty() || items.iter().any(|i| !(i.weight >= 0.0)) || !(total > 0.0) {
        return Err(Error::Config(format!("{name}: weights must be >= 0 with a positive sum")));
    }
    Ok(())
}

fn pick<T: Copy>(items: &[Weighted<T>], rng: &mut impl Rng) -> T {
    let total: f64 = items.iter().map(|i| i.weight).sum();
    let mut u = rng.random::<f64>() * total;
    for it in items {
        if u < it.weight {
            return it.value;
        }
        u -= it.weight;
    }
    items.iter().rev().find(|i| i.weight > 0.0).expect("validated").value
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name}: probability {p} outside [0, 1]")))
    }
}

/// Parameter ranges for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageProfile {
    pub blur_prob: f64,
    pub blur_kinds: Vec<Weighted<BlurKind>>,
    /// Odd kernel sizes are drawn from this interval.
    pub kernel_size: Range,
    pub sigma: Range,
    pub motion_length: Range,
    pub resample_prob: f64,
    pub resample_factor: Range,
    pub filters: Vec<Weighted<ResampleFilter>>,
    pub noise_prob: f64,
    pub noise_kinds: Vec<Weighted<NoiseKind>>,
    pub gaussian_sigma: Range,
    pub poisson_gain: Range,
    pub speckle_sigma: Range,
    pub gray_noise_prob: f64,
    pub jpeg_prob: f64,
    pub quality: Range,
}

impl StageProfile {
    fn validate(&self, stage: usize) -> Result<()> {
        let n = |s: &str| format!("stage {stage} {s}");
        for (name, p) in [
            ("blur_prob", self.blur_prob),
            ("resample_prob", self.resample_prob),
            ("noise_prob", self.noise_prob),
            ("gray_noise_prob", self.gray_noise_prob),
            ("jpeg_prob", self.jpeg_prob),
        ] {
            check_prob(&n(name), p)?;
        }
        for (name, r) in [
            ("kernel_size", self.kernel_size),
            ("sigma", self.sigma),
            ("motion_length", self.motion_length),
            ("resample_factor", self.resample_factor),
            ("gaussian_sigma", self.gaussian_sigma),
            ("poisson_gain", self.poisson_gain),
            ("speckle_sigma", self.speckle_sigma),
            ("quality", self.quality),
        ] {
            r.check(&n(name))?;
        }
        check_weights(&n("blur_kinds"), &self.blur_kinds)?;
        check_weights(&n("filters"), &self.filters)?;
        check_weights(&n("noise_kinds"), &self.noise_kinds)?;
        if self.kernel_size.min < 1.0 || odd_sizes(self.kernel_size).is_empty() {
            return Err(Error::Config(n("kernel_size must contain an odd size >= 1")));
        }
        if self.sigma.min <= 0.0 || self.motion_length.min <= 0.0 || self.resample_factor.min <= 0.0 {
            return Err(Error::Config(n("sigma, motion_length and resample_factor must be > 0")));
        }
        if self.quality.min < MIN_QUALITY as f64 || self.quality.max > MAX_QUALITY as f64 {
            return Err(Error::Config(n("quality must lie in [10, 100]")));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut impl Rng) -> StageSpec {
        // Every draw happens unconditionally so the stream layout does not
        // depend on which parts end up enabled.
        let blur_on = rng.random_bool(self.blur_prob);
        let kind = pick(&self.blur_kinds, rng);
        let sizes = odd_sizes(self.kernel_size);
        let size = sizes[rng.random_range(0..sizes.len())];
        let s1 = self.sigma.sample(rng);
        let s2 = self.sigma.sample(rng);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let length = self.motion_length.sample(rng);
        let blur = blur_on.then_some(match kind {
            BlurKind::GaussianIso => BlurSpec::GaussianIso { size, sigma: s1 },
            BlurKind::GaussianAniso => BlurSpec::GaussianAniso { size, sigma_x: s1, sigma_y: s2, angle },
            BlurKind::MotionLinear => BlurSpec::MotionLinear { size, length, angle },
        });

        let resample_on = rng.random_bool(self.resample_prob);
        let factor = self.resample_factor.sample(rng);
        let filter = pick(&self.filters, rng);
        let resample = resample_on.then_some(ResampleSpec { factor, filter });

        let noise_on = rng.random_bool(self.noise_prob);
        let nkind = pick(&self.noise_kinds, rng);
        let g = self.gaussian_sigma.sample(rng);
        let p = self.poisson_gain.sample(rng);
        let sp = self.speckle_sigma.sample(rng);
        let gray = rng.random_bool(self.gray_noise_prob);
        let strength = match nkind {
            NoiseKind::Gaussian => g,
            NoiseKind::Poisson => p,
            NoiseKind::Speckle => sp,
        };
        let noise = noise_on.then_some(NoiseSpec { kind: nkind, strength, gray });

        let jpeg_on = rng.random_bool(self.jpeg_prob);
        let q = self.quality.sample_int(rng) as u8;
        StageSpec { blur, resample, noise, quality: jpeg_on.then_some(q) }
    }
}

fn odd_sizes(r: Range) -> Vec<usize> {
    let (lo, hi) = (r.min.ceil().max(1.0) as usize, r.max.floor().max(0.0) as usize);
    (lo..=hi).filter(|s| s % 2 == 1).collect()
}

/// Distribution `p(T)` over degradation tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionProfile {
    pub name: String,
    pub scale: usize,
    pub stages: Vec<StageProfile>,
    pub final_filters: Vec<Weighted<ResampleFilter>>,
}

impl DistributionProfile {
    /// Training-like distribution: gaussian blurs, gaussian/poisson noise.
    pub fn iid(scale: usize) -> Self {
        let all_filters = vec![
            w(ResampleFilter::Bilinear, 1.0),
            w(ResampleFilter::Bicubic, 1.0),
            w(ResampleFilter::Area, 1.0),
        ];
        let stage1 = StageProfile {
            blur_prob: 1.0,
            blur_kinds: vec![w(BlurKind::GaussianIso, 0.6), w(BlurKind::GaussianAniso, 0.4)],
            kernel_size: Range::new(7.0, 15.0),
            sigma: Range::new(0.2, 3.0),
            motion_length: Range::new(3.0, 9.0),
            resample_prob: 1.0,
            resample_factor: Range::new(0.5, 1.2),
            filters: all_filters.clone(),
            noise_prob: 0.8,
            noise_kinds: vec![w(NoiseKind::Gaussian, 0.6), w(NoiseKind::Poisson, 0.4)],
            gaussian_sigma: Range::new(0.5 / 255.0, 12.0 / 255.0),
            poisson_gain: Range::new(0.0002, 0.002),
            speckle_sigma: Range::new(0.01, 0.08),
            gray_noise_prob: 0.4,
            jpeg_prob: 0.8,
            quality: Range::new(40.0, 95.0),
        };
        let stage2 = StageProfile {
            blur_prob: 0.5,
            kernel_size: Range::new(5.0, 9.0),
            sigma: Range::new(0.2, 1.2),
            resample_factor: Range::new(0.6, 1.2),
            noise_prob: 0.5,
            gaussian_sigma: Range::new(0.5 / 255.0, 8.0 / 255.0),
            poisson_gain: Range::new(0.0001, 0.001),
            jpeg_prob: 0.8,
            quality: Range::new(50.0, 95.0),
            ..stage1.clone()
        };
        DistributionProfile {
            name: "iid".into(),
            scale,
            stages: vec![stage1, stage2],
            final_filters: all_filters,
        }
    }

    /// Out-of-distribution variant: motion blur replaces gaussian blur and
    /// speckle replaces gaussian/poisson noise; everything else is unchanged.
    pub fn ood(scale: usize) -> Self {
        let mut p = Self::iid(scale);
        p.name = "ood".into();
        for st in &mut p.stages {
            st.blur_kinds = vec![w(BlurKind::MotionLinear, 1.0)];
            st.noise_kinds = vec![w(NoiseKind::Speckle, 1.0)];
        }
        p
    }

    pub fn preset(name: &str, scale: usize) -> Result<Self> {
        match name {
            "iid" => Ok(Self::iid(scale)),
            "ood" => Ok(Self::ood(scale)),
            other => Err(Error::Config(format!("unknown degradation preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Config("scale must be >= 1".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("profile needs at least one stage".into()));
        }
        for (i, st) in self.stages.iter().enumerate() {
            st.validate(i)?;
        }
        check_weights("final_filters", &self.final_filters)
    }
}

/// Draws one task degradation. Deterministic in `(profile, seed)`.
pub fn sample_spec(profile: &DistributionProfile, seed: u64) -> Result<DegradationSpec> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stages = profile.stages.iter().map(|st| st.sample(&mut rng)).collect();
    let final_filter = pick(&profile.final_filters, &mut rng);
    let noise_seed = rng.random();
    Ok(DegradationSpec { stages, final_filter, scale: profile.scale, seed: noise_seed })
}
