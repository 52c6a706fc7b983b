//! Meta-training (inner masked face step, outer whole-image objective,
//! meta-gradient through the inner step) and test-time adaptation.

mod adapt;
mod losses;
mod train;

pub use adapt::{adapt_and_superresolve, adapt_trajectory, AdaptFace, AdaptOutcome};
pub use losses::{
    adversarial_loss, discriminator_loss, inner_loss, mask_regularizer, outer_loss,
    pooled_inner_loss, weighted_total, LossParts,
};
pub use train::{
    maml_gradient, supervised_gradient, task_gradients, train_step, FaceSample, Models,
    StepMetrics, TaskGrads, TaskSample, TrainState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Outer-loss weights for fidelity, perceptual, adversarial and mask
/// regularisation terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lambdas {
    pub l1: f64,
    pub perceptual: f64,
    pub adv: f64,
    pub reg: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas { l1: 1.0, perceptual: 0.5, adv: 0.1, reg: 0.002 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InnerSupervision {
    /// Pseudo-restored faces from the oracle.
    OracleBfr,
    /// Ground-truth faces (upper-bound ablation).
    Gt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Inner SGD step size.
    pub alpha: f64,
    /// Adam learning rate of the SR net.
    pub beta: f64,
    /// Adam learning rate of the MaskNet.
    pub gamma: f64,
    /// Adam learning rate of the discriminator.
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: Lambdas,
    pub inner_steps: usize,
    pub batch: usize,
    pub steps: usize,
    /// Drop the second-order term of the meta-gradient.
    pub first_order: bool,
    /// Let the MaskNet receive gradient through the inner update as well as
    /// through the regulariser.
    pub mask_inner_path: bool,
    /// `false` replaces the MaskNet by `m = 1`.
    pub use_masknet: bool,
    pub inner_supervision: InnerSupervision,
    pub faces_per_task: usize,
    /// Inner patches per face; 0 uses each whole face.
    pub patches_per_face: usize,
    /// Side of an inner patch in degraded-face pixels.
    pub inner_patch: usize,
    /// Side of the outer patch in HR pixels.
    pub outer_patch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1e-2,
            beta: 3e-5,
            gamma: 1e-4,
            eta: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda: Lambdas::default(),
            inner_steps: 1,
            batch: 4,
            steps: 1000,
            first_order: false,
            mask_inner_path: true,
            use_masknet: true,
            inner_supervision: InnerSupervision::OracleBfr,
            faces_per_task: 1,
            patches_per_face: 0,
            inner_patch: 8,
            outer_patch: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("eta", self.eta)] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let l = self.lambda;
        if [l.l1, l.perceptual, l.adv, l.reg].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.inner_steps != 1 {
            return Err(Error::Config("training uses exactly one inner step".into()));
        }
        if self.batch == 0 || self.faces_per_task == 0 {
            return Err(Error::Config("batch and faces_per_task must be >= 1".into()));
        }
        if self.patches_per_face > 0 && self.inner_patch == 0 {
            return Err(Error::Config("inner_patch must be >= 1 when sampling patches".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixture {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{FaceSample, Models, TaskSample, TrainConfig};
    use crate::image::Image;
    use crate::nets::{DiscConfig, MaskMode, MaskNetConfig, SrNetConfig};
    use crate::oracle::Support;

    pub fn noise(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
        let data = (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Image::new(c, h, w, data).unwrap()
    }

    pub fn models() -> Models {
        Models::new(
            SrNetConfig { width: 4, blocks: 1, scale: 2, tail_gain: 1.0 },
            MaskNetConfig { mode: MaskMode::DegradedReference, width: 4, kernel: 3, layers: 2, scale: 2 },
            DiscConfig { width: 4, depth: 2 },
        )
        .unwrap()
    }

    /// 8x8 -> 16x16 task with `faces` 4x4 faces.
    pub fn task(seed: u64, faces: usize) -> TaskSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lr = noise(3, 8, 8, &mut rng);
        let hr = noise(3, 16, 16, &mut rng);
        let faces = (0..faces)
            .map(|_| FaceSample {
                lr: noise(3, 4, 4, &mut rng),
                gt: noise(3, 8, 8, &mut rng),
                bfr: noise(3, 8, 8, &mut rng),
                support: Support::empty(8, 8),
            })
            .collect();
        TaskSample { lr, hr, faces }
    }

    pub fn config() -> TrainConfig {
        TrainConfig { alpha: 0.1, beta: 1e-3, gamma: 1e-3, eta: 1e-3, batch: 2, steps: 1, ..TrainConfig::default() }
    }
}
