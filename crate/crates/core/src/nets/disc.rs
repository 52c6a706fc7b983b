use facesr_grad::{ParamSet, Var};
use serde::{Deserialize, Serialize};

use super::{expect_channels, Init, Layers, ParamBuilder};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    pub width: usize,
    /// Number of stride-2 convs; the logit map is `2^depth` times smaller.
    pub depth: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig { width: 16, depth: 2 }
    }
}

/// Patch discriminator producing a map of real/fake logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    cfg: DiscConfig,
}

impl Discriminator {
    pub fn new(cfg: DiscConfig) -> Result<Self> {
        if cfg.width == 0 {
            return Err(Error::Config("discriminator width must be >= 1".into()));
        }
        Ok(Discriminator { cfg })
    }

    pub fn config(&self) -> &DiscConfig {
        &self.cfg
    }

    pub fn stride_product(&self) -> usize {
        1 << self.cfg.depth
    }

    pub fn num_tensors(&self) -> usize {
        2 * (self.cfg.depth + 2)
    }

    /// The last layer starts at zero, so every logit is 0 before training.
    pub fn init(&self, seed: u64) -> ParamSet {
        let w = self.cfg.width;
        let mut b = ParamBuilder::new(seed);
        b.conv("conv0", 3, w, 3, Init::He { gain: 1.0 });
        for i in 0..self.cfg.depth {
            b.conv(&format!("down{i}"), w, w, 3, Init::He { gain: 1.0 });
        }
        b.conv("logit", w, 1, 3, Init::Zero);
        b.finish()
    }

    /// `[N, 3, H, W] -> [N, 1, H / 2^depth, W / 2^depth]`; sides must be
    /// divisible by `2^depth`.
    pub fn forward(&self, params: &[Var], image: &Var) -> Result<Var> {
        let (_, h, w) = expect_channels(image, 3, "discriminator")?;
        let f = self.stride_product();
        if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "discriminator input {w}x{h} is not divisible by {f}"
            )));
        }
        let mut layers = Layers::new(params, self.num_tensors(), "discriminator")?;
        let mut x = layers.conv_act(image, 1, 1)?;
        for _ in 0..self.cfg.depth {
            x = layers.conv_act(&x, 2, 1)?;
        }
        layers.conv(&x, 1, 1)
    }
}
