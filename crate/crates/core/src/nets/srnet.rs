use facesr_grad::{ParamSet, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::{expect_channels, Init, Layers, ParamBuilder};
use crate::degrade::{resize, ResampleFilter};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrNetConfig {
    pub width: usize,
    pub blocks: usize,
    pub scale: usize,
    /// Multiplier on the He bound of the output conv. Small values start the
    /// net close to the plain bicubic upsampler its output is added to.
    pub tail_gain: f64,
}

impl Default for SrNetConfig {
    fn default() -> Self {
        SrNetConfig { width: 16, blocks: 4, scale: 4, tail_gain: 0.1 }
    }
}

/// Residual CNN: head conv, residual blocks, nearest-upsample + conv stages
/// and an output conv, added to a bicubic upsampling of the input.
#[derive(Clone, Debug, PartialEq)]
pub struct SrNet {
    cfg: SrNetConfig,
}

impl SrNet {
    pub fn new(cfg: SrNetConfig) -> Result<Self> {
        if cfg.width == 0 || cfg.scale == 0 {
            return Err(Error::Config("srnet width and scale must be >= 1".into()));
        }
        Ok(SrNet { cfg })
    }

    pub fn config(&self) -> &SrNetConfig {
        &self.cfg
    }

    pub fn scale(&self) -> usize {
        self.cfg.scale
    }

    /// Upsampling factor of each stage: repeated x2 for powers of two,
    /// otherwise one stage of the full factor.
    pub fn stages(&self) -> Vec<usize> {
        let s = self.cfg.scale;
        if s == 1 {
            vec![]
        } else if s.is_power_of_two() {
            vec![2; s.trailing_zeros() as usize]
        } else {
            vec![s]
        }
    }

    pub fn num_tensors(&self) -> usize {
        2 * (1 + 2 * self.cfg.blocks + self.stages().len() + 1)
    }

    pub fn init(&self, seed: u64) -> ParamSet {
        let w = self.cfg.width;
        let mut b = ParamBuilder::new(seed);
        b.conv("head", 3, w, 3, Init::He { gain: 1.0 });
        for i in 0..self.cfg.blocks {
            b.conv(&format!("block{i}.a"), w, w, 3, Init::He { gain: 1.0 });
            b.conv(&format!("block{i}.b"), w, w, 3, Init::He { gain: 0.1 });
        }
        for (i, _) in self.stages().iter().enumerate() {
            b.conv(&format!("up{i}"), w, w, 3, Init::He { gain: 1.0 });
        }
        b.conv("tail", w, 3, 3, Init::He { gain: self.cfg.tail_gain });
        b.finish()
    }

    /// `[N, 3, h, w] -> [N, 3, h*s, w*s]`. The input is treated as data: the
    /// bicubic skip is computed from its value and carries no gradient.
    pub fn forward(&self, params: &[Var], lr: &Var) -> Result<Var> {
        let (_, h, w) = expect_channels(lr, 3, "srnet")?;
        if h == 0 || w == 0 {
            return Err(Error::Shape("srnet input is empty".into()));
        }
        let mut layers = Layers::new(params, self.num_tensors(), "srnet")?;
        let head = layers.conv_act(lr, 1, 1)?;
        let mut x = head.clone();
        for _ in 0..self.cfg.blocks {
            let r = layers.conv_act(&x, 1, 1)?;
            let r = layers.conv(&r, 1, 1)?;
            x = x.add(&r)?;
        }
        x = x.add(&head)?;
        for f in self.stages() {
            x = layers.conv_act(&x.upsample_nearest(f)?, 1, 1)?;
        }
        let out = layers.conv(&x, 1, 1)?;
        Ok(out.add(&Var::constant(self.bicubic_skip(lr.value())?))?)
    }

    pub fn bicubic_skip(&self, lr: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = lr.shape().nchw()?;
        let s = self.cfg.scale;
        let mut data = Vec::with_capacity(n * c * h * w * s * s);
        for i in 0..n {
            let plane = &lr.data()[i * c * h * w..(i + 1) * c * h * w];
            let img = Image::new(c, h, w, plane.to_vec())?;
            data.extend_from_slice(resize(&img, h * s, w * s, ResampleFilter::Bicubic)?.data());
        }
        Ok(Tensor::new([n, c, h * s, w * s], data)?)
    }

    /// Runs the net on a whole image with constant parameters.
    pub fn super_resolve(&self, params: &ParamSet, lr: &Image) -> Result<Image> {
        let out = self.forward(&params.constants(), &Var::constant(lr.to_tensor()))?;
        Image::from_tensor(out.value())
    }
}
