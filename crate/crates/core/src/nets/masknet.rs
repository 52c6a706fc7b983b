use std::sync::OnceLock;

use facesr_grad::{ParamSet, Var};
use serde::{Deserialize, Serialize};

use super::{expect_channels, Init, Layers, ParamBuilder};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Predict from the (degraded face, restored face) pair.
    DegradedReference,
    /// Predict from the restored face alone.
    NoReference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskNetConfig {
    pub mode: MaskMode,
    pub width: usize,
    pub kernel: usize,
    /// Number of conv layers including the 1-channel output layer.
    pub layers: usize,
    pub scale: usize,
}

impl Default for MaskNetConfig {
    fn default() -> Self {
        MaskNetConfig { mode: MaskMode::DegradedReference, width: 32, kernel: 3, layers: 8, scale: 4 }
    }
}

/// `c0` such that `softplus(c0) == 1` exactly in `f64`: `ln(e - 1)`, nudged
/// by ulps if rounding lands next to 1.
pub fn mask_offset() -> f64 {
    static C0: OnceLock<f64> = OnceLock::new();
    *C0.get_or_init(|| {
        let softplus = |x: f64| Var::scalar(x).softplus().expect("finite").item();
        let mut c = (std::f64::consts::E - 1.0).ln();
        for _ in 0..64 {
            let v = softplus(c);
            if v == 1.0 {
                return c;
            }
            c = if v < 1.0 { c.next_up() } else { c.next_down() };
        }
        panic!("no f64 with softplus(c) == 1 near ln(e - 1)");
    })
}

/// Conv stack predicting a nonnegative per-pixel loss weight
/// `m = softplus(raw + c0)`. The output layer starts at zero, so an untrained
/// net gives `m == 1` everywhere.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskNet {
    cfg: MaskNetConfig,
}

impl MaskNet {
    pub fn new(cfg: MaskNetConfig) -> Result<Self> {
        if cfg.layers < 2 || cfg.width == 0 || cfg.kernel % 2 == 0 || cfg.scale == 0 {
            return Err(Error::Config(
                "masknet needs >= 2 layers, width >= 1, an odd kernel and scale >= 1".into(),
            ));
        }
        Ok(MaskNet { cfg })
    }

    pub fn config(&self) -> &MaskNetConfig {
        &self.cfg
    }

    pub fn mode(&self) -> MaskMode {
        self.cfg.mode
    }

    fn in_channels(&self) -> usize {
        match self.cfg.mode {
            MaskMode::DegradedReference => 6,
            MaskMode::NoReference => 3,
        }
    }

    pub fn num_tensors(&self) -> usize {
        2 * self.cfg.layers
    }

    pub fn init(&self, seed: u64) -> ParamSet {
        let (w, k) = (self.cfg.width, self.cfg.kernel);
        let mut b = ParamBuilder::new(seed);
        b.conv("conv0", self.in_channels(), w, k, Init::He { gain: 1.0 });
        for i in 1..self.cfg.layers - 1 {
            b.conv(&format!("conv{i}"), w, w, k, Init::He { gain: 1.0 });
        }
        b.conv(&format!("conv{}", self.cfg.layers - 1), w, 1, k, Init::Zero);
        b.finish()
    }

    /// `face_bfr` is `[N, 3, H, W]`; `face_lr` is `[N, 3, H/s, W/s]` and is
    /// required in degraded-reference mode, ignored otherwise. Output is
    /// `[N, 1, H, W]`.
    pub fn forward(&self, params: &[Var], face_lr: Option<&Var>, face_bfr: &Var) -> Result<Var> {
        let (n, h, w) = expect_channels(face_bfr, 3, "masknet")?;
        let input = match self.cfg.mode {
            MaskMode::NoReference => face_bfr.clone(),
            MaskMode::DegradedReference => {
                let lr = face_lr.ok_or_else(|| {
                    Error::Invalid("degraded-reference masknet needs the degraded face".into())
                })?;
                let s = self.cfg.scale;
                let (ln, lh, lw) = expect_channels(lr, 3, "masknet reference")?;
                if ln != n || lh * s != h || lw * s != w {
                    return Err(Error::Shape(format!(
                        "masknet: degraded face {lw}x{lh} times {s} != restored face {w}x{h}"
                    )));
                }
                Var::concat_channels(&[lr.upsample_nearest(s)?, face_bfr.clone()])?
            }
        };
        let pad = self.cfg.kernel / 2;
        let mut layers = Layers::new(params, self.num_tensors(), "masknet")?;
        let mut x = input;
        for _ in 0..self.cfg.layers - 1 {
            x = layers.conv_act(&x, 1, pad)?;
        }
        let raw = layers.conv(&x, 1, pad)?;
        Ok(raw.add_scalar(mask_offset())?.softplus()?)
    }
}
