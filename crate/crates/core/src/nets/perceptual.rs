use facesr_grad::{ParamSet, Var};

use super::{expect_channels, Init, Layers, ParamBuilder};
use crate::error::Result;
use crate::image::Image;

const SEED: u64 = 42;
/// `(channels, stride)` of each stage.
const STAGES: [(usize, usize); 3] = [(8, 1), (16, 2), (16, 2)];
const NORM_EPS: f64 = 1e-10;

/// Frozen random-feature perceptual distance: a seeded 3-stage conv pyramid
/// whose features are unit-normalised across channels at every location,
/// compared by mean squared difference and summed over stages.
#[derive(Clone, Debug)]
pub struct Perceptual {
    params: ParamSet,
}

impl Default for Perceptual {
    fn default() -> Self {
        Self::new()
    }
}

impl Perceptual {
    pub fn new() -> Self {
        let mut b = ParamBuilder::new(SEED);
        let mut cin = 3;
        for (i, (c, _)) in STAGES.iter().enumerate() {
            b.conv(&format!("stage{i}"), cin, *c, 3, Init::He { gain: 1.0 });
            cin = *c;
        }
        Perceptual { params: b.finish() }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn features(&self, image: &Var) -> Result<Vec<Var>> {
        expect_channels(image, 3, "perceptual")?;
        let consts = self.params.constants();
        let mut layers = Layers::new(&consts, 2 * STAGES.len(), "perceptual")?;
        let mut x = image.clone();
        let mut out = Vec::with_capacity(STAGES.len());
        for (c, stride) in STAGES {
            x = layers.conv_act(&x, stride, 1)?;
            let norm = x.square()?.sum_channels()?.add_scalar(NORM_EPS)?.sqrt()?;
            out.push(x.div(&norm.broadcast_channels(c)?)?);
        }
        Ok(out)
    }

    pub fn distance(&self, a: &Var, b: &Var) -> Result<Var> {
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let mut total: Option<Var> = None;
        for (x, y) in fa.iter().zip(&fb) {
            let d = x.sub(y)?.square()?.mean()?;
            total = Some(match total {
                None => d,
                Some(t) => t.add(&d)?,
            });
        }
        Ok(total.expect("at least one stage"))
    }

    pub fn image_distance(&self, a: &Image, b: &Image) -> Result<f64> {
        let d = self.distance(&Var::constant(a.to_tensor()), &Var::constant(b.to_tensor()))?;
        Ok(d.item())
    }
}
