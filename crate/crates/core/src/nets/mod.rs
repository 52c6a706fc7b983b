//! The trainable networks and the frozen perceptual feature extractor.
//!
//! Every network is a plain function of an ordered parameter slice, so the
//! same forward code runs on leaf parameters, constants, or parameters shifted
//! by an inner SGD step.

mod checkpoint;
mod disc;
mod masknet;
mod perceptual;
mod srnet;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use disc::{DiscConfig, Discriminator};
pub use masknet::{mask_offset, MaskMode, MaskNet, MaskNetConfig};
pub use perceptual::Perceptual;
pub use srnet::{SrNet, SrNetConfig};

use facesr_grad::{ParamSet, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Negative slope of every leaky ReLU in the package.
pub const LEAKY_SLOPE: f64 = 0.2;

/// How a conv layer's weights start out.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    /// He-uniform for a leaky ReLU, multiplied by `gain`.
    He { gain: f64 },
    Zero,
}

pub(crate) struct ParamBuilder {
    params: ParamSet,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub(crate) fn new(seed: u64) -> Self {
        ParamBuilder { params: ParamSet::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Adds `{name}.w` with shape `[cout, cin, k, k]` and `{name}.b`.
    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, init: Init) {
        let n = cout * cin * k * k;
        let w = match init {
            Init::Zero => vec![0.0; n],
            Init::He { gain } => {
                let fan_in = (cin * k * k) as f64;
                let bound = gain * (6.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in)).sqrt();
                (0..n).map(|_| self.rng.random_range(-bound..bound)).collect()
            }
        };
        let w = Tensor::new([cout, cin, k, k], w).expect("sizes match");
        self.params.push(format!("{name}.w"), w);
        self.params.push(format!("{name}.b"), Tensor::zeros([cout]));
    }

    pub(crate) fn finish(self) -> ParamSet {
        self.params
    }
}

/// Walks an ordered parameter slice two tensors (weight, bias) at a time.
pub(crate) struct Layers<'a> {
    params: &'a [Var],
    next: usize,
}

impl<'a> Layers<'a> {
    pub(crate) fn new(params: &'a [Var], expected: usize, net: &str) -> Result<Self> {
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "{net} expects {expected} parameter tensors, got {}",
                params.len()
            )));
        }
        Ok(Layers { params, next: 0 })
    }

    pub(crate) fn conv(&mut self, x: &Var, stride: usize, pad: usize) -> Result<Var> {
        let w = &self.params[self.next];
        let b = &self.params[self.next + 1];
        self.next += 2;
        Ok(x.conv2d(w, stride, pad)?.add_bias(b)?)
    }

    pub(crate) fn conv_act(&mut self, x: &Var, stride: usize, pad: usize) -> Result<Var> {
        Ok(self.conv(x, stride, pad)?.leaky_relu(LEAKY_SLOPE)?)
    }
}

/// Checks that `x` is `[N, c, H, W]` and returns `(N, H, W)`.
pub(crate) fn expect_channels(x: &Var, c: usize, what: &str) -> Result<(usize, usize, usize)> {
    let (n, ch, h, w) = x.shape().nchw()?;
    if ch != c {
        return Err(Error::Shape(format!("{what} expects {c} input channels, got {ch}")));
    }
    Ok((n, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;
    use facesr_grad::gradcheck::check_gradients;
    use rand::Rng;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn tiny_sr(scale: usize) -> SrNet {
        SrNet::new(SrNetConfig { width: 3, blocks: 1, scale, tail_gain: 1.0 }).unwrap()
    }

    #[test]
    fn srnet_output_shape_for_each_scale() {
        for s in [1, 2, 3, 4] {
            let net = tiny_sr(s);
            let p = net.init(1);
            assert_eq!(p.len(), net.num_tensors());
            let out = net.forward(&p.constants(), &Var::constant(random([2, 3, 5, 4], 2))).unwrap();
            assert_eq!(out.dims(), &[2, 3, 5 * s, 4 * s]);
        }
        assert_eq!(tiny_sr(8).stages(), vec![2, 2, 2]);
        assert_eq!(tiny_sr(3).stages(), vec![3]);
    }

    #[test]
    fn srnet_rejects_wrong_channels_and_param_count() {
        let net = tiny_sr(2);
        let p = net.init(1).constants();
        assert!(net.forward(&p, &Var::constant(random([1, 1, 4, 4], 0))).is_err());
        assert!(net.forward(&p[1..], &Var::constant(random([1, 3, 4, 4], 0))).is_err());
    }

    #[test]
    fn srnet_zero_tail_is_bicubic() {
        let net = tiny_sr(2);
        let mut p = net.init(3);
        let n = p.len();
        let vals: Vec<Tensor> = p
            .values()
            .iter()
            .enumerate()
            .map(|(i, t)| if i >= n - 2 { t.map(|_| 0.0) } else { t.clone() })
            .collect();
        p = p.with_values(vals).unwrap();
        let lr = random([1, 3, 6, 6], 4);
        let out = net.forward(&p.constants(), &Var::constant(lr.clone())).unwrap();
        assert_eq!(out.value(), &net.bicubic_skip(&lr).unwrap());
    }

    #[test]
    fn srnet_gradients_match_finite_differences() {
        let net = tiny_sr(2);
        let params = net.init(5).values().to_vec();
        let lr = Var::constant(random([1, 3, 3, 3], 6));
        let target = Var::constant(random([1, 3, 6, 6], 7));
        let r = check_gradients(
            |p| Ok(net.forward(p, &lr).unwrap().sub(&target)?.square()?.mean()?),
            &params,
            1e-6,
        )
        .unwrap();
        assert!(r.rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn masknet_starts_at_exactly_one() {
        assert_eq!(Var::scalar(mask_offset()).softplus().unwrap().item(), 1.0);
        for mode in [MaskMode::DegradedReference, MaskMode::NoReference] {
            let net = MaskNet::new(MaskNetConfig { mode, width: 4, kernel: 3, layers: 3, scale: 2 }).unwrap();
            let p = net.init(9).constants();
            let lr = Var::constant(random([1, 3, 4, 5], 1));
            let bfr = Var::constant(random([1, 3, 8, 10], 2));
            let m = net.forward(&p, Some(&lr), &bfr).unwrap();
            assert_eq!(m.dims(), &[1, 1, 8, 10]);
            assert!(m.value().data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn masknet_modes_and_reference_checks() {
        let cfg = MaskNetConfig { width: 4, kernel: 3, layers: 3, scale: 2, ..Default::default() };
        let dr = MaskNet::new(cfg.clone()).unwrap();
        let bfr = Var::constant(random([1, 3, 8, 8], 2));
        let p = dr.init(1).constants();
        assert!(dr.forward(&p, None, &bfr).is_err());
        let bad = Var::constant(random([1, 3, 3, 4], 1));
        assert!(dr.forward(&p, Some(&bad), &bfr).is_err());

        let nr = MaskNet::new(MaskNetConfig { mode: MaskMode::NoReference, ..cfg }).unwrap();
        // perturb the output layer so the mask is not constant
        let ps = nr.init(4);
        let vals: Vec<Tensor> = ps.values().iter().map(|t| t.map(|v| v + 0.05)).collect();
        let p = ps.with_values(vals).unwrap().constants();
        let a = nr.forward(&p, Some(&Var::constant(random([1, 3, 4, 4], 1))), &bfr).unwrap();
        let b = nr.forward(&p, Some(&Var::constant(random([1, 3, 4, 4], 8))), &bfr).unwrap();
        let c = nr.forward(&p, None, &bfr).unwrap();
        assert_eq!(a.value(), b.value());
        assert_eq!(a.value(), c.value());
        assert!(a.value().data().iter().all(|&v| v > 0.0));
        assert!(!MaskNet::new(MaskNetConfig { kernel: 4, ..Default::default() }).is_ok());
    }

    #[test]
    fn masknet_gradients_match_finite_differences() {
        let net = MaskNet::new(MaskNetConfig { width: 3, kernel: 3, layers: 2, scale: 2, ..Default::default() }).unwrap();
        let params: Vec<Tensor> = net.init(2).values().iter().map(|t| t.map(|v| v + 0.1)).collect();
        let lr = Var::constant(random([1, 3, 2, 2], 3));
        let bfr = Var::constant(random([1, 3, 4, 4], 4));
        let r = check_gradients(|p| Ok(net.forward(p, Some(&lr), &bfr).unwrap().square()?.mean()?), &params, 1e-6)
            .unwrap();
        assert!(r.rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn discriminator_starts_with_zero_logits() {
        let d = Discriminator::new(DiscConfig { width: 4, depth: 2 }).unwrap();
        let p = d.init(1).constants();
        let out = d.forward(&p, &Var::constant(random([2, 3, 16, 8], 1))).unwrap();
        assert_eq!(out.dims(), &[2, 1, 4, 2]);
        assert!(out.value().data().iter().all(|&v| v == 0.0));
        assert!(d.forward(&p, &Var::constant(random([1, 3, 10, 8], 1))).is_err());
    }

    #[test]
    fn discriminator_gradients_match_finite_differences() {
        let d = Discriminator::new(DiscConfig { width: 2, depth: 1 }).unwrap();
        let params: Vec<Tensor> = d.init(3).values().iter().map(|t| t.map(|v| v + 0.05)).collect();
        let x = Var::constant(random([1, 3, 4, 4], 5));
        let r = check_gradients(|p| Ok(d.forward(p, &x).unwrap().softplus()?.mean()?), &params, 1e-6).unwrap();
        assert!(r.rel_err < 1e-5, "{r:?}");
    }

    #[test]
    fn perceptual_distance_is_a_premetric() {
        let p = Perceptual::new();
        let a = Image::new(3, 8, 8, random([1, 3, 8, 8], 1).data().to_vec()).unwrap();
        let b = Image::new(3, 8, 8, random([1, 3, 8, 8], 2).data().to_vec()).unwrap();
        assert_eq!(p.image_distance(&a, &a).unwrap(), 0.0);
        let ab = p.image_distance(&a, &b).unwrap();
        assert!(ab > 0.0);
        assert!((ab - p.image_distance(&b, &a).unwrap()).abs() < 1e-15);
        assert_eq!(Perceptual::new().params().checksum(), p.params().checksum());
    }

    #[test]
    fn perceptual_gradient_matches_finite_differences() {
        let p = Perceptual::new();
        let b = Var::constant(random([1, 3, 4, 4], 2));
        let r = check_gradients(|x| Ok(p.distance(&x[0], &b).unwrap()), &[random([1, 3, 4, 4], 1)], 1e-6).unwrap();
        assert!(r.rel_err < 1e-5, "{r:?}");
    }
}
