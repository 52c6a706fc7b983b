//! Blur kernels and reflect-padded 2-D filtering.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// One sampled blur.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlurSpec {
    GaussianIso { size: usize, sigma: f64 },
    GaussianAniso { size: usize, sigma_x: f64, sigma_y: f64, angle: f64 },
    MotionLinear { size: usize, length: f64, angle: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlurKind {
    GaussianIso,
    GaussianAniso,
    MotionLinear,
}

impl BlurSpec {
    pub fn kind(&self) -> BlurKind {
        match self {
            BlurSpec::GaussianIso { .. } => BlurKind::GaussianIso,
            BlurSpec::GaussianAniso { .. } => BlurKind::GaussianAniso,
            BlurSpec::MotionLinear { .. } => BlurKind::MotionLinear,
        }
    }

    pub fn size(&self) -> usize {
        match *self {
            BlurSpec::GaussianIso { size, .. }
            | BlurSpec::GaussianAniso { size, .. }
            | BlurSpec::MotionLinear { size, .. } => size,
        }
    }

    pub fn kernel(&self) -> Result<Kernel> {
        let size = self.size();
        if size % 2 == 0 {
            return Err(Error::Invalid(format!("blur kernel size must be odd, got {size}")));
        }
        let r = (size / 2) as f64;
        let weights = match *self {
            BlurSpec::GaussianIso { sigma, .. } => {
                positive("sigma", sigma)?;
                grid(size, |x, y| (-(x * x + y * y) / (2.0 * sigma * sigma)).exp())
            }
            BlurSpec::GaussianAniso { sigma_x, sigma_y, angle, .. } => {
                positive("sigma_x", sigma_x)?;
                positive("sigma_y", sigma_y)?;
                let (s, c) = angle.sin_cos();
                grid(size, |x, y| {
                    let u = c * x + s * y;
                    let v = -s * x + c * y;
                    (-(u * u) / (2.0 * sigma_x * sigma_x) - (v * v) / (2.0 * sigma_y * sigma_y)).exp()
                })
            }
            BlurSpec::MotionLinear { length, angle, .. } => {
                positive("length", length)?;
                motion_weights(size, length.min(2.0 * r + 1.0), angle)
            }
        };
        Kernel::normalized(size, weights)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} must be positive, got {v}")))
    }
}

fn grid(size: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let mut w = Vec::with_capacity(size * size);
    for ky in 0..size {
        for kx in 0..size {
            w.push(f(kx as f64 - r, ky as f64 - r));
        }
    }
    w
}

/// Line segment of `length` px through the centre, rasterised by supersampling.
fn motion_weights(size: usize, length: f64, angle: f64) -> Vec<f64> {
    const SAMPLES: usize = 256;
    let r = (size / 2) as f64;
    let (s, c) = angle.sin_cos();
    let mut w = vec![0.0; size * size];
    for i in 0..SAMPLES {
        let t = (i as f64 + 0.5) / SAMPLES as f64 - 0.5;
        let (px, py) = (r + t * length * c, r + t * length * s);
        // bilinear splat
        let (x0, y0) = (px.floor(), py.floor());
        let (fx, fy) = (px - x0, py - y0);
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (x, y) = (x0 + dx, y0 + dy);
                if x >= 0.0 && y >= 0.0 && (x as usize) < size && (y as usize) < size {
                    w[y as usize * size + x as usize] += wx * wy;
                }
            }
        }
    }
    w
}

/// Square, nonnegative, unit-sum filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    fn normalized(size: usize, weights: Vec<f64>) -> Result<Kernel> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Invalid("degenerate blur kernel".into()));
        }
        Ok(Kernel { size, weights: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Single tap: filtering with it is the identity.
    pub fn delta() -> Kernel {
        Kernel { size: 1, weights: vec![1.0] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Correlates every channel with the kernel using reflect padding
    /// (`-1 -> 1`, the edge sample is not repeated).
    pub fn apply(&self, img: &Image) -> Result<Image> {
        let r = self.size / 2;
        let (ch, h, w) = img.dims();
        if r >= h || r >= w {
            return Err(Error::Invalid(format!(
                "blur kernel of size {} is larger than the {w}x{h} image",
                self.size
            )));
        }
        let xs: Vec<Vec<usize>> = (0..w)
            .map(|x| (0..self.size).map(|k| reflect(x as isize + k as isize - r as isize, w)).collect())
            .collect();
        let ys: Vec<Vec<usize>> = (0..h)
            .map(|y| (0..self.size).map(|k| reflect(y as isize + k as isize - r as isize, h)).collect())
            .collect();
        let mut out = Image::filled(ch, h, w, 0.0);
        for c in 0..ch {
            let src = img.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (ky, &sy) in ys[y].iter().enumerate() {
                        let row = &src[sy * w..(sy + 1) * w];
                        let wrow = &self.weights[ky * self.size..(ky + 1) * self.size];
                        for (kx, &sx) in xs[x].iter().enumerate() {
                            acc += wrow[kx] * row[sx];
                        }
                    }
                    dst[y * w + x] = acc;
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_mirrors_without_repeating_edges() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }

    #[test]
    fn every_kind_sums_to_one() {
        let specs = [
            BlurSpec::GaussianIso { size: 7, sigma: 1.3 },
            BlurSpec::GaussianAniso { size: 9, sigma_x: 2.0, sigma_y: 0.5, angle: 0.7 },
            BlurSpec::MotionLinear { size: 11, length: 9.0, angle: 2.1 },
            BlurSpec::MotionLinear { size: 5, length: 30.0, angle: 0.0 },
        ];
        for s in specs {
            let k = s.kernel().unwrap();
            assert!((k.sum() - 1.0).abs() < 1e-12, "{s:?}");
            assert!(k.weights().iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn even_size_and_bad_sigma_are_rejected() {
        assert!(BlurSpec::GaussianIso { size: 4, sigma: 1.0 }.kernel().is_err());
        assert!(BlurSpec::GaussianIso { size: 5, sigma: 0.0 }.kernel().is_err());
    }

    #[test]
    fn oversized_kernel_is_an_error() {
        let k = BlurSpec::GaussianIso { size: 21, sigma: 2.0 }.kernel().unwrap();
        assert!(k.apply(&Image::filled(3, 8, 8, 0.5)).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let k = BlurSpec::GaussianAniso { size: 7, sigma_x: 1.5, sigma_y: 0.8, angle: 0.3 }.kernel().unwrap();
        let out = k.apply(&Image::filled(3, 12, 10, 0.37)).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-14));
    }
}
