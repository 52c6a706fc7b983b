//! Pseudo face restorer with known, localised gaps to the ground truth.
//!
//! Stands in for a pretrained blind face restorer: the output equals the
//! ground-truth face except inside a few seeded rectangles, where it is
//! corrupted with a magnitude proportional to `strength`. The corrupted pixels
//! are recorded, so how well a learned mask tracks the unreliable regions can
//! be measured.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::degrade::BlurSpec;
use crate::error::{Error, Result};
use crate::image::Image;
use facesr_grad::Rect;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    LocalBlur,
    TextureSubstitution,
    LocalWarp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestorerSpec {
    /// In `[0, 1]`; 0 reproduces the ground truth exactly.
    pub strength: f64,
    pub regions: usize,
    /// Inclusive side-length range of each region in restored-face pixels.
    pub region_size: [usize; 2],
    pub kind: CorruptionKind,
    pub seed: u64,
}

impl Default for RestorerSpec {
    fn default() -> Self {
        RestorerSpec {
            strength: 0.5,
            regions: 2,
            region_size: [8, 16],
            kind: CorruptionKind::TextureSubstitution,
            seed: 0,
        }
    }
}

/// Binary map of corrupted pixels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Support {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl Support {
    pub fn empty(height: usize, width: usize) -> Self {
        Support { height, width, mask: vec![false; height * width] }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// `(start, length)` runs of set pixels in row-major order.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < self.mask.len() {
            if self.mask[i] {
                let start = i;
                while i < self.mask.len() && self.mask[i] {
                    i += 1;
                }
                runs.push((start, i - start));
            } else {
                i += 1;
            }
        }
        runs
    }

    pub fn from_runs(height: usize, width: usize, runs: &[(usize, usize)]) -> Result<Self> {
        let mut s = Support::empty(height, width);
        for &(start, len) in runs {
            if start + len > s.mask.len() {
                return Err(Error::Format("support run outside the image".into()));
            }
            s.mask[start..start + len].fill(true);
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Restored {
    pub bfr: Image,
    pub support: Support,
}

impl RestorerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(Error::Config(format!("oracle strength {} outside [0, 1]", self.strength)));
        }
        let [lo, hi] = self.region_size;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("oracle region size range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Produces the pseudo-restored face and its corruption support.
pub fn restore(spec: &RestorerSpec, face_lr: &Image, face_gt: &Image) -> Result<Restored> {
    spec.validate()?;
    let (_, h, w) = face_gt.dims();
    let (_, lh, lw) = face_lr.dims();
    if lh == 0 || lw == 0 || h % lh != 0 || w % lw != 0 || h / lh != w / lw {
        return Err(Error::Shape(format!(
            "restored face {w}x{h} is not an integer upscale of the degraded face {lw}x{lh}"
        )));
    }
    if spec.region_size[1] > h || spec.region_size[1] > w {
        return Err(Error::Invalid(format!(
            "oracle region size {} exceeds the {w}x{h} face",
            spec.region_size[1]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut bfr = face_gt.clone();
    let mut support = Support::empty(h, w);
    let blurred = match spec.kind {
        CorruptionKind::LocalBlur => {
            let size = 7.min(if h.min(w) % 2 == 0 { h.min(w) - 1 } else { h.min(w) });
            Some(BlurSpec::GaussianIso { size, sigma: 2.0 }.kernel()?.apply(face_gt)?)
        }
        _ => None,
    };
    for _ in 0..spec.regions {
        let rw = rng.random_range(spec.region_size[0]..=spec.region_size[1]);
        let rh = rng.random_range(spec.region_size[0]..=spec.region_size[1]);
        let rect = Rect::new(rng.random_range(0..=w - rw), rng.random_range(0..=h - rh), rw, rh);
        // Drawn for every kind so region placement does not depend on it.
        let params: [f64; 6] = std::array::from_fn(|_| rng.random::<f64>());
        for y in rect.y..rect.y + rect.h {
            for x in rect.x..rect.x + rect.w {
                support.mask[y * w + x] = true;
            }
        }
        if spec.strength == 0.0 {
            continue;
        }
        let source = bfr.clone();
        for c in 0..face_gt.channels() {
            for y in rect.y..rect.y + rect.h {
                for x in rect.x..rect.x + rect.w {
                    let g = source.get(c, y, x);
                    let v = match spec.kind {
                        CorruptionKind::TextureSubstitution => {
                            g + spec.strength * (texture(&params, c, y, x) - g)
                        }
                        CorruptionKind::LocalBlur => {
                            let b = blurred.as_ref().expect("computed for blur").get(c, y, x);
                            g + spec.strength * (b - g)
                        }
                        CorruptionKind::LocalWarp => {
                            let (dy, dx) = displacement(&params, y, x, WARP_AMPLITUDE);
                            let warped = bilinear(&source, c, y as f64 + dy, x as f64 + dx);
                            g + spec.strength * (warped - g)
                        }
                    };
                    bfr.set(c, y, x, v);
                }
            }
        }
    }
    Ok(Restored { bfr, support })
}

/// Peak displacement of a full-strength warp, in pixels.
const WARP_AMPLITUDE: f64 = 3.0;

/// Oriented colour grating in `[0.05, 0.95]`.
fn texture(p: &[f64; 6], c: usize, y: usize, x: usize) -> f64 {
    let angle = p[0] * std::f64::consts::PI;
    let period = 10.0 + 14.0 * p[1];
    let u = x as f64 * angle.cos() + y as f64 * angle.sin();
    let phase = 2.0 * std::f64::consts::PI * (p[2] + c as f64 * p[3]);
    0.5 + 0.45 * (2.0 * std::f64::consts::PI * u / period + phase).sin()
}

fn displacement(p: &[f64; 6], y: usize, x: usize, amp: f64) -> (f64, f64) {
    let tau = 2.0 * std::f64::consts::PI;
    let period = 6.0 + 6.0 * p[4];
    let dy = amp * (tau * x as f64 / period + tau * p[5]).sin();
    let dx = amp * (tau * y as f64 / period + tau * p[2]).cos();
    (dy, dx)
}

fn bilinear(img: &Image, c: usize, y: f64, x: f64) -> f64 {
    let (_, h, w) = img.dims();
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
    let bottom = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Single-channel normalised error map `|gt - bfr| / max|gt - bfr|`, with the
/// per-pixel difference averaged over channels first. All zeros when the
/// inputs are identical.
pub fn error_map(face_gt: &Image, face_bfr: &Image) -> Result<Image> {
    if !face_gt.same_dims(face_bfr) {
        return Err(Error::Shape(format!("{:?} vs {:?}", face_gt.dims(), face_bfr.dims())));
    }
    let (ch, h, w) = face_gt.dims();
    let n = h * w;
    let mut diff = vec![0.0; n];
    for c in 0..ch {
        let (a, b) = (face_gt.plane(c), face_bfr.plane(c));
        for i in 0..n {
            diff[i] += (a[i] - b[i]).abs();
        }
    }
    for d in &mut diff {
        *d /= ch as f64;
    }
    let max = diff.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for d in &mut diff {
            *d /= max;
        }
    }
    Image::new(1, h, w, diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{resize, ResampleFilter};
    use crate::image::test_card;

    fn pair() -> (Image, Image) {
        let gt = test_card();
        let lr = resize(&gt, 16, 16, ResampleFilter::Bicubic).unwrap();
        (lr, gt)
    }

    #[test]
    fn zero_strength_is_identity_with_recorded_support() {
        let (lr, gt) = pair();
        for kind in [CorruptionKind::LocalBlur, CorruptionKind::TextureSubstitution, CorruptionKind::LocalWarp] {
            let spec = RestorerSpec { strength: 0.0, kind, ..RestorerSpec::default() };
            let r = restore(&spec, &lr, &gt).unwrap();
            assert_eq!(r.bfr, gt);
            assert!(error_map(&gt, &r.bfr).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn changes_stay_inside_the_support() {
        let (lr, gt) = pair();
        for kind in [CorruptionKind::LocalBlur, CorruptionKind::TextureSubstitution, CorruptionKind::LocalWarp] {
            let spec = RestorerSpec { strength: 0.8, kind, regions: 3, seed: 11, ..RestorerSpec::default() };
            let r = restore(&spec, &lr, &gt).unwrap();
            let em = error_map(&gt, &r.bfr).unwrap();
            assert!(r.support.count() > 0);
            for y in 0..64 {
                for x in 0..64 {
                    if em.get(0, y, x) > 0.0 {
                        assert!(r.support.contains(y, x), "{kind:?} at ({x}, {y})");
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_region_and_bad_scale_are_errors() {
        let (lr, gt) = pair();
        let spec = RestorerSpec { region_size: [8, 65], ..RestorerSpec::default() };
        assert!(restore(&spec, &lr, &gt).is_err());
        let odd = resize(&gt, 15, 16, ResampleFilter::Bicubic).unwrap();
        assert!(restore(&RestorerSpec::default(), &odd, &gt).is_err());
    }

    #[test]
    fn support_runs_round_trip() {
        let (lr, gt) = pair();
        let r = restore(&RestorerSpec { seed: 3, ..RestorerSpec::default() }, &lr, &gt).unwrap();
        let back = Support::from_runs(64, 64, &r.support.runs()).unwrap();
        assert_eq!(back, r.support);
    }
}
