//! Separable resampling with antialiasing on downscale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleFilter {
    Nearest,
    Bilinear,
    Bicubic,
    Area,
}

impl ResampleFilter {
    fn support(self) -> f64 {
        match self {
            ResampleFilter::Nearest => 0.5,
            ResampleFilter::Area => 0.5,
            ResampleFilter::Bilinear => 1.0,
            ResampleFilter::Bicubic => 2.0,
        }
    }

    fn weight(self, x: f64) -> f64 {
        let x = x.abs();
        match self {
            ResampleFilter::Nearest | ResampleFilter::Area => {
                if x < 0.5 {
                    1.0
                } else if x == 0.5 {
                    0.5
                } else {
                    0.0
                }
            }
            ResampleFilter::Bilinear => (1.0 - x).max(0.0),
            ResampleFilter::Bicubic => {
                const A: f64 = -0.5;
                if x < 1.0 {
                    ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
                } else if x < 2.0 {
                    (((x - 5.0) * x + 8.0) * x - 4.0) * A
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per output sample: first input index and normalised tap weights.
struct AxisPlan {
    taps: Vec<(Vec<usize>, Vec<f64>)>,
}

impl AxisPlan {
    fn new(len_in: usize, len_out: usize, filter: ResampleFilter) -> AxisPlan {
        let scale = len_out as f64 / len_in as f64;
        let mut taps = Vec::with_capacity(len_out);
        for o in 0..len_out {
            let center = (o as f64 + 0.5) / scale;
            if filter == ResampleFilter::Nearest {
                let i = (center.floor() as usize).min(len_in - 1);
                taps.push((vec![i], vec![1.0]));
                continue;
            }
            let stretch = if scale < 1.0 { 1.0 / scale } else { 1.0 };
            let support = filter.support() * stretch;
            let lo = (center - support).floor() as isize;
            let hi = (center + support).ceil() as isize;
            let mut idx = Vec::new();
            let mut wts = Vec::new();
            for j in lo..=hi {
                let wv = filter.weight((j as f64 + 0.5 - center) / stretch);
                if wv == 0.0 {
                    continue;
                }
                idx.push(j.clamp(0, len_in as isize - 1) as usize);
                wts.push(wv);
            }
            let total: f64 = wts.iter().sum();
            for wv in &mut wts {
                *wv /= total;
            }
            taps.push((idx, wts));
        }
        AxisPlan { taps }
    }
}

/// Resizes to exactly `out_h x out_w`. Same-size requests return the input
/// unchanged.
pub fn resize(img: &Image, out_h: usize, out_w: usize, filter: ResampleFilter) -> Result<Image> {
    let (ch, h, w) = img.dims();
    if out_h == 0 || out_w == 0 {
        return Err(Error::Invalid(format!("resize to empty {out_w}x{out_h}")));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let px = AxisPlan::new(w, out_w, filter);
    let py = AxisPlan::new(h, out_h, filter);
    let mut out = Image::filled(ch, out_h, out_w, 0.0);
    let mut tmp = vec![0.0; h * out_w];
    for c in 0..ch {
        let src = img.plane(c);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, (idx, wts)) in px.taps.iter().enumerate() {
                tmp[y * out_w + x] = idx.iter().zip(wts).map(|(&i, &wv)| row[i] * wv).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (y, (idx, wts)) in py.taps.iter().enumerate() {
            for x in 0..out_w {
                dst[y * out_w + x] = idx.iter().zip(wts).map(|(&i, &wv)| tmp[i * out_w + x] * wv).sum();
            }
        }
    }
    Ok(out)
}

/// Scales both sides by `factor`, rounding to the nearest pixel (at least 1).
pub fn resize_by(img: &Image, factor: f64, filter: ResampleFilter) -> Result<Image> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::Invalid(format!("resample factor must be positive, got {factor}")));
    }
    let oh = ((img.height() as f64 * factor).round() as usize).max(1);
    let ow = ((img.width() as f64 * factor).round() as usize).max(1);
    resize(img, oh, ow, filter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::test_card;

    #[test]
    fn constants_survive_every_filter() {
        let img = Image::filled(3, 17, 13, 0.42);
        for f in [ResampleFilter::Nearest, ResampleFilter::Bilinear, ResampleFilter::Bicubic, ResampleFilter::Area] {
            for (h, w) in [(5, 4), (40, 31), (17, 7)] {
                let out = resize(&img, h, w, f).unwrap();
                assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-14), "{f:?}");
            }
        }
    }

    #[test]
    fn area_downscale_by_two_is_block_mean() {
        let img = test_card();
        let out = resize(&img, 32, 32, ResampleFilter::Area).unwrap();
        let expect = (img.get(1, 10, 6) + img.get(1, 10, 7) + img.get(1, 11, 6) + img.get(1, 11, 7)) / 4.0;
        assert!((out.get(1, 5, 3) - expect).abs() < 1e-12);
    }

    #[test]
    fn nearest_upscale_replicates() {
        let img = test_card();
        let out = resize(&img, 128, 128, ResampleFilter::Nearest).unwrap();
        assert_eq!(out.get(0, 9, 21), img.get(0, 4, 10));
    }
}
