//! Image quality metrics.

use crate::error::{Error, Result};
use crate::image::Image;

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!("psnr: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Variance of the 4-neighbour Laplacian of the luma channel, over interior
/// pixels. Zero for images smaller than 3x3.
pub fn sharpness(img: &Image) -> f64 {
    let (_, h, w) = img.dims();
    if h < 3 || w < 3 {
        return 0.0;
    }
    let l = img.luma();
    let mut vals = Vec::with_capacity((h - 2) * (w - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let c = l[y * w + x];
            vals.push(l[(y - 1) * w + x] + l[(y + 1) * w + x] + l[y * w + x - 1] + l[y * w + x + 1] - 4.0 * c);
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n == 0 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::BlurSpec;
    use crate::image::test_card;

    #[test]
    fn psnr_reference_values() {
        let zero = Image::filled(3, 8, 8, 0.0);
        assert_eq!(psnr(&zero, &zero).unwrap(), PSNR_CAP);
        assert_eq!(psnr(&zero, &Image::filled(3, 8, 8, 1.0)).unwrap(), 0.0);
        let half = psnr(&zero, &Image::filled(3, 8, 8, 0.5)).unwrap();
        assert!((half - 6.0206).abs() < 1e-4, "{half}");
        assert!(psnr(&zero, &Image::filled(3, 8, 7, 0.0)).is_err());
    }

    #[test]
    fn sharpness_orders_blur_and_scale() {
        assert_eq!(sharpness(&Image::filled(3, 16, 16, 0.3)), 0.0);
        let card = test_card();
        let blurred = BlurSpec::GaussianIso { size: 7, sigma: 1.5 }.kernel().unwrap().apply(&card).unwrap();
        assert!(sharpness(&blurred) < sharpness(&card));
        let checker = Image::from_fn(3, 16, 16, |_, y, x| ((x + y) % 2) as f64);
        let up = Image::from_fn(3, 32, 32, |_, y, x| ((x / 2 + y / 2) % 2) as f64);
        assert!(sharpness(&checker) > sharpness(&up));
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[0.0, 5.0]), 0.0);
    }
}
