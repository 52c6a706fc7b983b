//! JPEG-style block transform coding of the luma channel.
//!
//! RGB is converted to YCbCr with the full-range BT.601 matrix, luma is cut
//! into 8x8 blocks (edge-replicated to a multiple of 8), transformed with an
//! orthonormal DCT-II and its AC coefficients are quantised with the standard
//! luminance table scaled by quality. Chroma passes through untouched and the
//! DC coefficient keeps full precision, so flat regions keep their level.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::Image;

/// Annex K luminance quantisation table, row-major.
const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

pub const MIN_QUALITY: u8 = 10;
pub const MAX_QUALITY: u8 = 100;

/// Quality-scaled table, libjpeg convention, entries clamped to `[1, 255]`.
pub fn quant_table(quality: u8) -> Result<[f64; 64]> {
    if !(MIN_QUALITY..=MAX_QUALITY).contains(&quality) {
        return Err(Error::Invalid(format!(
            "jpeg quality must be in [{MIN_QUALITY}, {MAX_QUALITY}], got {quality}"
        )));
    }
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut t = [0.0; 64];
    for (o, &b) in t.iter_mut().zip(LUMA_TABLE.iter()) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    Ok(t)
}

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos();
            }
        }
        b
    })
}

fn dct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;

fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + KG * g + KB * b;
    (y, (b - y) / (2.0 * (1.0 - KB)), (r - y) / (2.0 * (1.0 - KR)))
}

fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let r = y + 2.0 * (1.0 - KR) * cr;
    let b = y + 2.0 * (1.0 - KB) * cb;
    let g = (y - KR * r - KB * b) / KG;
    (r, g, b)
}

/// Lossy round trip through the block codec. Output is clipped to `[0, 1]`.
pub fn compress(img: &Image, quality: u8) -> Result<Image> {
    let table = quant_table(quality)?;
    let (ch, h, w) = img.dims();
    let n = h * w;
    let rgb = ch == 3;
    let (mut luma, mut cb, mut cr) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        if rgb {
            let (y, b, r) = rgb_to_ycbcr(img.data()[i], img.data()[n + i], img.data()[2 * n + i]);
            luma[i] = y;
            cb[i] = b;
            cr[i] = r;
        } else {
            luma[i] = img.data()[i];
        }
    }

    let (bh, bw) = (h.div_ceil(8), w.div_ceil(8));
    let mut coded = vec![0.0; n];
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0.0; 64];
            for y in 0..8 {
                let sy = (by * 8 + y).min(h - 1);
                for x in 0..8 {
                    let sx = (bx * 8 + x).min(w - 1);
                    block[y * 8 + x] = luma[sy * w + sx] * 255.0 - 128.0;
                }
            }
            let mut coef = dct8x8(&block);
            for k in 1..64 {
                coef[k] = (coef[k] / table[k]).round() * table[k];
            }
            let rec = idct8x8(&coef);
            for y in 0..8 {
                let oy = by * 8 + y;
                if oy >= h {
                    break;
                }
                for x in 0..8 {
                    let ox = bx * 8 + x;
                    if ox >= w {
                        break;
                    }
                    coded[oy * w + ox] = (rec[y * 8 + x] + 128.0) / 255.0;
                }
            }
        }
    }

    let mut out = Image::filled(ch, h, w, 0.0);
    let data = out.data_mut();
    for i in 0..n {
        if rgb {
            let (r, g, b) = ycbcr_to_rgb(coded[i], cb[i], cr[i]);
            data[i] = r.clamp(0.0, 1.0);
            data[n + i] = g.clamp(0.0, 1.0);
            data[2 * n + i] = b.clamp(0.0, 1.0);
        } else {
            data[i] = coded[i].clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_round_trip() {
        let mut block = [0.0; 64];
        for (i, v) in block.iter_mut().enumerate() {
            *v = ((i * 37) % 17) as f64 - 8.0;
        }
        let back = idct8x8(&dct8x8(&block));
        for (a, b) in block.iter().zip(back.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn color_transform_is_reversible() {
        let (y, cb, cr) = rgb_to_ycbcr(0.2, 0.7, 0.9);
        let (r, g, b) = ycbcr_to_rgb(y, cb, cr);
        assert!((r - 0.2).abs() < 1e-14 && (g - 0.7).abs() < 1e-14 && (b - 0.9).abs() < 1e-14);
    }

    #[test]
    fn table_scaling_matches_libjpeg() {
        assert_eq!(quant_table(50).unwrap()[0], 16.0);
        assert!(quant_table(100).unwrap().iter().all(|&q| q == 1.0));
        assert_eq!(quant_table(10).unwrap()[0], 80.0);
        assert!(quant_table(9).is_err());
        assert!(quant_table(101).is_err());
    }
}
