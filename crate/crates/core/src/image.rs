//! Planar real-valued images and their PNG boundary.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use facesr_grad::{Rect, Tensor};

use crate::error::{Error, Result};

/// Channel-planar image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// ITU-R BT.601 luma weights used wherever a grayscale view is needed.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn crop(&self, r: Rect) -> Result<Image> {
        if !r.fits_in(self.width, self.height) || r.w == 0 || r.h == 0 {
            return Err(Error::Shape(format!(
                "crop {r:?} outside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(Image::from_fn(self.channels, r.h, r.w, |c, y, x| self.get(c, r.y + y, r.x + x)))
    }

    /// Copies `src` into this image with its top-left corner at `(x, y)`.
    pub fn paste(&mut self, src: &Image, x: usize, y: usize) -> Result<()> {
        if src.channels != self.channels || x + src.width > self.width || y + src.height > self.height
        {
            return Err(Error::Shape("paste outside destination".into()));
        }
        for c in 0..src.channels {
            for sy in 0..src.height {
                for sx in 0..src.width {
                    self.set(c, y + sy, x + sx, src.get(c, sy, sx));
                }
            }
        }
        Ok(())
    }

    /// Grayscale view using [`LUMA`] for RGB; single-channel images pass through.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        let n = self.height * self.width;
        (0..n)
            .map(|i| (0..3).map(|c| LUMA[c] * self.data[c * n + i]).sum())
            .collect()
    }

    /// `[1, C, H, W]` tensor sharing these values.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.channels, self.height, self.width], self.data.clone())
            .expect("image dims are consistent")
    }

    /// First batch element of an NCHW tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Image> {
        let (_, c, h, w) = t.shape().nchw()?;
        Image::new(c, h, w, t.data()[..c * h * w].to_vec())
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if !self.same_dims(other) {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum();
        Ok(s / self.data.len() as f64)
    }

    /// 8-bit interleaved samples, rounding after clamping to `[0, 1]`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let mut out = Vec::with_capacity(n * 3);
        for i in 0..n {
            for c in 0..3 {
                let src = if self.channels == 1 { 0 } else { c };
                out.push(quantize(self.data[src * n + i]));
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Image> {
        if bytes.len() != height * width * 3 {
            return Err(Error::Shape("rgb8 buffer length".into()));
        }
        let n = height * width;
        let mut data = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = bytes[i * 3 + c] as f64 / 255.0;
            }
        }
        Ok(Image { channels: 3, height, width, data })
    }

    /// Rounds every value onto the 8-bit grid, as a PNG round trip would.
    pub fn quantized(&self) -> Image {
        self.map(|v| quantize(v) as f64 / 255.0)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.encode_png(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn encode_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(&self.to_rgb8()).map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read_png(path: &Path) -> Result<Image> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut dec = png::Decoder::new(BufReader::new(file));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| Error::Format(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Format("png too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => bytes.to_vec(),
            png::ColorType::Rgba => bytes.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => bytes.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            other => return Err(Error::Format(format!("unsupported png color type {other:?}"))),
        };
        Image::from_rgb8(h, w, &rgb)
    }
}

#[inline]
fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Deterministic 64x64 RGB test card: smooth gradients, a ring, stripes and a
/// checker patch, so blur, compression and sharpness all have something to act on.
pub fn test_card() -> Image {
    let n = 64;
    Image::from_fn(3, n, n, |c, y, x| {
        let (fx, fy) = (x as f64 / (n - 1) as f64, y as f64 / (n - 1) as f64);
        let base = match c {
            0 => 0.2 + 0.6 * fx,
            1 => 0.2 + 0.6 * fy,
            _ => 0.5 + 0.3 * ((fx + fy) * 3.0).sin(),
        };
        let (dx, dy) = (x as f64 - 40.0, y as f64 - 22.0);
        let r = (dx * dx + dy * dy).sqrt();
        let ring = if (9.0..12.0).contains(&r) { 0.35 } else { 0.0 };
        let stripes = if y >= 44 && (x / 2) % 2 == 0 { 0.25 } else { 0.0 };
        let checker = if x < 16 && y < 16 && ((x / 4) + (y / 4)) % 2 == 0 { -0.3 } else { 0.0 };
        (base + ring + stripes + checker).clamp(0.0, 1.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_bit_exact_on_the_8bit_grid() {
        let img = test_card().quantized();
        let mut bytes = Vec::new();
        img.encode_png(&mut bytes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        std::fs::write(&p, &bytes).unwrap();
        let back = Image::read_png(&p).unwrap();
        assert_eq!(back, img);
        let mut again = Vec::new();
        back.encode_png(&mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn crop_rejects_out_of_bounds() {
        let img = Image::filled(3, 8, 8, 0.5);
        assert!(img.crop(Rect::new(4, 4, 5, 2)).is_err());
        assert_eq!(img.crop(Rect::new(4, 4, 4, 2)).unwrap().dims(), (3, 2, 4));
    }

    #[test]
    fn tensor_round_trip() {
        let img = test_card();
        assert_eq!(Image::from_tensor(&img.to_tensor()).unwrap(), img);
    }
}
