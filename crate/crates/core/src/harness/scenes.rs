//! Procedural scenes with parametric faces, and folder ingestion.

use std::path::{Path, PathBuf};

use facesr_grad::Rect;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Target fraction of the image covered by faces.
    pub face_area: f64,
    pub max_faces: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { count: 64, height: 128, width: 128, face_area: 0.10, max_faces: 2 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic,
    Folder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub image: Image,
    pub faces: Vec<Rect>,
    pub face_images: Vec<Image>,
    pub provenance: Provenance,
}

impl SceneSample {
    pub fn face_area_fraction(&self) -> f64 {
        let area: usize = self.faces.iter().map(Rect::area).sum();
        area as f64 / (self.image.height() * self.image.width()) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl From<Rect> for FaceRect {
    fn from(r: Rect) -> Self {
        FaceRect { x: r.x, y: r.y, w: r.w, h: r.h }
    }
}

impl From<FaceRect> for Rect {
    fn from(r: FaceRect) -> Self {
        Rect::new(r.x, r.y, r.w, r.h)
    }
}

/// One entry of a scenes metadata file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub image: String,
    pub faces: Vec<FaceRect>,
}

/// Sum of random colour gratings over a smooth gradient, in `[0, 1]`.
pub fn procedural_texture(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let slope: [(f64, f64); 3] = std::array::from_fn(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)));
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let period = rng.random_range(3.0..24.0);
            let phase = rng.random_range(0.0..tau);
            let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.09..0.09));
            (angle, period, phase, amp)
        })
        .collect();
    let (fh, fw) = (height as f64, width as f64);
    Image::from_fn(3, height, width, |c, y, x| {
        let (u, v) = (x as f64 / fw - 0.5, y as f64 / fh - 0.5);
        let mut val = base[c] + slope[c].0 * u + slope[c].1 * v;
        for (angle, period, phase, amp) in &waves {
            let t = x as f64 * angle.cos() + y as f64 * angle.sin();
            val += amp[c] * (tau * t / period + phase).sin();
        }
        val.clamp(0.0, 1.0)
    })
}

fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, x: f64, y: f64) -> bool {
    let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
    dx * dx + dy * dy <= 1.0
}

/// Paints a parametric face (skin ellipse, hair with fine stripes, eyes,
/// brows, nose, mouth and freckle-like marks) into `rect`.
fn draw_face(img: &mut Image, rect: Rect, rng: &mut ChaCha8Rng) {
    let skin = {
        let t = rng.random_range(0.0..1.0);
        [0.55 + 0.35 * t, 0.40 + 0.30 * t, 0.30 + 0.25 * t]
    };
    let hair: [f64; 3] = {
        let d = rng.random_range(0.05..0.45);
        [d, d * rng.random_range(0.6..1.0), d * rng.random_range(0.4..0.9)]
    };
    let hair_period = rng.random_range(2.0..3.5);
    let eye_dy = rng.random_range(-0.04..0.04);
    let mouth_w = rng.random_range(0.14..0.24);
    let freckles: Vec<(f64, f64)> =
        (0..rng.random_range(3..9)).map(|_| (rng.random_range(0.3..0.7), rng.random_range(0.45..0.7))).collect();
    let (w, h) = (rect.w as f64, rect.h as f64);
    for py in 0..rect.h {
        for px in 0..rect.w {
            let (u, v) = ((px as f64 + 0.5) / w, (py as f64 + 0.5) / h);
            let mut col: Option<[f64; 3]> = None;
            if ellipse(0.5, 0.42, 0.46, 0.42, u, v) && v < 0.38 {
                let stripe = 0.08 * ((u * w / hair_period) * std::f64::consts::TAU).sin();
                col = Some(hair.map(|c| c + stripe));
            }
            if ellipse(0.5, 0.55, 0.36, 0.43, u, v) {
                let shade = 0.08 * (v - 0.55);
                col = Some(skin.map(|c| c - shade));
                let eye_y = 0.48 + eye_dy;
                for ex in [0.36, 0.64] {
                    if ellipse(ex, eye_y, 0.08, 0.045, u, v) {
                        col = Some([0.95, 0.95, 0.93]);
                    }
                    if ellipse(ex, eye_y, 0.035, 0.035, u, v) {
                        col = Some([0.08, 0.06, 0.05]);
                    }
                    if (v - (eye_y - 0.08)).abs() < 0.02 && (u - ex).abs() < 0.09 {
                        col = Some(hair);
                    }
                }
                if (u - 0.5).abs() < 0.015 && (0.5..0.64).contains(&v) {
                    col = Some(skin.map(|c| c * 0.7));
                }
                if ellipse(0.5, 0.76, mouth_w, 0.035, u, v) {
                    col = Some([0.65, 0.2, 0.22]);
                }
                for &(fx, fy) in &freckles {
                    if ellipse(fx, fy, 0.025, 0.025, u, v) {
                        col = Some(skin.map(|c| c * 0.6));
                    }
                }
            }
            if let Some(c) = col {
                for (ch, value) in c.iter().enumerate() {
                    img.set(ch, rect.y + py, rect.x + px, value.clamp(0.0, 1.0));
                }
            }
        }
    }
}

fn overlaps(a: &Rect, b: &Rect) -> bool {
    a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h
}

/// One synthetic scene; face rects have positions and sizes on the `align`
/// grid so they map exactly onto degraded-image pixels.
pub fn gen_scene(cfg: &SceneConfig, align: usize, seed: u64) -> Result<SceneSample> {
    if cfg.height % align != 0 || cfg.width % align != 0 {
        return Err(Error::Config(format!(
            "scene size {}x{} is not divisible by {align}",
            cfg.width, cfg.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = procedural_texture(cfg.height, cfg.width, rng.random());
    let k = rng.random_range(1..=cfg.max_faces.max(1));
    let total = cfg.face_area * (cfg.height * cfg.width) as f64;
    let limit = cfg.height.min(cfg.width);
    let mut faces: Vec<Rect> = Vec::new();
    for _ in 0..k {
        let side = (total / k as f64).sqrt() * rng.random_range(0.85..1.15);
        let side = ((side / align as f64).round() as usize * align).clamp(2 * align, limit);
        for _ in 0..64 {
            let x = rng.random_range(0..=(cfg.width - side) / align) * align;
            let y = rng.random_range(0..=(cfg.height - side) / align) * align;
            let r = Rect::new(x, y, side, side);
            if faces.iter().all(|f| !overlaps(f, &r)) {
                faces.push(r);
                break;
            }
        }
    }
    if faces.is_empty() {
        let side = ((total.sqrt() / align as f64).round() as usize * align).clamp(2 * align, limit);
        faces.push(Rect::new(0, 0, side, side));
    }
    for r in &faces {
        draw_face(&mut image, *r, &mut rng);
    }
    let face_images = faces.iter().map(|r| image.crop(*r)).collect::<Result<Vec<_>>>()?;
    Ok(SceneSample { image, faces, face_images, provenance: Provenance::Synthetic })
}

/// `count` scenes; scene `i` depends only on `(cfg, align, seed, i)`.
pub fn gen_scenes(cfg: &SceneConfig, align: usize, seed: u64, exec: Exec) -> Result<Vec<SceneSample>> {
    if cfg.count == 0 {
        return Err(Error::Config("scene count must be >= 1".into()));
    }
    exec.map_range(cfg.count, |i| gen_scene(cfg, align, scene_seed(seed, i)))
        .into_iter()
        .collect()
}

fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64).rotate_left(17) ^ 0x5DEE_CE66_D1CE_4E5B
}

/// FNV-1a over face rects and pixel bits.
pub fn scenes_hash(scenes: &[SceneSample]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for s in scenes {
        for r in &s.faces {
            for v in [r.x, r.y, r.w, r.h] {
                eat(&(v as u64).to_le_bytes());
            }
        }
        for v in s.image.data() {
            eat(&v.to_bits().to_le_bytes());
        }
    }
    h
}

/// Writes `scene_NNNN.png` files and a `scenes.json` metadata list.
pub fn save_scenes(dir: &Path, scenes: &[SceneSample]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let name = format!("scene_{i:04}.png");
        s.image.write_png(&dir.join(&name))?;
        meta.push(SceneMeta { image: name, faces: s.faces.iter().map(|&r| r.into()).collect() });
    }
    let path = dir.join("scenes.json");
    write_meta(&path, &meta)?;
    Ok(path)
}

pub fn write_meta(path: &Path, meta: &[SceneMeta]) -> Result<()> {
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a metadata file holding either one `{image, faces}` object or a list
/// of them.
pub fn read_meta(path: &Path) -> Result<Vec<SceneMeta>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|m: SceneMeta| vec![m])
    };
    parsed.map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Loads scenes listed in a metadata file; image paths are relative to it.
pub fn load_scenes(meta_path: &Path) -> Result<Vec<SceneSample>> {
    let base = meta_path.parent().unwrap_or(Path::new("."));
    read_meta(meta_path)?
        .into_iter()
        .map(|m| {
            let image = Image::read_png(&base.join(&m.image))?;
            let faces: Vec<Rect> = m.faces.iter().map(|&f| f.into()).collect();
            for r in &faces {
                if !r.fits_in(image.width(), image.height()) {
                    return Err(Error::Invalid(format!("face {r:?} outside {}", m.image)));
                }
            }
            let face_images = faces.iter().map(|r| image.crop(*r)).collect::<Result<Vec<_>>>()?;
            Ok(SceneSample { image, faces, face_images, provenance: Provenance::Folder })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> SceneConfig {
        SceneConfig { count: 3, height: 64, width: 64, face_area: 0.15, max_faces: 3 }
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        let a = gen_scenes(&small(), 4, 5, Exec::Sequential).unwrap();
        let b = gen_scenes(&small(), 4, 5, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(scenes_hash(&a), scenes_hash(&b));
        let c = gen_scenes(&small(), 4, 6, Exec::Sequential).unwrap();
        assert_ne!(scenes_hash(&a), scenes_hash(&c));
    }

    #[test]
    fn save_and_load_round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = gen_scenes(&small(), 4, 1, Exec::Sequential).unwrap();
        let meta = save_scenes(dir.path(), &scenes).unwrap();
        let back = load_scenes(&meta).unwrap();
        assert_eq!(back.len(), scenes.len());
        for (s, b) in scenes.iter().zip(&back) {
            assert_eq!(b.faces, s.faces);
            assert_eq!(b.image, s.image.quantized());
            assert_eq!(b.provenance, Provenance::Folder);
        }
    }

    #[test]
    fn single_object_metadata_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.json");
        std::fs::write(&path, r#"{"image": "a.png", "faces": [{"x": 1, "y": 2, "w": 3, "h": 4}]}"#).unwrap();
        let meta = read_meta(&path).unwrap();
        assert_eq!(meta[0].faces[0], FaceRect { x: 1, y: 2, w: 3, h: 4 });
        std::fs::write(&path, r#"{"image": "a.png"}"#).unwrap();
        assert!(read_meta(&path).is_err());
    }

    #[test]
    fn zero_count_and_misaligned_size_are_errors() {
        assert!(gen_scenes(&SceneConfig { count: 0, ..small() }, 4, 0, Exec::Sequential).is_err());
        assert!(gen_scene(&SceneConfig { height: 62, ..small() }, 4, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn faces_are_aligned_disjoint_and_near_target_area(seed in any::<u64>(), k in 1usize..4) {
            let cfg = SceneConfig { count: 1, height: 128, width: 128, face_area: 0.12, max_faces: k };
            let s = gen_scene(&cfg, 4, seed).unwrap();
            prop_assert!(!s.faces.is_empty() && s.faces.len() <= k);
            for (i, a) in s.faces.iter().enumerate() {
                prop_assert!(a.fits_in(128, 128));
                prop_assert!([a.x, a.y, a.w, a.h].iter().all(|v| v % 4 == 0));
                for b in &s.faces[i + 1..] {
                    prop_assert!(!overlaps(a, b));
                }
            }
            let f = s.face_area_fraction();
            prop_assert!(f > 0.0 && f < 0.2, "{}", f);
            prop_assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
