//! Image collections: a procedural toy set for desk-scale runs and PNG
//! directory loading for real data.

use std::path::Path;

use rand::Rng;

use crate::error::{ImiError, Result};
use crate::model::tensor::Tensor;
use crate::rng;

/// Images in `(3, height, width)` layout with values in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct ImageDataset {
    pub id: String,
    pub ids: Vec<String>,
    pub images: Vec<Tensor>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Procedural images mixing colour gradients, gratings and blobs.
    /// Image `i` depends only on `(seed, i)`.
    pub fn toy(size: usize, side: usize, seed: u64) -> Self {
        let width = size.saturating_sub(1).to_string().len().max(4);
        let ids: Vec<String> = (0..size).map(|i| format!("img{i:0width$}")).collect();
        let images = crate::par::map_range(size, |i| toy_image(side, seed, i));
        Self {
            id: format!("toy-{size}-{seed}"),
            ids,
            images,
        }
    }

    /// Loads every `*.png` in `dir` (ids are file stems, sorted). All
    /// failures are collected and reported together.
    pub fn load_png_dir(dir: &Path, expected_side: usize) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| ImiError::io(dir, e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(ImiError::Validation(format!(
                "no PNG images in {}",
                dir.display()
            )));
        }
        let loaded = crate::par::map_slice(&paths, |p| read_png(p, expected_side));
        let mut ids = Vec::new();
        let mut images = Vec::new();
        let mut failures = Vec::new();
        for (path, res) in paths.iter().zip(loaded) {
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            match res {
                Ok(t) => {
                    ids.push(stem);
                    images.push(t);
                }
                Err(e) => failures.push(format!("{stem}: {e}")),
            }
        }
        if !failures.is_empty() {
            return Err(ImiError::Validation(format!(
                "{} image(s) failed to load: {}",
                failures.len(),
                failures.join("; ")
            )));
        }
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into());
        Ok(Self { id, ids, images })
    }
}

fn toy_image(side: usize, seed: u64, index: usize) -> Tensor {
    let mut r = rng::stream(seed, &format!("toy-image-{index}"));
    let n = side * side;
    let mut data = vec![0.0; 3 * n];
    let base: [f64; 3] = [r.random(), r.random(), r.random()];
    let grad: [f64; 3] = [
        r.random_range(-0.5..0.5),
        r.random_range(-0.5..0.5),
        r.random_range(-0.5..0.5),
    ];
    let angle: f64 = r.random_range(0.0..std::f64::consts::PI);
    let freq: f64 = r.random_range(0.05..0.6);
    let grating_amp: f64 = r.random_range(0.0..0.4);
    let grating_colour: [f64; 3] = [r.random(), r.random(), r.random()];
    let blobs: Vec<(f64, f64, f64, [f64; 3], f64)> = (0..r.random_range(0..4))
        .map(|_| {
            (
                r.random_range(0.0..side as f64),
                r.random_range(0.0..side as f64),
                r.random_range(1.5..side as f64 / 3.0),
                [r.random(), r.random(), r.random()],
                r.random_range(-0.8..0.8),
            )
        })
        .collect();
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..side {
        for x in 0..side {
            let (fx, fy) = (x as f64 / side as f64, y as f64 / side as f64);
            let phase = (x as f64 * ca + y as f64 * sa) * freq;
            let grating = grating_amp * phase.sin();
            for c in 0..3 {
                let mut v = base[c] + grad[c] * (fx - fy) + grating * (grating_colour[c] - 0.5);
                for &(bx, by, rad, col, amp) in &blobs {
                    let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
                    v += amp * col[c] * (-d2 / (2.0 * rad * rad)).exp();
                }
                data[c * n + y * side + x] = v.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::from_raw(vec![3, side, side], data)
}

fn read_png(path: &Path, side: usize) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| ImiError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_rgb8();
    if img.width() as usize != side || img.height() as usize != side {
        return Err(ImiError::Image {
            path: path.to_path_buf(),
            message: format!(
                "expected {side}x{side}, got {}x{}",
                img.width(),
                img.height()
            ),
        });
    }
    let n = side * side;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = px[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_raw(vec![3, side, side], data))
}

/// Encodes a `(3, h, w)` tensor with values in `[0, 1]` as PNG bytes.
pub fn png_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = t.chw()?;
    if c != 3 {
        return Err(ImiError::Validation(format!("PNG export needs 3 channels, got {c}")));
    }
    let n = h * w;
    let d = t.data();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        for ch in 0..3 {
            px[ch] = (d[ch * n + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| ImiError::Image {
            path: Default::default(),
            message: e.to_string(),
        })?;
    Ok(out.into_inner())
}

pub fn write_png(t: &Tensor, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ImiError::io(parent, e))?;
    }
    std::fs::write(path, png_bytes(t)?).map_err(|e| ImiError::io(path, e))
}
