//! Activation-map statistics that may predict interpretability.

use serde::{Deserialize, Serialize};

use crate::dataset::ImageDataset;
use crate::error::{ImiError, Result};
use crate::model::{ModelBackend, UnitAddress};
use crate::par;

/// Mean over positions of `|a - mean of its 3x3 neighbourhood|`, where the
/// neighbourhood is clipped at the borders and includes the centre.
pub fn map_contrast(map: &[f64], height: usize, width: usize) -> Result<f64> {
    if map.len() != height * width || map.is_empty() {
        return Err(ImiError::Shape {
            expected: vec![height, width],
            actual: vec![map.len()],
        });
    }
    let mut total = 0.0;
    for y in 0..height {
        for x in 0..width {
            let (mut sum, mut n) = (0.0, 0usize);
            for yy in y.saturating_sub(1)..=(y + 1).min(height - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(width - 1) {
                    sum += map[yy * width + xx];
                    n += 1;
                }
            }
            total += (map[y * width + x] - sum / n as f64).abs();
        }
    }
    Ok(total / map.len() as f64)
}

/// [`map_contrast`] averaged over a unit's maps.
pub fn local_contrast(maps: &[Vec<f64>], height: usize, width: usize) -> Result<f64> {
    if maps.is_empty() {
        return Err(ImiError::Degenerate("no activation maps".into()));
    }
    let mut s = 0.0;
    for m in maps {
        s += map_contrast(m, height, width)?;
    }
    Ok(s / maps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sparseness {
    /// Mean fraction of entries that are `<= 0`.
    pub pixel: f64,
    /// Fraction of maps with every entry `<= 0`.
    pub channel: f64,
}

pub fn predictor_sparseness(maps: &[Vec<f64>]) -> Result<Sparseness> {
    if maps.is_empty() || maps.iter().any(|m| m.is_empty()) {
        return Err(ImiError::Degenerate("no activation maps".into()));
    }
    let n = maps.len() as f64;
    let pixel = maps
        .iter()
        .map(|m| m.iter().filter(|&&v| v <= 0.0).count() as f64 / m.len() as f64)
        .sum::<f64>()
        / n;
    let channel = maps.iter().filter(|m| m.iter().all(|&v| v <= 0.0)).count() as f64 / n;
    Ok(Sparseness { pixel, channel })
}

/// The unit's spatial map for every dataset image, plus the map's (height, width).
pub fn unit_maps<B: ModelBackend + ?Sized>(
    backend: &B,
    dataset: &ImageDataset,
    unit: &UnitAddress,
) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let layer = backend.spec().resolve(unit)?;
    let [_, h, w] = backend.spec().layers[layer].output_shape;
    let maps = par::try_map_slice(&dataset.images, |img| {
        let fm = backend.feature_map(img, layer)?;
        let plane = h * w;
        Ok::<_, ImiError>(fm.data()[unit.channel_index * plane..(unit.channel_index + 1) * plane].to_vec())
    })?;
    Ok((maps, h, w))
}
