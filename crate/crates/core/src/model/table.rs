//! Recorded unit activations over an image collection, plus the CSV format
//! used to import and export them.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ImageDataset;
use crate::error::{ImiError, Result};
use crate::model::backend::ModelBackend;
use crate::model::spec::UnitAddress;
use crate::model::tensor::spatial_mean;
use crate::par;

/// Activations indexed `(image, unit)`, stored row-major by image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTable {
    pub dataset_id: String,
    pub image_ids: Vec<String>,
    pub units: Vec<UnitAddress>,
    activations: Vec<f64>,
}

impl ActivationTable {
    pub fn new(
        dataset_id: impl Into<String>,
        image_ids: Vec<String>,
        units: Vec<UnitAddress>,
        activations: Vec<f64>,
    ) -> Result<Self> {
        if activations.len() != image_ids.len() * units.len() {
            return Err(ImiError::Validation(format!(
                "table needs {}x{} entries, got {}",
                image_ids.len(),
                units.len(),
                activations.len()
            )));
        }
        if let Some(i) = activations.iter().position(|v| !v.is_finite()) {
            return Err(ImiError::Numeric(format!(
                "activation for image {} is {}",
                image_ids[i / units.len()],
                activations[i]
            )));
        }
        Ok(Self {
            dataset_id: dataset_id.into(),
            image_ids,
            units,
            activations,
        })
    }

    pub fn image_count(&self) -> usize {
        self.image_ids.len()
    }

    pub fn unit_count(&self) -> usize {
        self.units.len()
    }

    pub fn get(&self, image: usize, unit: usize) -> f64 {
        self.activations[image * self.units.len() + unit]
    }

    pub fn unit_index(&self, unit: &UnitAddress) -> Result<usize> {
        self.units
            .iter()
            .position(|u| u == unit)
            .ok_or_else(|| ImiError::Addressing(format!("unit {unit} not in activation table")))
    }

    /// All activations of one unit, in image order.
    pub fn column(&self, unit: &UnitAddress) -> Result<Vec<f64>> {
        let u = self.unit_index(unit)?;
        Ok((0..self.image_count()).map(|i| self.get(i, u)).collect())
    }

    /// Copy with rows reordered by ascending image id.
    pub fn sorted_by_image_id(&self) -> Self {
        let mut order: Vec<usize> = (0..self.image_count()).collect();
        order.sort_by(|&a, &b| self.image_ids[a].cmp(&self.image_ids[b]));
        let n_units = self.unit_count();
        let mut activations = Vec::with_capacity(self.activations.len());
        for &i in &order {
            activations.extend_from_slice(&self.activations[i * n_units..(i + 1) * n_units]);
        }
        Self {
            dataset_id: self.dataset_id.clone(),
            image_ids: order.iter().map(|&i| self.image_ids[i].clone()).collect(),
            units: self.units.clone(),
            activations,
        }
    }

    /// Serializes to the CSV exchange format. The unit list is not part of
    /// the CSV; it travels in a sidecar manifest.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{},{},{}",
            self.dataset_id,
            self.unit_count(),
            self.image_count()
        );
        for (i, id) in self.image_ids.iter().enumerate() {
            out.push_str(id);
            for u in 0..self.unit_count() {
                let _ = write!(out, ",{:.16e}", self.get(i, u));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV exchange format against a known unit list.
    pub fn from_csv(text: &str, units: Vec<UnitAddress>, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| ImiError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(
                1,
                "header must be dataset_id,unit_count,image_count".into(),
            ));
        }
        let unit_count: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(1, format!("bad unit count {:?}", fields[1])))?;
        let image_count: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(1, format!("bad image count {:?}", fields[2])))?;
        if unit_count != units.len() {
            return Err(parse_err(
                1,
                format!(
                    "header declares {unit_count} units, manifest lists {}",
                    units.len()
                ),
            ));
        }
        let mut image_ids = Vec::with_capacity(image_count);
        let mut activations = Vec::with_capacity(image_count * unit_count);
        for (n, line) in lines.enumerate() {
            let lineno = n + 2;
            if line.is_empty() {
                continue;
            }
            let mut cells = line.split(',');
            let id = cells.next().unwrap_or_default();
            let values: Vec<&str> = cells.collect();
            if values.len() != unit_count {
                return Err(parse_err(
                    lineno,
                    format!("expected {unit_count} activations, found {}", values.len()),
                ));
            }
            image_ids.push(id.to_string());
            for v in values {
                let x: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad activation {v:?}")))?;
                activations.push(x);
            }
        }
        if image_ids.len() != image_count {
            return Err(parse_err(
                image_ids.len() + 1,
                format!(
                    "header declares {image_count} images, found {}",
                    image_ids.len()
                ),
            ));
        }
        Self::new(fields[0], image_ids, units, activations)
    }
}

/// Records every unit's activation on every image of the dataset.
///
/// Work is spread across images; each row is computed with a single
/// forward pass up to the deepest requested layer.
pub fn record_activation_table<B: ModelBackend + ?Sized>(
    backend: &B,
    dataset: &ImageDataset,
    units: &[UnitAddress],
) -> Result<ActivationTable> {
    if dataset.is_empty() {
        return Err(ImiError::Validation("dataset is empty".into()));
    }
    if units.is_empty() {
        return Err(ImiError::Validation("unit list is empty".into()));
    }
    let spec = backend.spec();
    let resolved = units
        .iter()
        .map(|u| spec.resolve(u))
        .collect::<Result<Vec<_>>>()?;
    let mut layers = resolved.clone();
    layers.sort_unstable();
    layers.dedup();

    let rows = par::try_map_range(dataset.len(), |i| {
        let maps = backend
            .feature_maps(&dataset.images[i], &layers)
            .map_err(|e| ImiError::Validation(format!("image {}: {e}", dataset.ids[i])))?;
        units
            .iter()
            .zip(&resolved)
            .map(|(u, layer)| {
                let slot = layers.binary_search(layer).expect("layer was collected");
                spatial_mean(maps[slot].channel(u.channel_index)?)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    ActivationTable::new(
        dataset.id.clone(),
        dataset.ids.clone(),
        units.to_vec(),
        rows.into_iter().flatten().collect(),
    )
}
