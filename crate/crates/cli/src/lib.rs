//! Wires the IMI pipeline into five commands: `prepare-stimuli`, `serve`,
//! `simulate`, `analyze` and `export`. Each reads one [`RunConfig`] and
//! writes below its output root.

pub mod analyze;
pub mod config;
pub mod error;
pub mod export;
pub mod prepare;
pub mod serve;
pub mod simulate;

use std::path::Path;

use imi_core::dataset::ImageDataset;
use imi_core::model::{reference_cnn, ModelBackend, Network, Tensor};
use imi_core::ImiError;
use serde::Serialize;

pub use config::{Overrides, RunConfig};
pub use error::CliError;

pub fn backend(cfg: &RunConfig) -> Network {
    match cfg.model.backend {
        config::Backend::ReferenceCnn => reference_cnn(cfg.model_seed()),
    }
}

pub fn dataset(cfg: &RunConfig, backend: &dyn ModelBackend) -> Result<ImageDataset, CliError> {
    let side = backend.spec().input_shape[1];
    match &cfg.dataset {
        config::DatasetSection::Toy { size, seed } => {
            Ok(ImageDataset::toy(*size, side, seed.unwrap_or_else(|| cfg.stream_seed("dataset"))))
        }
        config::DatasetSection::PngDir { path } => Ok(ImageDataset::load_png_dir(path, side)?),
    }
}

/// Whether the backend can return input gradients.
pub fn differentiable(backend: &dyn ModelBackend) -> Result<bool, CliError> {
    let spec = backend.spec();
    let image = Tensor::zeros(spec.input_shape.to_vec());
    let seed = Tensor::zeros(spec.layers[0].output_shape.to_vec());
    match backend.vjp(&image, 0, &seed) {
        Ok(_) => Ok(true),
        Err(ImiError::NotDifferentiable(_)) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    config_hash: &'a str,
    report: &'a T,
}

/// Pretty JSON wrapped with the config hash.
pub fn write_report<T: Serialize>(path: &Path, config_hash: &str, report: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Envelope { config_hash, report }).map_err(ImiError::from)?;
    text.push('\n');
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ImiError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| ImiError::io(path, e))?;
    Ok(())
}

/// Removes `dir` if present and recreates it empty.
pub fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| ImiError::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| ImiError::io(dir, e))?;
    Ok(())
}
