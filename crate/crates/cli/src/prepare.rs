use imi_core::model::UnitAddress;
use imi_core::pipeline::prepare_stimuli;
use imi_core::sampler::sample_units;
use imi_core::stimulus::{Condition, Difficulty};
use imi_core::store::{self, StimulusManifest};
use imi_core::ImiError;
use serde::Serialize;

use crate::{backend, dataset, differentiable, fresh_dir, write_report, CliError, RunConfig};

pub const ACTIVATIONS_FILE: &str = "activations.csv";
pub const REPORT_FILE: &str = "prepare.json";

#[derive(Debug, Clone, Serialize)]
pub struct PrepareReport {
    pub model_id: String,
    pub dataset_id: String,
    pub dataset_images: usize,
    pub units: Vec<UnitAddress>,
    pub conditions: Vec<Condition>,
    pub difficulties: Vec<Difficulty>,
    pub stimulus_images: usize,
}

/// Records activations, builds every stimulus and writes `out/prepared`.
pub fn run(cfg: &RunConfig) -> Result<PrepareReport, CliError> {
    let net = backend(cfg);
    let data = dataset(cfg, &net)?;
    let units = sample_units(net.spec(), &cfg.sampling())?;
    let mut conditions = vec![Condition::Natural];
    if cfg.stimuli.conditions.contains(&Condition::Synthetic) {
        if differentiable(&net)? {
            conditions.push(Condition::Synthetic);
        } else {
            log::warn!("{} has no input gradients; skipping synthetic stimuli", net.spec().model_id);
        }
    }
    let hash = cfg.hash();
    log::info!("preparing {} units on {} images", units.len(), data.len());
    let prepared = prepare_stimuli(&net, &data, &units, &cfg.prepare(conditions.clone()), &hash)?;

    let dir = cfg.prepared_dir();
    fresh_dir(&dir)?;
    prepared.write_images(&store::images_dir(&dir))?;
    write(&dir.join(store::MANIFEST_FILE), &store::manifest_json(&prepared.manifest)?)?;
    write(&dir.join(ACTIVATIONS_FILE), &prepared.table.to_csv())?;
    let report = PrepareReport {
        model_id: net.spec().model_id.clone(),
        dataset_id: data.id.clone(),
        dataset_images: data.len(),
        units,
        conditions,
        difficulties: cfg.stimuli.difficulties.clone(),
        stimulus_images: prepared.images.len(),
    };
    write_report(&dir.join(REPORT_FILE), &hash, &report)?;
    Ok(report)
}

/// Reads `out/prepared/manifest.json`, failing with a pointer to
/// `prepare-stimuli` when it is absent.
pub fn load_manifest(cfg: &RunConfig) -> Result<StimulusManifest, CliError> {
    let path = crate::error::require(cfg.prepared_dir().join(store::MANIFEST_FILE), "prepare-stimuli")?;
    let text = std::fs::read_to_string(&path).map_err(|e| ImiError::io(&path, e))?;
    let manifest = store::parse_manifest(&text, &path)?;
    let hash = cfg.hash();
    if manifest.config_hash != hash {
        log::warn!(
            "prepared stimuli carry config hash {} but the current config hashes to {hash}",
            manifest.config_hash
        );
    }
    Ok(manifest)
}

fn write(path: &std::path::Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| ImiError::io(path, e))?;
    Ok(())
}
