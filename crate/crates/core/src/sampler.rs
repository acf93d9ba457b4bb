//! Unit selection: pick a layer uniformly among eligible layers, then a
//! channel uniformly within it, rejecting duplicates.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::model::{LayerKind, ModelSpec, UnitAddress};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_units: usize,
    pub seed: u64,
    /// Number of leading convolution layers never sampled.
    pub exclusion: usize,
    /// When set, only these layers are considered (e.g. the last layer of
    /// each inception block, or transformer feed-forward layers).
    #[serde(default)]
    pub allowlist: Option<Vec<String>>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_units: 84,
            seed: 0,
            exclusion: 1,
            allowlist: None,
        }
    }
}

/// Layers whose channels count as units: convolutions, normalizations and
/// skip-block outputs, minus the first `exclusion` convolutions.
pub fn eligible_layers(spec: &ModelSpec, exclusion: usize) -> Result<Vec<String>> {
    eligible_layers_with(spec, exclusion, None)
}

pub fn eligible_layers_with(
    spec: &ModelSpec,
    exclusion: usize,
    allowlist: Option<&[String]>,
) -> Result<Vec<String>> {
    let mut convs_seen = 0;
    let mut out = Vec::new();
    for layer in &spec.layers {
        let eligible = match layer.kind {
            LayerKind::Convolution => {
                convs_seen += 1;
                convs_seen > exclusion
            }
            LayerKind::Normalization | LayerKind::SkipBlockOutput => true,
            LayerKind::Relu | LayerKind::Pooling | LayerKind::Dense => false,
        };
        let allowed = allowlist.is_none_or(|a| a.iter().any(|id| id == &layer.id));
        if eligible && allowed {
            out.push(layer.id.clone());
        }
    }
    if out.is_empty() {
        return Err(ImiError::Config(format!(
            "model {} has no eligible layers after excluding {exclusion} leading convolution(s)",
            spec.model_id
        )));
    }
    Ok(out)
}

/// Draws units layer-uniformly then channel-uniformly.
#[derive(Debug, Clone)]
pub struct UnitSampler {
    model_id: String,
    layers: Vec<(String, usize)>,
}

impl UnitSampler {
    pub fn new(spec: &ModelSpec, config: &SamplingConfig) -> Result<Self> {
        let ids = eligible_layers_with(spec, config.exclusion, config.allowlist.as_deref())?;
        let layers = ids
            .into_iter()
            .map(|id| {
                let channels = spec.layer(&id).expect("eligible layer exists").channel_count();
                (id, channels)
            })
            .collect();
        Ok(Self {
            model_id: spec.model_id.clone(),
            layers,
        })
    }

    /// Number of distinct units available.
    pub fn capacity(&self) -> usize {
        self.layers.iter().map(|(_, c)| c).sum()
    }

    pub fn layers(&self) -> &[(String, usize)] {
        &self.layers
    }

    /// One draw, duplicates allowed.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitAddress {
        let (layer, channels) = &self.layers[rng.random_range(0..self.layers.len())];
        UnitAddress::new(
            self.model_id.clone(),
            layer.clone(),
            rng.random_range(0..*channels),
        )
    }
}

/// Samples `config.n_units` distinct units; deterministic in the seed.
pub fn sample_units(spec: &ModelSpec, config: &SamplingConfig) -> Result<Vec<UnitAddress>> {
    let sampler = UnitSampler::new(spec, config)?;
    if config.n_units > sampler.capacity() {
        return Err(ImiError::Config(format!(
            "requested {} units but only {} eligible units exist",
            config.n_units,
            sampler.capacity()
        )));
    }
    let mut rng = rng::stream(config.seed, "unit-sampling");
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(config.n_units);
    while out.len() < config.n_units {
        let unit = sampler.draw(&mut rng);
        if seen.insert(unit.clone()) {
            out.push(unit);
        }
    }
    Ok(out)
}
