use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Convolution,
    Normalization,
    Relu,
    Pooling,
    SkipBlockOutput,
    Dense,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Convolution => "convolution",
            LayerKind::Normalization => "normalization",
            LayerKind::Relu => "relu",
            LayerKind::Pooling => "pooling",
            LayerKind::SkipBlockOutput => "skip_block_output",
            LayerKind::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    pub kind: LayerKind,
    /// Input shape `(channels, height, width)` seen by this layer.
    pub input_shape: [usize; 3],
    /// Output shape `(channels, height, width)`.
    pub output_shape: [usize; 3],
}

impl LayerSpec {
    pub fn channel_count(&self) -> usize {
        self.output_shape[0]
    }
}

/// Structural description of a model: its ordered layers and input shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Checks the spec's structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(ImiError::Config(format!(
                "model {} has no layers",
                self.model_id
            )));
        }
        let mut seen = std::collections::HashSet::new();
        let mut previous = self.input_shape;
        for layer in &self.layers {
            if !seen.insert(layer.id.as_str()) {
                return Err(ImiError::Config(format!("duplicate layer id {}", layer.id)));
            }
            if layer.channel_count() == 0 || layer.output_shape.contains(&0) {
                return Err(ImiError::Config(format!(
                    "layer {} has an empty output shape {:?}",
                    layer.id, layer.output_shape
                )));
            }
            if layer.input_shape != previous {
                return Err(ImiError::Config(format!(
                    "layer {} expects input {:?} but receives {:?}",
                    layer.id, layer.input_shape, previous
                )));
            }
            previous = layer.output_shape;
        }
        Ok(())
    }

    pub fn layer_index(&self, layer_id: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.id == layer_id)
    }

    pub fn layer(&self, layer_id: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.id == layer_id)
    }

    /// Resolves a unit to its layer index, checking the channel bound.
    pub fn resolve(&self, unit: &UnitAddress) -> Result<usize> {
        if unit.model_id != self.model_id {
            return Err(ImiError::Addressing(format!(
                "unit {unit} belongs to model {}, not {}",
                unit.model_id, self.model_id
            )));
        }
        let idx = self
            .layer_index(&unit.layer_id)
            .ok_or_else(|| ImiError::Addressing(format!("unknown layer {}", unit.layer_id)))?;
        let channels = self.layers[idx].channel_count();
        if unit.channel_index >= channels {
            return Err(ImiError::Addressing(format!(
                "channel {} out of range for layer {} with {channels} channels",
                unit.channel_index, unit.layer_id
            )));
        }
        Ok(idx)
    }
}

/// One output channel of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UnitAddress {
    pub model_id: String,
    pub layer_id: String,
    pub channel_index: usize,
}

impl UnitAddress {
    pub fn new(model_id: impl Into<String>, layer_id: impl Into<String>, channel: usize) -> Self {
        Self {
            model_id: model_id.into(),
            layer_id: layer_id.into(),
            channel_index: channel,
        }
    }

    /// Filesystem-safe key, e.g. `refcnn_conv2_3`.
    pub fn key(&self) -> String {
        format!("{}_{}_{}", self.model_id, self.layer_id, self.channel_index)
    }
}

impl fmt::Display for UnitAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.model_id, self.layer_id, self.channel_index)
    }
}
