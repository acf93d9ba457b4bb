//! The boundary between the platform and any model implementation.

use crate::error::{ImiError, Result};
use crate::featviz::diversity::{diversity_gradient, diversity_penalty};
use crate::model::network::Network;
use crate::model::spec::{ModelSpec, UnitAddress};
use crate::model::tensor::{spatial_mean, Tensor};
use crate::par;

/// A model that can report layer outputs and pull gradients back to the input.
///
/// Implementations are immutable after construction and are shared across
/// threads; per-call scratch state lives on the stack.
pub trait ModelBackend: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    /// Output of layer `layer` (index into `spec().layers`) for one image.
    fn feature_map(&self, image: &Tensor, layer: usize) -> Result<Tensor>;

    /// Gradient with respect to `image` of `<seed, feature_map(image, layer)>`.
    fn vjp(&self, image: &Tensor, layer: usize, seed: &Tensor) -> Result<Tensor>;

    /// Outputs of several layers (sorted ascending) for one image.
    fn feature_maps(&self, image: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>> {
        layers.iter().map(|&l| self.feature_map(image, l)).collect()
    }

    /// Feature maps of `layer` for a batch, then input gradients for the
    /// seeds that `seeds` derives from those maps. Returns `(maps, gradients)`.
    /// Backends that cache activations can skip the second forward pass.
    fn batch_vjp(
        &self,
        images: &[Tensor],
        layer: usize,
        seeds: &mut dyn FnMut(&[Tensor]) -> Result<Vec<Tensor>>,
    ) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let maps = par::try_map_slice(images, |img| self.feature_map(img, layer))?;
        let seeds = seeds(&maps)?;
        let grads = par::try_map_range(images.len(), |i| self.vjp(&images[i], layer, &seeds[i]))?;
        Ok((maps, grads))
    }
}

impl ModelBackend for Network {
    fn spec(&self) -> &ModelSpec {
        Network::spec(self)
    }

    fn feature_map(&self, image: &Tensor, layer: usize) -> Result<Tensor> {
        let mut outs = self.forward_to(image, layer)?;
        Ok(outs.pop().expect("forward_to returns layer + 1 outputs"))
    }

    fn vjp(&self, image: &Tensor, layer: usize, seed: &Tensor) -> Result<Tensor> {
        Network::vjp(self, image, layer, seed)
    }

    fn feature_maps(&self, image: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>> {
        let Some(&last) = layers.last() else {
            return Ok(Vec::new());
        };
        let outs = self.forward_to(image, last)?;
        Ok(layers.iter().map(|&l| outs[l].clone()).collect())
    }

    fn batch_vjp(
        &self,
        images: &[Tensor],
        layer: usize,
        seeds: &mut dyn FnMut(&[Tensor]) -> Result<Vec<Tensor>>,
    ) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        let outputs = par::try_map_slice(images, |img| self.forward_to(img, layer))?;
        let maps: Vec<Tensor> = outputs.iter().map(|o| o[layer].clone()).collect();
        let seeds = seeds(&maps)?;
        let grads = par::try_map_range(images.len(), |i| {
            self.vjp_with(&images[i], &outputs[i], layer, &seeds[i])
        })?;
        Ok((maps, grads))
    }
}

/// What gradient ascent optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// The unit's activation, independently per image.
    Activation,
    /// `sign * mean_i activation_i - diversity_weight * penalty(batch)`.
    Ascent { sign: f64, diversity_weight: f64 },
}

/// Result of a batch gradient evaluation.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub gradients: Vec<Tensor>,
    pub activations: Vec<f64>,
    pub penalty: f64,
    pub objective: f64,
}

fn check_image<B: ModelBackend + ?Sized>(backend: &B, image: &Tensor) -> Result<()> {
    let expected = backend.spec().input_shape;
    if image.shape() != expected {
        return Err(ImiError::Shape {
            expected: expected.to_vec(),
            actual: image.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean over spatial positions of the unit's feature map.
pub fn unit_activation<B: ModelBackend + ?Sized>(
    backend: &B,
    image: &Tensor,
    unit: &UnitAddress,
) -> Result<f64> {
    let layer = backend.spec().resolve(unit)?;
    let map = backend.feature_map(image, layer)?;
    spatial_mean(map.channel(unit.channel_index)?)
}

/// Seed selecting the spatial mean of one channel.
fn mean_seed(shape: [usize; 3], channel: usize, scale: f64) -> Tensor {
    let [c, h, w] = shape;
    let mut seed = Tensor::zeros(vec![c, h, w]);
    let hw = h * w;
    let v = scale / hw as f64;
    seed.data_mut()[channel * hw..(channel + 1) * hw]
        .iter_mut()
        .for_each(|x| *x = v);
    seed
}

/// Gradient of the unit's activation with respect to the image.
pub fn input_gradient<B: ModelBackend + ?Sized>(
    backend: &B,
    image: &Tensor,
    unit: &UnitAddress,
) -> Result<Tensor> {
    let layer = backend.spec().resolve(unit)?;
    let shape = backend.spec().layers[layer].output_shape;
    let grad = backend.vjp(image, layer, &mean_seed(shape, unit.channel_index, 1.0))?;
    if grad.shape() != image.shape() {
        return Err(ImiError::Shape {
            expected: image.shape().to_vec(),
            actual: grad.shape().to_vec(),
        });
    }
    if !grad.is_finite() {
        return Err(ImiError::Numeric("non-finite input gradient".into()));
    }
    Ok(grad)
}

/// Gradients of a batch objective with respect to every image in the batch.
pub fn batch_gradient<B: ModelBackend + ?Sized>(
    backend: &B,
    images: &[Tensor],
    unit: &UnitAddress,
    objective: Objective,
) -> Result<BatchGradient> {
    if images.is_empty() {
        return Err(ImiError::Validation("empty image batch".into()));
    }
    let layer = backend.spec().resolve(unit)?;
    for img in images {
        check_image(backend, img)?;
    }
    let shape = backend.spec().layers[layer].output_shape;
    let mut activations = Vec::new();
    let mut penalty = 0.0;
    let mut objective_value = 0.0;
    let (_, gradients) = backend.batch_vjp(images, layer, &mut |maps: &[Tensor]| {
        activations = maps
            .iter()
            .map(|m| spatial_mean(m.channel(unit.channel_index)?))
            .collect::<Result<Vec<_>>>()?;
        let seeds = match objective {
            Objective::Activation => {
                objective_value = activations.iter().sum::<f64>();
                vec![mean_seed(shape, unit.channel_index, 1.0); maps.len()]
            }
            Objective::Ascent {
                sign,
                diversity_weight,
            } => {
                let n = maps.len() as f64;
                let mut seeds = vec![mean_seed(shape, unit.channel_index, sign / n); maps.len()];
                let flat: Vec<&[f64]> = maps.iter().map(|m| m.data()).collect();
                penalty = diversity_penalty(&flat);
                if diversity_weight != 0.0 && maps.len() > 1 {
                    let dpen = diversity_gradient(&flat);
                    for (seed, d) in seeds.iter_mut().zip(dpen) {
                        seed.data_mut()
                            .iter_mut()
                            .zip(d)
                            .for_each(|(s, g)| *s -= diversity_weight * g);
                    }
                }
                objective_value = sign * activations.iter().sum::<f64>() / n - diversity_weight * penalty;
                seeds
            }
        };
        if !objective_value.is_finite() {
            return Err(ImiError::Numeric(format!("objective is {objective_value}")));
        }
        Ok(seeds)
    })?;
    if gradients.iter().any(|g| !g.is_finite()) {
        return Err(ImiError::Numeric("non-finite input gradient".into()));
    }
    Ok(BatchGradient {
        gradients,
        activations,
        penalty,
        objective: objective_value,
    })
}
