use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::featviz::augment::{default_augmentations, Augmentation, Warp};
use crate::model::{batch_gradient, unit_activation, ModelBackend, Objective, Tensor, UnitAddress};
use crate::{par, rng};

/// Direction of optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Max,
    Min,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Max => 1.0,
            Sign::Min => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sign::Max => "max",
            Sign::Min => "min",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVizConfig {
    pub batch_size: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Length of the gradient-magnitude smoothing window.
    pub window: usize,
    pub step_size: f64,
    pub augmentations: Vec<Augmentation>,
    pub seed: u64,
    pub diversity_weight: f64,
    /// Half-width of the uniform noise around mid-grey used for initialization.
    pub init_noise: f64,
}

impl Default for FeatureVizConfig {
    fn default() -> Self {
        Self {
            batch_size: 9,
            min_steps: 2500,
            max_steps: 10_000,
            window: 250,
            step_size: 0.5,
            augmentations: default_augmentations(),
            seed: 0,
            diversity_weight: 0.0,
            init_noise: 0.1,
        }
    }
}

impl FeatureVizConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(ImiError::Config("batch_size must be positive".into()));
        }
        if self.window == 0 {
            return Err(ImiError::Config("window must be positive".into()));
        }
        if self.min_steps < 2 * self.window {
            return Err(ImiError::Config(format!(
                "min_steps {} must be at least twice the window {}",
                self.min_steps, self.window
            )));
        }
        if self.max_steps < self.min_steps {
            return Err(ImiError::Config(format!(
                "max_steps {} is below min_steps {}",
                self.max_steps, self.min_steps
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(ImiError::Config("step_size must be positive".into()));
        }
        if !(self.diversity_weight >= 0.0 && self.diversity_weight.is_finite()) {
            return Err(ImiError::Config("diversity weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub unit: UnitAddress,
    pub sign: Sign,
    pub diversity_weight: f64,
    pub seed: u64,
    #[serde(skip)]
    pub images: Vec<Tensor>,
    /// Un-augmented activations of the returned images.
    pub activations: Vec<f64>,
    pub steps: usize,
    pub truncated: bool,
    #[serde(skip)]
    pub gradient_magnitudes: Vec<f64>,
}

impl SynthesisResult {
    /// Weakest image in the optimized direction: `min_i sign * activation_i`.
    pub fn weakest(&self) -> f64 {
        let s = self.sign.factor();
        self.activations
            .iter()
            .map(|a| s * a)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Halting rule, checked after step `magnitudes.len()`: once at least
/// `min_steps` steps are done, halt as soon as the mean magnitude over the
/// most recent `window` steps is no smaller than over the window before it.
pub fn should_halt(magnitudes: &[f64], min_steps: usize, window: usize) -> bool {
    let n = magnitudes.len();
    if n < min_steps || n < 2 * window {
        return false;
    }
    let last: f64 = magnitudes[n - window..].iter().sum::<f64>() / window as f64;
    let before: f64 = magnitudes[n - 2 * window..n - window].iter().sum::<f64>() / window as f64;
    last >= before
}

/// Gradient ascent on `sign * mean activation - λ * diversity` with per-step
/// random augmentations. Returns images in `[0, 1]` and their final
/// un-augmented activations.
pub fn synthesize<B: ModelBackend + ?Sized>(
    backend: &B,
    unit: &UnitAddress,
    sign: Sign,
    config: &FeatureVizConfig,
) -> Result<SynthesisResult> {
    config.validate()?;
    backend.spec().resolve(unit)?;
    let shape = backend.spec().input_shape;
    let [_, h, w] = shape;
    let label = format!("{unit}-{}", sign.as_str());
    let mut init_rng = rng::stream(config.seed, &format!("featviz-init-{label}"));
    let mut aug_rng = rng::stream(config.seed, &format!("featviz-augment-{label}"));
    let n_px: usize = shape.iter().product();
    let mut images: Vec<Tensor> = (0..config.batch_size)
        .map(|_| {
            let data = (0..n_px)
                .map(|_| 0.5 + init_rng.random_range(-config.init_noise..=config.init_noise))
                .collect();
            Tensor::from_raw(shape.to_vec(), data)
        })
        .collect();
    let objective = Objective::Ascent {
        sign: sign.factor(),
        diversity_weight: config.diversity_weight,
    };

    let mut magnitudes = Vec::with_capacity(config.min_steps);
    let mut truncated = true;
    for step in 1..=config.max_steps {
        let warps: Vec<Warp> = (0..images.len())
            .map(|_| Warp::sample(&config.augmentations, h, w, &mut aug_rng))
            .collect();
        let augmented: Vec<Tensor> = images.iter().zip(&warps).map(|(img, wp)| wp.forward(img)).collect();
        let grad = batch_gradient(backend, &augmented, unit, objective).map_err(|e| match e {
            ImiError::Numeric(reason) => ImiError::Diverged { step, reason },
            other => other,
        })?;
        let grads: Vec<Tensor> = grad
            .gradients
            .iter()
            .zip(&warps)
            .map(|(g, wp)| wp.adjoint(g))
            .collect();
        let magnitude = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        if !magnitude.is_finite() {
            return Err(ImiError::Diverged {
                step,
                reason: format!("gradient magnitude {magnitude}"),
            });
        }
        magnitudes.push(magnitude);
        for (img, g) in images.iter_mut().zip(&grads) {
            let norm = g.l2_norm();
            if norm > 0.0 {
                let k = config.step_size / norm;
                for (x, d) in img.data_mut().iter_mut().zip(g.data()) {
                    *x = (*x + k * d).clamp(0.0, 1.0);
                }
            }
        }
        if should_halt(&magnitudes, config.min_steps, config.window) {
            truncated = false;
            break;
        }
    }
    let activations = par::try_map_slice(&images, |img| unit_activation(backend, img, unit))?;
    Ok(SynthesisResult {
        unit: unit.clone(),
        sign,
        diversity_weight: config.diversity_weight,
        seed: config.seed,
        steps: magnitudes.len(),
        truncated,
        images,
        activations,
        gradient_magnitudes: magnitudes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Network, Op};

    #[test]
    fn flat_trajectory_halts_at_min_steps() {
        let mags = vec![1.0; 100];
        assert!(!should_halt(&mags[..39], 40, 10));
        assert!(should_halt(&mags[..40], 40, 10));
    }

    #[test]
    fn decreasing_trajectory_never_halts() {
        let mags: Vec<f64> = (0..500).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert!((40..=500).all(|n| !should_halt(&mags[..n], 40, 10)));
    }

    #[test]
    fn config_invariants() {
        let mut c = FeatureVizConfig::default();
        c.validate().unwrap();
        c.min_steps = 499;
        assert!(c.validate().is_err());
        c = FeatureVizConfig::default();
        c.max_steps = 100;
        assert!(c.validate().is_err());
        c = FeatureVizConfig::default();
        c.step_size = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn linear_unit_is_driven_to_its_optimum() {
        // y = sum of weights * pixels on a 1x2x2 image; ascent saturates the box.
        let w = vec![1.0, -1.0, 0.5, -0.25];
        let net = Network::new(
            "lin",
            [1, 2, 2],
            vec![(
                "y".into(),
                Op::Conv {
                    out_channels: 1,
                    kernel: 2,
                    padding: 0,
                    weights: w,
                    bias: vec![0.0],
                },
            )],
        )
        .unwrap();
        let cfg = FeatureVizConfig {
            batch_size: 2,
            min_steps: 20,
            max_steps: 50,
            window: 5,
            step_size: 0.2,
            augmentations: vec![],
            ..Default::default()
        };
        let unit = UnitAddress::new("lin", "y", 0);
        let res = synthesize(&net, &unit, Sign::Max, &cfg).unwrap();
        assert_eq!(res.steps, 20);
        assert!(!res.truncated);
        for a in &res.activations {
            assert!((a - 1.5).abs() < 1e-12, "{a}");
        }
        let res = synthesize(&net, &unit, Sign::Min, &cfg).unwrap();
        for a in &res.activations {
            assert!((a + 1.25).abs() < 1e-12, "{a}");
        }
    }
}
