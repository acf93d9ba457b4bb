//! A-priori sample size arithmetic.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ImiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerParams {
    pub effect_mean_diff: f64,
    pub effect_sd: f64,
    pub cohens_d: f64,
    /// Two-sided, already Bonferroni-corrected.
    pub alpha: f64,
    pub power: f64,
    /// Asymptotic relative efficiency of Mann-Whitney U against the t-test.
    pub are_correction: f64,
    pub target_unit_sd: f64,
    pub real_trials_per_session: usize,
    /// Trials per unit actually used; `None` takes the binomial formula value.
    pub trials_override: Option<usize>,
    /// Units actually sampled; `None` takes the required count.
    pub units_chosen: Option<usize>,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            effect_mean_diff: 0.1,
            effect_sd: 0.15,
            cohens_d: 0.67,
            alpha: 0.01,
            power: 0.95,
            are_correction: 0.955,
            target_unit_sd: 0.1,
            real_trials_per_session: 40,
            trials_override: Some(30),
            units_chosen: Some(84),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    /// Per-group size of the two-sample t-test.
    pub t_test_n: f64,
    pub units_required: usize,
    /// `ceil(0.25 / sd^2)`, the worst case at p = 0.5.
    pub trials_per_unit_formula: usize,
    pub trials_per_unit: usize,
    pub units_chosen: usize,
    pub participants_required: usize,
}

/// Normal-approximation sample size of a two-sided two-sample t-test with
/// the small-sample term `z_{alpha/2}^2 / 4`, divided by the ARE factor.
pub fn power_analysis(p: &PowerParams) -> Result<PowerResult> {
    if p.cohens_d <= 0.0 || !p.cohens_d.is_finite() {
        return Err(ImiError::Config(format!("effect size must be positive, got {}", p.cohens_d)));
    }
    for (name, v) in [("alpha", p.alpha), ("power", p.power), ("are_correction", p.are_correction)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(ImiError::Config(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    if p.target_unit_sd <= 0.0 || p.real_trials_per_session == 0 {
        return Err(ImiError::Config("target sd and trials per session must be positive".into()));
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let za = z.inverse_cdf(1.0 - p.alpha / 2.0);
    let zb = z.inverse_cdf(p.power);
    let t_test_n = 2.0 * ((za + zb) / p.cohens_d).powi(2) + za * za / 4.0;
    let units_required = (t_test_n.ceil() / p.are_correction).ceil() as usize;
    let trials_per_unit_formula = (0.25 / (p.target_unit_sd * p.target_unit_sd) - 1e-9).ceil() as usize;
    let trials_per_unit = p.trials_override.unwrap_or(trials_per_unit_formula);
    let units_chosen = p.units_chosen.unwrap_or(units_required);
    let participants_required = (units_chosen * trials_per_unit).div_ceil(p.real_trials_per_session);
    Ok(PowerResult {
        t_test_n,
        units_required,
        trials_per_unit_formula,
        trials_per_unit,
        units_chosen,
        participants_required,
    })
}
