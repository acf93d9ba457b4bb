//! Per-unit diversity weight search.
//!
//! Exponential phase: probe 1, 10, 100, ... until the first infeasible
//! weight. Binary phase: exactly six bisections between the last feasible
//! and first infeasible weight. The result is the largest feasible weight
//! probed; if weight 1 already fails, the result is 0.

use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::featviz::synth::{synthesize, FeatureVizConfig, Sign, SynthesisResult};
use crate::model::{ModelBackend, UnitAddress};

pub const BINARY_STEPS: usize = 6;
pub const DEFAULT_MAX_EXPONENTIAL_PROBES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda: f64,
    pub feasible: bool,
    /// Weakest batch activation in the optimized direction.
    pub achieved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySearchResult {
    pub lambda_star: f64,
    pub baseline: Probe,
    pub exponential: Vec<Probe>,
    pub binary: Vec<Probe>,
}

impl DiversitySearchResult {
    pub fn feasible_probes(&self) -> Vec<(f64, f64)> {
        std::iter::once(&self.baseline)
            .chain(&self.exponential)
            .chain(&self.binary)
            .filter(|p| p.feasible)
            .map(|p| (p.lambda, p.achieved))
            .collect()
    }
}

/// Runs the two-phase search against an arbitrary feasibility probe.
/// `max_exponential` caps the exponential phase (weights up to `10^(cap-1)`).
pub fn search_lambda<F>(mut probe: F, max_exponential: usize) -> Result<DiversitySearchResult>
where
    F: FnMut(f64) -> Result<Probe>,
{
    let baseline = probe(0.0)?;
    if !baseline.feasible {
        return Err(ImiError::WeakerThanData(format!(
            "without diversity the weakest image reaches {}, below the natural extreme",
            baseline.achieved
        )));
    }
    let mut exponential = Vec::new();
    let mut lo = 0.0;
    let mut hi = None;
    let mut lambda = 1.0;
    for _ in 0..max_exponential {
        let p = probe(lambda)?;
        exponential.push(p);
        if p.feasible {
            lo = lambda;
            lambda *= 10.0;
        } else {
            hi = Some(lambda);
            break;
        }
    }
    let mut binary = Vec::new();
    if let Some(mut hi) = hi {
        if lo > 0.0 {
            for _ in 0..BINARY_STEPS {
                let mid = 0.5 * (lo + hi);
                let p = probe(mid)?;
                binary.push(p);
                if p.feasible {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    Ok(DiversitySearchResult {
        lambda_star: lo,
        baseline,
        exponential,
        binary,
    })
}

/// Diversity search for one unit and direction against a natural extreme
/// (`max` activation for [`Sign::Max`], `min` for [`Sign::Min`]). Returns
/// the search trace and the batch synthesized at the selected weight.
pub fn search_diversity<B: ModelBackend + ?Sized>(
    backend: &B,
    unit: &UnitAddress,
    sign: Sign,
    natural_extreme: f64,
    config: &FeatureVizConfig,
    max_exponential: usize,
) -> Result<(DiversitySearchResult, SynthesisResult)> {
    let threshold = sign.factor() * natural_extreme;
    let mut best: Option<SynthesisResult> = None;
    let result = search_lambda(
        |lambda| {
            let cfg = FeatureVizConfig {
                diversity_weight: lambda,
                ..config.clone()
            };
            let res = synthesize(backend, unit, sign, &cfg)?;
            let achieved = res.weakest();
            let feasible = achieved >= threshold;
            if feasible && best.as_ref().is_none_or(|b| lambda >= b.diversity_weight) {
                best = Some(res);
            }
            Ok(Probe {
                lambda,
                feasible,
                achieved,
            })
        },
        max_exponential,
    )?;
    let batch = best.expect("baseline probe was feasible");
    debug_assert_eq!(batch.diversity_weight, result.lambda_star);
    Ok((result, batch))
}
