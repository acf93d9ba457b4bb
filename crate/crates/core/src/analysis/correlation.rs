//! Spearman correlation and the analyses built on it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::analysis::ranks::average_ranks;
use crate::analysis::scores::UnitScore;
use crate::error::{ImiError, Result};
use crate::model::UnitAddress;
use crate::par;

/// Largest sample size that gets an exact permutation p-value.
pub const EXACT_SPEARMAN_MAX_N: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub exact: bool,
}

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Counts permutations `p` of `cy` with `|<cx, cy∘p>| >= threshold`.
fn count_extreme(cx: &[f64], cy: &[f64], threshold: f64) -> u64 {
    let n = cx.len();
    // Fix the first position in parallel, enumerate the rest with Heap's algorithm.
    let per_first = par::map_range(n, |first| {
        let mut rest: Vec<f64> = cy
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != first)
            .map(|(_, &v)| v)
            .collect();
        let head = cx[0] * cy[first];
        let tail_x = &cx[1..];
        let mut count = 0u64;
        let m = rest.len();
        let mut c = vec![0usize; m];
        if (head + dot(tail_x, &rest)).abs() >= threshold {
            count += 1;
        }
        let mut i = 0;
        while i < m {
            if c[i] < i {
                if i % 2 == 0 {
                    rest.swap(0, i);
                } else {
                    rest.swap(c[i], i);
                }
                if (head + dot(tail_x, &rest)).abs() >= threshold {
                    count += 1;
                }
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        count
    });
    per_first.into_iter().sum()
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Rank correlation with average ranks for ties. Two-sided p-value: exact
/// permutation for `n <= 10`, t approximation above.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(ImiError::Shape {
            expected: vec![x.len()],
            actual: vec![y.len()],
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(ImiError::Degenerate(format!("spearman needs at least 3 pairs, got {n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(ImiError::Numeric("non-finite input to spearman".into()));
    }
    let cx = centered(&average_ranks(x));
    let cy = centered(&average_ranks(y));
    let sxx = dot(&cx, &cx);
    let syy = dot(&cy, &cy);
    if sxx == 0.0 || syy == 0.0 {
        return Err(ImiError::Degenerate("constant input has no rank correlation".into()));
    }
    let num = dot(&cx, &cy);
    let rho = (num / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    if n <= EXACT_SPEARMAN_MAX_N {
        let threshold = num.abs() - 1e-9 * (sxx * syy).sqrt();
        let hits = count_extreme(&cx, &cy, threshold);
        return Ok(SpearmanResult {
            rho,
            p_value: hits as f64 / factorial(n) as f64,
            n,
            exact: true,
        });
    }
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n as f64 - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n as f64 - 2.0).map_err(|e| ImiError::Numeric(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(SpearmanResult {
        rho,
        p_value,
        n,
        exact: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPoint {
    pub layer_id: String,
    pub relative_position: f64,
    pub mean_score: f64,
    pub n_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPositionResult {
    pub model_id: String,
    pub points: Vec<LayerPoint>,
    /// `None` when fewer than three layers carry scores or they are all equal.
    pub correlation: Option<SpearmanResult>,
    pub note: Option<String>,
}

/// Per-layer mean score against relative depth among the eligible layers
/// (first 0, last 1), with the rank correlation between the two.
pub fn layer_position_analysis(
    scores: &[UnitScore],
    model_id: &str,
    eligible_layers: &[String],
) -> Result<LayerPositionResult> {
    if eligible_layers.is_empty() {
        return Err(ImiError::Config(format!("model {model_id} has no eligible layers")));
    }
    let denom = (eligible_layers.len() - 1).max(1) as f64;
    let mut per_layer: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.unit.model_id == model_id) {
        let pos = eligible_layers
            .iter()
            .position(|l| *l == s.unit.layer_id)
            .ok_or_else(|| ImiError::Addressing(format!("{} is not an eligible layer", s.unit)))?;
        let e = per_layer.entry(pos).or_default();
        e.0 += s.proportion_correct;
        e.1 += 1;
    }
    let points: Vec<LayerPoint> = per_layer
        .into_iter()
        .map(|(pos, (sum, n))| LayerPoint {
            layer_id: eligible_layers[pos].clone(),
            relative_position: pos as f64 / denom,
            mean_score: sum / n as f64,
            n_units: n,
        })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| p.relative_position).collect();
    let y: Vec<f64> = points.iter().map(|p| p.mean_score).collect();
    let (correlation, note) = match spearman(&x, &y) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(format!("correlation undefined: {e}"))),
    };
    Ok(LayerPositionResult {
        model_id: model_id.to_string(),
        points,
        correlation,
        note,
    })
}

/// Spearman over units scored in both lists.
pub fn cross_condition_correlation(natural: &[UnitScore], synthetic: &[UnitScore]) -> Result<SpearmanResult> {
    let nat: BTreeMap<&UnitAddress, f64> = natural.iter().map(|s| (&s.unit, s.proportion_correct)).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = synthetic
        .iter()
        .filter_map(|s| nat.get(&s.unit).map(|&n| (n, s.proportion_correct)))
        .unzip();
    spearman(&x, &y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model_id: String,
    pub mean_score: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMetricResult {
    pub rows: Vec<MetricRow>,
    pub correlation: SpearmanResult,
}

/// Correlates per-model mean scores with an external per-model metric.
pub fn score_vs_metric(model_scores: &BTreeMap<String, f64>, metric: &BTreeMap<String, f64>) -> Result<ScoreMetricResult> {
    let missing: Vec<&String> = model_scores.keys().filter(|m| !metric.contains_key(*m)).collect();
    if !missing.is_empty() || model_scores.len() != metric.len() {
        return Err(ImiError::Validation(format!(
            "model lists differ; missing metric for {missing:?}"
        )));
    }
    let rows: Vec<MetricRow> = model_scores
        .iter()
        .map(|(m, &s)| MetricRow {
            model_id: m.clone(),
            mean_score: s,
            metric: metric[m],
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.mean_score).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.metric).collect();
    let correlation = spearman(&x, &y)?;
    Ok(ScoreMetricResult { rows, correlation })
}
