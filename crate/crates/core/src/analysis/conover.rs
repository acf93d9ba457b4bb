//! Kruskal-Wallis with Conover-Iman pairwise comparisons and Holm's
//! step-down adjustment.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::analysis::ranks::average_ranks;
use crate::error::{ImiError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: String,
    pub b: String,
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConoverHolm {
    pub kruskal_h: f64,
    pub kruskal_p: f64,
    pub df: usize,
    pub comparisons: Vec<PairwiseComparison>,
}

impl ConoverHolm {
    pub fn pair(&self, a: &str, b: &str) -> Option<&PairwiseComparison> {
        self.comparisons
            .iter()
            .find(|c| (c.a == a && c.b == b) || (c.a == b && c.b == a))
    }
}

/// `*`, `**`, `***` at p below .05, .01, .001; empty otherwise.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Holm step-down adjusted p-values, in input order.
pub fn holm_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (j, &i) in order.iter().enumerate() {
        let v = ((m - j) as f64 * p[i]).min(1.0);
        running = running.max(v);
        out[i] = running;
    }
    out
}

struct RankSummary {
    mean_ranks: Vec<f64>,
    sizes: Vec<usize>,
    s2: f64,
    h: f64,
    n: usize,
}

fn summarize(groups: &[&[f64]]) -> RankSummary {
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len();
    let ranks = average_ranks(&pooled);
    let mut mean_ranks = Vec::with_capacity(groups.len());
    let mut offset = 0;
    let mut between = 0.0;
    for g in groups {
        let sum: f64 = ranks[offset..offset + g.len()].iter().sum();
        between += sum * sum / g.len() as f64;
        mean_ranks.push(sum / g.len() as f64);
        offset += g.len();
    }
    let nf = n as f64;
    let c = nf * (nf + 1.0) * (nf + 1.0) / 4.0;
    let s2 = (ranks.iter().map(|r| r * r).sum::<f64>() - c) / (nf - 1.0);
    let h = if s2 > 0.0 { (between - c) / s2 } else { 0.0 };
    RankSummary {
        mean_ranks,
        sizes: groups.iter().map(|g| g.len()).collect(),
        s2,
        h,
        n,
    }
}

/// Conover-Iman t statistic for groups `i` and `j`; infinite when the
/// residual variance vanishes with distinct mean ranks, zero when the
/// mean ranks agree.
fn conover_t(s: &RankSummary, i: usize, j: usize) -> f64 {
    let k = s.sizes.len() as f64;
    let diff = (s.mean_ranks[i] - s.mean_ranks[j]).abs();
    if diff < 1e-12 || s.s2 <= 0.0 {
        return 0.0;
    }
    let resid = s.s2 * (s.n as f64 - 1.0 - s.h) / (s.n as f64 - k);
    let se2 = resid * (1.0 / s.sizes[i] as f64 + 1.0 / s.sizes[j] as f64);
    if se2 <= 1e-300 {
        return f64::INFINITY;
    }
    diff / se2.sqrt()
}

/// Pairwise Conover-Iman statistic between groups `i` and `j` of `groups`.
pub fn conover_statistic(groups: &[&[f64]], i: usize, j: usize) -> f64 {
    conover_t(&summarize(groups), i, j)
}

/// Compares every pair of named groups.
pub fn conover_holm(groups: &[(String, Vec<f64>)]) -> Result<ConoverHolm> {
    if groups.len() < 2 {
        return Err(ImiError::Degenerate("need at least two groups".into()));
    }
    if let Some((name, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
        return Err(ImiError::Degenerate(format!("group {name} has fewer than two values")));
    }
    if groups.iter().flat_map(|(_, v)| v).any(|x| !x.is_finite()) {
        return Err(ImiError::Numeric("non-finite score".into()));
    }
    let slices: Vec<&[f64]> = groups.iter().map(|(_, v)| v.as_slice()).collect();
    let s = summarize(&slices);
    let k = groups.len();
    let df = s.n - k;
    let t_dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| ImiError::Numeric(e.to_string()))?;
    let kw_p = if s.s2 > 0.0 {
        let chi = ChiSquared::new((k - 1) as f64).map_err(|e| ImiError::Numeric(e.to_string()))?;
        chi.sf(s.h)
    } else {
        1.0
    };

    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let t = conover_t(&s, i, j);
            let p = if t == 0.0 {
                1.0
            } else if t.is_infinite() {
                0.0
            } else {
                (2.0 * t_dist.sf(t)).min(1.0)
            };
            pairs.push((i, j, t, p));
        }
    }
    let raw: Vec<f64> = pairs.iter().map(|p| p.3).collect();
    let adjusted = holm_adjust(&raw);
    let comparisons = pairs
        .into_iter()
        .zip(adjusted)
        .map(|((i, j, t, p), adj)| PairwiseComparison {
            a: groups[i].0.clone(),
            b: groups[j].0.clone(),
            statistic: t,
            p_raw: p,
            p_adjusted: adj,
            stars: stars(adj).to_string(),
        })
        .collect();
    Ok(ConoverHolm {
        kruskal_h: s.h,
        kruskal_p: kw_p,
        df,
        comparisons,
    })
}
