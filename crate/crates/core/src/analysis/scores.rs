use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::model::UnitAddress;
use crate::stimulus::{Condition, Difficulty};
use crate::store::ImiResponseRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub unit: UnitAddress,
    pub condition: Condition,
    pub difficulty: Difficulty,
    pub proportion_correct: f64,
    pub n_responses: usize,
}

/// Proportion correct per (unit, condition, difficulty). Pass the main
/// partition unless failed sessions are wanted on purpose.
pub fn unit_scores(records: &[ImiResponseRecord]) -> Vec<UnitScore> {
    let mut groups: BTreeMap<(UnitAddress, Condition, Difficulty), (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = groups.entry((r.unit(), r.condition, r.difficulty)).or_default();
        e.0 += usize::from(r.correct);
        e.1 += 1;
    }
    groups
        .into_iter()
        .map(|((unit, condition, difficulty), (correct, n))| UnitScore {
            unit,
            condition,
            difficulty,
            proportion_correct: correct as f64 / n as f64,
            n_responses: n,
        })
        .collect()
}

pub fn mean_score(scores: &[UnitScore]) -> Result<f64> {
    if scores.is_empty() {
        return Err(ImiError::Degenerate("no unit scores".into()));
    }
    Ok(scores.iter().map(|s| s.proportion_correct).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceLevel {
    pub confidence: u8,
    pub count: usize,
    /// `None` when no response used this level.
    pub proportion_correct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSplit {
    pub model_id: String,
    pub condition: Condition,
    pub levels: Vec<ConfidenceLevel>,
}

/// Proportion correct per confidence rating, per model and condition.
pub fn confidence_split(records: &[ImiResponseRecord]) -> Vec<ConfidenceSplit> {
    let mut groups: BTreeMap<(String, Condition), [(usize, usize); 3]> = BTreeMap::new();
    for r in records.iter().filter(|r| (1..=3).contains(&r.confidence)) {
        let e = groups.entry((r.model_id.clone(), r.condition)).or_default();
        let slot = &mut e[usize::from(r.confidence - 1)];
        slot.0 += usize::from(r.correct);
        slot.1 += 1;
    }
    groups
        .into_iter()
        .map(|((model_id, condition), counts)| ConfidenceSplit {
            model_id,
            condition,
            levels: counts
                .iter()
                .enumerate()
                .map(|(i, &(correct, n))| ConfidenceLevel {
                    confidence: i as u8 + 1,
                    count: n,
                    proportion_correct: (n > 0).then(|| correct as f64 / n as f64),
                })
                .collect(),
        })
        .collect()
}
