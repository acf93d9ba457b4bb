use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::analysis::correlation::{spearman, SpearmanResult};
use crate::analysis::scores::UnitScore;
use crate::model::UnitAddress;
use crate::stimulus::{Condition, Difficulty};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDifficulty {
    pub unit: UnitAddress,
    /// Scores in the order of [`DifficultyReport::levels`].
    pub scores: Vec<f64>,
    pub gap_easy_medium: Option<f64>,
    pub gap_easy_hard: Option<f64>,
    /// Scores strictly decrease across the levels.
    pub ordered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyReport {
    pub condition: Condition,
    pub levels: Vec<Difficulty>,
    pub units: Vec<UnitDifficulty>,
    pub level_means: Vec<f64>,
    pub ordered_fraction: f64,
    pub gap_medium_vs_easy: Option<SpearmanResult>,
    pub gap_hard_vs_easy: Option<SpearmanResult>,
    pub warnings: Vec<String>,
}

/// Per-unit scores across the difficulty levels present, with gaps and the
/// fraction of units whose scores drop at every step. Units lacking any
/// level are excluded and reported in `warnings`.
pub fn difficulty_analysis(scores: &[UnitScore], condition: Condition) -> DifficultyReport {
    let mut levels: BTreeSet<Difficulty> = BTreeSet::new();
    let mut by_unit: BTreeMap<&UnitAddress, BTreeMap<Difficulty, f64>> = BTreeMap::new();
    for s in scores.iter().filter(|s| s.condition == condition) {
        levels.insert(s.difficulty);
        by_unit.entry(&s.unit).or_default().insert(s.difficulty, s.proportion_correct);
    }
    let levels: Vec<Difficulty> = levels.into_iter().collect();
    let mut warnings = Vec::new();
    let mut units = Vec::new();
    for (unit, m) in by_unit {
        if m.len() != levels.len() {
            let missing: Vec<&str> = levels.iter().filter(|l| !m.contains_key(l)).map(|l| l.as_str()).collect();
            warnings.push(format!("{unit} excluded: missing {}", missing.join(", ")));
            continue;
        }
        let scores: Vec<f64> = levels.iter().map(|l| m[l]).collect();
        let easy = m.get(&Difficulty::Easy);
        units.push(UnitDifficulty {
            unit: unit.clone(),
            ordered: scores.windows(2).all(|w| w[0] > w[1]),
            gap_easy_medium: easy.zip(m.get(&Difficulty::Medium)).map(|(e, x)| e - x),
            gap_easy_hard: easy.zip(m.get(&Difficulty::Hard)).map(|(e, x)| e - x),
            scores,
        });
    }
    let n = units.len().max(1) as f64;
    let level_means = (0..levels.len())
        .map(|i| units.iter().map(|u| u.scores[i]).sum::<f64>() / n)
        .collect();
    let ordered_fraction = units.iter().filter(|u| u.ordered).count() as f64 / n;
    let easy_idx = levels.iter().position(|l| *l == Difficulty::Easy);
    let gap_corr = |pick: fn(&UnitDifficulty) -> Option<f64>| -> Option<SpearmanResult> {
        let e = easy_idx?;
        let (x, y): (Vec<f64>, Vec<f64>) = units.iter().filter_map(|u| pick(u).map(|g| (u.scores[e], g))).unzip();
        spearman(&x, &y).ok()
    };
    DifficultyReport {
        condition,
        gap_medium_vs_easy: gap_corr(|u| u.gap_easy_medium),
        gap_hard_vs_easy: gap_corr(|u| u.gap_easy_hard),
        levels,
        level_means,
        ordered_fraction,
        units,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(ch: usize, d: Difficulty, p: f64) -> UnitScore {
        UnitScore {
            unit: UnitAddress::new("m", "l", ch),
            condition: Condition::Natural,
            difficulty: d,
            proportion_correct: p,
            n_responses: 10,
        }
    }

    #[test]
    fn equal_levels_have_zero_gaps() {
        let s: Vec<UnitScore> = Difficulty::ALL.iter().map(|&d| score(0, d, 0.8)).collect();
        let r = difficulty_analysis(&s, Condition::Natural);
        assert_eq!(r.units[0].gap_easy_medium, Some(0.0));
        assert_eq!(r.units[0].gap_easy_hard, Some(0.0));
        assert!(!r.units[0].ordered);
    }

    #[test]
    fn missing_level_excludes_unit() {
        let s = vec![
            score(0, Difficulty::Easy, 0.9),
            score(0, Difficulty::Hard, 0.6),
            score(1, Difficulty::Easy, 0.9),
        ];
        let r = difficulty_analysis(&s, Condition::Natural);
        assert_eq!(r.units.len(), 1);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.units[0].ordered);
    }
}
