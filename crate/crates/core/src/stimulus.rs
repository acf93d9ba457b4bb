//! Stimulus material per unit: exemplar selection, trial assembly,
//! difficulty-specific query selection and the activation histogram.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::model::{ActivationTable, UnitAddress};
use crate::rng;

/// Number of reference images per side in a trial.
pub const REFERENCES_PER_SIDE: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Natural,
    Synthetic,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Natural => "natural",
            Condition::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = ImiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Condition::Natural),
            "synthetic" => Ok(Condition::Synthetic),
            other => Err(ImiError::Config(format!("unknown condition {other:?}"))),
        }
    }
}

/// Which activation percentile the query images come from. References are
/// the same at every level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
    VeryHard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 4] = [
        Difficulty::Easy,
        Difficulty::Medium,
        Difficulty::Hard,
        Difficulty::VeryHard,
    ];

    /// Query percentile; `None` means the extreme (next-after-references) images.
    pub fn query_percentile(self) -> Option<f64> {
        match self {
            Difficulty::Easy => None,
            Difficulty::Medium => Some(99.0),
            Difficulty::Hard => Some(95.0),
            Difficulty::VeryHard => Some(85.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
            Difficulty::VeryHard => "very_hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = ImiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            "very_hard" | "very-hard" => Ok(Difficulty::VeryHard),
            other => Err(ImiError::Config(format!("unknown difficulty {other:?}"))),
        }
    }
}

/// An image id with the unit's activation on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: String,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSelection {
    pub unit: UnitAddress,
    pub t: usize,
    /// Top `9 t` images, descending activation.
    pub pos_reference_candidates: Vec<Exemplar>,
    /// The next `t` images.
    pub pos_queries: Vec<Exemplar>,
    /// Bottom `9 t` images, ascending activation.
    pub neg_reference_candidates: Vec<Exemplar>,
    pub neg_queries: Vec<Exemplar>,
}

/// Image indices sorted by activation; ties by ascending image id.
fn ranked(table: &ActivationTable, column: &[f64], descending: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.image_count()).collect();
    order.sort_by(|&a, &b| {
        let by_act = column[a].total_cmp(&column[b]);
        let by_act = if descending { by_act.reverse() } else { by_act };
        by_act.then_with(|| table.image_ids[a].cmp(&table.image_ids[b]))
    });
    order
}

fn exemplars(table: &ActivationTable, column: &[f64], idx: &[usize]) -> Vec<Exemplar> {
    idx.iter()
        .map(|&i| Exemplar {
            id: table.image_ids[i].clone(),
            activation: column[i],
        })
        .collect()
}

/// Picks reference candidates and extreme queries for one unit.
pub fn select_exemplars(
    table: &ActivationTable,
    unit: &UnitAddress,
    t: usize,
) -> Result<ExemplarSelection> {
    if t == 0 {
        return Err(ImiError::Config("t must be positive".into()));
    }
    let column = table.column(unit)?;
    let per_side = REFERENCES_PER_SIDE * t + t;
    let required = 2 * per_side;
    if table.image_count() < required {
        return Err(ImiError::DatasetTooSmall {
            required,
            available: table.image_count(),
        });
    }
    let desc = ranked(table, &column, true);
    // Tied activations could otherwise put one image on both sides.
    let taken: HashSet<usize> = desc[..per_side].iter().copied().collect();
    let asc: Vec<usize> = ranked(table, &column, false)
        .into_iter()
        .filter(|i| !taken.contains(i))
        .collect();
    let n_ref = REFERENCES_PER_SIDE * t;
    Ok(ExemplarSelection {
        unit: unit.clone(),
        t,
        pos_reference_candidates: exemplars(table, &column, &desc[..n_ref]),
        pos_queries: exemplars(table, &column, &desc[n_ref..per_side]),
        neg_reference_candidates: exemplars(table, &column, &asc[..n_ref]),
        neg_queries: exemplars(table, &column, &asc[n_ref..per_side]),
    })
}

/// One trial's reference material plus its extreme queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssembledInstance {
    pub instance_index: usize,
    /// One image per activation group, most activating group first.
    pub pos_references: Vec<Exemplar>,
    pub neg_references: Vec<Exemplar>,
    pub pos_query: Exemplar,
    pub neg_query: Exemplar,
}

/// A single 2-AFC item for one condition and difficulty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialInstance {
    pub unit: UnitAddress,
    pub condition: Condition,
    pub difficulty: Difficulty,
    pub instance_index: usize,
    pub pos_references: Vec<String>,
    pub neg_references: Vec<String>,
    pub pos_query: String,
    pub neg_query: String,
}

impl AssembledInstance {
    pub fn to_trial(&self, unit: &UnitAddress, condition: Condition, difficulty: Difficulty) -> TrialInstance {
        TrialInstance {
            unit: unit.clone(),
            condition,
            difficulty,
            instance_index: self.instance_index,
            pos_references: self.pos_references.iter().map(|e| e.id.clone()).collect(),
            neg_references: self.neg_references.iter().map(|e| e.id.clone()).collect(),
            pos_query: self.pos_query.id.clone(),
            neg_query: self.neg_query.id.clone(),
        }
    }
}

/// Splits `candidates` (length `9 t`) into 9 contiguous rank groups and deals
/// one member of every group to each of the `t` instances.
fn deal_groups<R: rand::Rng>(candidates: &[Exemplar], t: usize, rng: &mut R) -> Vec<Vec<Exemplar>> {
    let mut per_instance: Vec<Vec<Exemplar>> = vec![Vec::with_capacity(REFERENCES_PER_SIDE); t];
    for group in candidates.chunks(t) {
        let mut order: Vec<usize> = (0..t).collect();
        order.shuffle(rng);
        for (instance, &member) in order.iter().enumerate() {
            per_instance[instance].push(group[member].clone());
        }
    }
    per_instance
}

/// Builds the `t` trial instances of a unit from its exemplar selection.
pub fn assemble_trials(selection: &ExemplarSelection, seed: u64) -> Vec<AssembledInstance> {
    let t = selection.t;
    let mut rng = rng::stream(seed, &format!("assemble-{}", selection.unit));
    let pos = deal_groups(&selection.pos_reference_candidates, t, &mut rng);
    let neg = deal_groups(&selection.neg_reference_candidates, t, &mut rng);
    let mut pos_q: Vec<usize> = (0..t).collect();
    let mut neg_q: Vec<usize> = (0..t).collect();
    pos_q.shuffle(&mut rng);
    neg_q.shuffle(&mut rng);
    pos.into_iter()
        .zip(neg)
        .enumerate()
        .map(|(k, (p, n))| AssembledInstance {
            instance_index: k,
            pos_references: p,
            neg_references: n,
            pos_query: selection.pos_queries[pos_q[k]].clone(),
            neg_query: selection.neg_queries[neg_q[k]].clone(),
        })
        .collect()
}

/// Queries for one difficulty level: `t` positive and `t` negative images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyQueries {
    pub difficulty: Difficulty,
    pub positive: Vec<Exemplar>,
    pub negative: Vec<Exemplar>,
}

/// Zero-based position of the `q`-th nearest-rank percentile in a list of `n`.
pub fn nearest_rank_index(q: f64, n: usize) -> usize {
    let rank = ((q / 100.0) * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// The `t` unreserved images (from `asc`, ascending order) nearest to position
/// `centre`; equal distances prefer the higher position. Result in ascending order.
fn nearest_unreserved(
    table: &ActivationTable,
    asc: &[usize],
    centre: usize,
    t: usize,
    reserved: &HashSet<&str>,
) -> Vec<usize> {
    let mut free: Vec<usize> = (0..asc.len())
        .filter(|&p| !reserved.contains(table.image_ids[asc[p]].as_str()))
        .collect();
    free.sort_by(|&a, &b| {
        let da = a.abs_diff(centre);
        let db = b.abs_diff(centre);
        da.cmp(&db).then(b.cmp(&a))
    });
    let mut chosen: Vec<usize> = free.into_iter().take(t).collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|p| asc[p]).collect()
}

/// Query images for a difficulty level. `easy` returns the extreme queries
/// of [`select_exemplars`]; other levels take the unreserved images nearest
/// the level's percentile (negatives mirror it at `100 - q`).
pub fn difficulty_queries(
    table: &ActivationTable,
    unit: &UnitAddress,
    level: Difficulty,
    t: usize,
    reserved: &[String],
) -> Result<DifficultyQueries> {
    let Some(q) = level.query_percentile() else {
        let sel = select_exemplars(table, unit, t)?;
        return Ok(DifficultyQueries {
            difficulty: level,
            positive: sel.pos_queries,
            negative: sel.neg_queries,
        });
    };
    let column = table.column(unit)?;
    let (lo, hi) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return Err(ImiError::Degenerate(format!(
            "all activations of {unit} are equal; percentiles are undefined"
        )));
    }
    let reserved: HashSet<&str> = reserved.iter().map(String::as_str).collect();
    let available = table
        .image_ids
        .iter()
        .filter(|id| !reserved.contains(id.as_str()))
        .count();
    if available < 2 * t {
        return Err(ImiError::DatasetTooSmall {
            required: 2 * t + reserved.len(),
            available: table.image_count(),
        });
    }
    let asc = ranked(table, &column, false);
    let n = asc.len();
    let pos_idx = nearest_unreserved(table, &asc, nearest_rank_index(q, n), t, &reserved);
    let mut taken = reserved.clone();
    for &i in &pos_idx {
        taken.insert(table.image_ids[i].as_str());
    }
    let neg_idx = nearest_unreserved(table, &asc, nearest_rank_index(100.0 - q, n), t, &taken);
    // Positives listed most activating first, negatives least activating first.
    let mut positive = exemplars(table, &column, &pos_idx);
    positive.reverse();
    Ok(DifficultyQueries {
        difficulty: level,
        positive,
        negative: exemplars(table, &column, &neg_idx),
    })
}

/// Histogram of a unit's activations scaled by the largest magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationHistogram {
    pub unit: UnitAddress,
    pub scale: f64,
    /// `bins + 1` edges spanning `[-1, 1]`.
    pub edges: Vec<f64>,
    /// Fraction of images per bin; sums to one.
    pub mass: Vec<f64>,
    /// Scaled nearest-rank percentiles `(q, value)` for q in 5, 15, 85, 95.
    pub markers: Vec<(f64, f64)>,
}

pub fn scaled_activations(column: &[f64]) -> Result<(f64, Vec<f64>)> {
    let scale = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(ImiError::Degenerate("all activations are zero".into()));
    }
    Ok((scale, column.iter().map(|v| v / scale).collect()))
}

pub fn activation_histogram(
    table: &ActivationTable,
    unit: &UnitAddress,
    bins: usize,
) -> Result<ActivationHistogram> {
    if bins == 0 {
        return Err(ImiError::Config("histogram needs at least one bin".into()));
    }
    let (scale, scaled) = scaled_activations(&table.column(unit)?)?;
    let width = 2.0 / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| -1.0 + i as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    for &v in &scaled {
        let b = (((v + 1.0) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[b] += 1;
    }
    let n = scaled.len() as f64;
    let mut sorted = scaled.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let markers = [5.0, 15.0, 85.0, 95.0]
        .iter()
        .map(|&q| (q, sorted[nearest_rank_index(q, sorted.len())]))
        .collect();
    Ok(ActivationHistogram {
        unit: unit.clone(),
        scale,
        edges,
        mass: counts.into_iter().map(|c| c as f64 / n).collect(),
        markers,
    })
}
