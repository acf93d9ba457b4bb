use std::collections::BTreeMap;

use imi_core::analysis::{
    bootstrap_ci, confidence_split, conover_holm, cross_condition_correlation, difficulty_analysis,
    layer_position_analysis, local_contrast, power_analysis, predictor_sparseness, spearman, unit_maps,
    unit_scores, BootstrapCI, ConoverHolm, LayerPositionResult, SpearmanResult, UnitScore,
};
use imi_core::model::{ModelBackend, UnitAddress};
use imi_core::sampler::eligible_layers_with;
use imi_core::stimulus::{Condition, Difficulty};
use imi_core::store::{self, partition_quality, ImiResponseRecord, RESPONSES_FILE};
use serde::Serialize;

use crate::error::require;
use crate::{backend, dataset, write_report, CliError, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub condition: Condition,
    pub difficulty: Difficulty,
    pub n_units: usize,
    pub ci: Option<BootstrapCI>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelComparison {
    pub condition: Condition,
    pub difficulty: Difficulty,
    pub models: Vec<String>,
    pub result: Option<ConoverHolm>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerPosition {
    pub condition: Condition,
    pub difficulty: Difficulty,
    pub result: Option<LayerPositionResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCondition {
    pub model_id: String,
    pub difficulty: Difficulty,
    pub result: Option<SpearmanResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictorRow {
    pub unit: UnitAddress,
    pub local_contrast: f64,
    pub pixel_sparseness: f64,
    pub channel_sparseness: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictorCorrelation {
    pub condition: Condition,
    pub difficulty: Difficulty,
    pub predictor: String,
    pub result: Option<SpearmanResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Predictors {
    pub units: Vec<PredictorRow>,
    pub correlations: Vec<PredictorCorrelation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisIndex {
    pub records: usize,
    pub main: usize,
    pub development: usize,
    pub reports: Vec<String>,
}

pub const REPORTS: [&str; 9] = [
    "unit_scores.json",
    "model_summary.json",
    "model_comparison.json",
    "layer_position.json",
    "cross_condition.json",
    "difficulty.json",
    "confidence.json",
    "predictors.json",
    "power.json",
];

fn note<T>(r: imi_core::Result<T>) -> (Option<T>, Option<String>) {
    match r {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

fn tasks_of(scores: &[UnitScore]) -> Vec<(Condition, Difficulty)> {
    let mut t: Vec<_> = scores.iter().map(|s| (s.condition, s.difficulty)).collect();
    t.sort();
    t.dedup();
    t
}

/// Reads `out/dataset` and writes every report to `out/analysis`.
pub fn run(cfg: &RunConfig) -> Result<AnalysisIndex, CliError> {
    let dir = cfg.dataset_dir();
    require(dir.join(RESPONSES_FILE), "simulate")?;
    let (records, _) = store::read_dataset(&dir)?;
    let wanted = |r: &&ImiResponseRecord| {
        cfg.stimuli.conditions.contains(&r.condition) && cfg.stimuli.difficulties.contains(&r.difficulty)
    };
    let records: Vec<ImiResponseRecord> = records.iter().filter(wanted).cloned().collect();
    let part = partition_quality(&records);
    if part.main.is_empty() {
        return Err(CliError::Run(format!(
            "{} holds no quality-passing responses for the configured tasks",
            dir.display()
        )));
    }
    let hash = cfg.hash();
    let out = cfg.analysis_dir();
    crate::fresh_dir(&out)?;
    let scores = unit_scores(&part.main);
    let tasks = tasks_of(&scores);
    let models: Vec<String> = {
        let mut m: Vec<String> = scores.iter().map(|s| s.unit.model_id.clone()).collect();
        m.sort();
        m.dedup();
        m
    };
    let of = |model: &str, c: Condition, d: Difficulty| -> Vec<UnitScore> {
        scores
            .iter()
            .filter(|s| s.unit.model_id == model && s.condition == c && s.difficulty == d)
            .cloned()
            .collect()
    };

    write_report(&out.join(REPORTS[0]), &hash, &scores)?;

    let mut summaries = Vec::new();
    for model in &models {
        for &(c, d) in &tasks {
            let values: Vec<f64> = of(model, c, d).iter().map(|s| s.proportion_correct).collect();
            if values.is_empty() {
                continue;
            }
            let seed = cfg.stream_seed(&format!("bootstrap/{model}/{c}/{d}"));
            let (ci, note) = note(bootstrap_ci(&values, cfg.analysis.bootstrap_resamples, seed));
            summaries.push(ModelSummary {
                model_id: model.clone(),
                condition: c,
                difficulty: d,
                n_units: values.len(),
                ci,
                note,
            });
        }
    }
    write_report(&out.join(REPORTS[1]), &hash, &summaries)?;

    let comparisons: Vec<ModelComparison> = tasks
        .iter()
        .map(|&(c, d)| {
            let groups: Vec<(String, Vec<f64>)> = models
                .iter()
                .map(|m| (m.clone(), of(m, c, d).iter().map(|s| s.proportion_correct).collect::<Vec<_>>()))
                .filter(|(_, v)| !v.is_empty())
                .collect();
            let names = groups.iter().map(|g| g.0.clone()).collect();
            let (result, note) = if groups.len() < 2 {
                (None, Some("needs scores from at least two models".to_string()))
            } else {
                note(conover_holm(&groups))
            };
            ModelComparison {
                condition: c,
                difficulty: d,
                models: names,
                result,
                note,
            }
        })
        .collect();
    write_report(&out.join(REPORTS[2]), &hash, &comparisons)?;

    let net = backend(cfg);
    let spec = net.spec();
    let eligible = eligible_layers_with(spec, cfg.units.exclusion, cfg.units.allowlist.as_deref())?;
    let positions: Vec<LayerPosition> = tasks
        .iter()
        .map(|&(c, d)| {
            let (result, note) = if models.iter().any(|m| *m != spec.model_id) {
                (None, Some(format!("only {} has a known layer order", spec.model_id)))
            } else {
                note(layer_position_analysis(&of(&spec.model_id, c, d), &spec.model_id, &eligible))
            };
            LayerPosition {
                condition: c,
                difficulty: d,
                result,
                note,
            }
        })
        .collect();
    write_report(&out.join(REPORTS[3]), &hash, &positions)?;

    let mut cross = Vec::new();
    for model in &models {
        for d in Difficulty::ALL {
            let nat = of(model, Condition::Natural, d);
            let syn = of(model, Condition::Synthetic, d);
            if nat.is_empty() && syn.is_empty() {
                continue;
            }
            let (result, note) = if nat.is_empty() || syn.is_empty() {
                (None, Some("needs both natural and synthetic scores".to_string()))
            } else {
                note(cross_condition_correlation(&nat, &syn))
            };
            cross.push(CrossCondition {
                model_id: model.clone(),
                difficulty: d,
                result,
                note,
            });
        }
    }
    write_report(&out.join(REPORTS[4]), &hash, &cross)?;

    let mut conditions: Vec<Condition> = tasks.iter().map(|t| t.0).collect();
    conditions.dedup();
    let difficulty: Vec<_> = conditions.iter().map(|&c| difficulty_analysis(&scores, c)).collect();
    write_report(&out.join(REPORTS[5]), &hash, &difficulty)?;

    write_report(&out.join(REPORTS[6]), &hash, &confidence_split(&part.main))?;

    let predictors = predictors(cfg, &net, &scores, &tasks)?;
    write_report(&out.join(REPORTS[7]), &hash, &predictors)?;

    write_report(&out.join(REPORTS[8]), &hash, &power_analysis(&cfg.analysis.power)?)?;

    let index = AnalysisIndex {
        records: records.len(),
        main: part.main.len(),
        development: part.development.len(),
        reports: REPORTS.iter().map(|s| s.to_string()).collect(),
    };
    write_report(&out.join("index.json"), &hash, &index)?;
    Ok(index)
}

/// Local contrast and sparseness of every scored reference-model unit, and
/// their rank correlation with the unit scores.
fn predictors(
    cfg: &RunConfig,
    net: &dyn ModelBackend,
    scores: &[UnitScore],
    tasks: &[(Condition, Difficulty)],
) -> Result<Predictors, CliError> {
    let data = dataset(cfg, net)?;
    let mut units: Vec<UnitAddress> = scores
        .iter()
        .filter(|s| s.unit.model_id == net.spec().model_id)
        .map(|s| s.unit.clone())
        .collect();
    units.sort();
    units.dedup();
    let mut rows = Vec::with_capacity(units.len());
    for unit in units {
        let (maps, h, w) = unit_maps(net, &data, &unit)?;
        let sparse = predictor_sparseness(&maps)?;
        rows.push(PredictorRow {
            local_contrast: local_contrast(&maps, h, w)?,
            pixel_sparseness: sparse.pixel,
            channel_sparseness: sparse.channel,
            unit,
        });
    }
    let by_unit: BTreeMap<&UnitAddress, &PredictorRow> = rows.iter().map(|r| (&r.unit, r)).collect();
    let mut correlations = Vec::new();
    for &(c, d) in tasks {
        let pairs: Vec<(f64, &PredictorRow)> = scores
            .iter()
            .filter(|s| s.condition == c && s.difficulty == d)
            .filter_map(|s| by_unit.get(&s.unit).map(|r| (s.proportion_correct, *r)))
            .collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let metrics: [(&str, fn(&PredictorRow) -> f64); 3] = [
            ("local_contrast", |r| r.local_contrast),
            ("pixel_sparseness", |r| r.pixel_sparseness),
            ("channel_sparseness", |r| r.channel_sparseness),
        ];
        for (name, f) in metrics {
            let x: Vec<f64> = pairs.iter().map(|p| f(p.1)).collect();
            let (result, note) = note(spearman(&x, &y));
            correlations.push(PredictorCorrelation {
                condition: c,
                difficulty: d,
                predictor: name.to_string(),
                result,
                note,
            });
        }
    }
    Ok(Predictors { units: rows, correlations })
}
