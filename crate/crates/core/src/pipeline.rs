//! Stimulus preparation: activation table, exemplars, difficulty queries,
//! feature visualizations, catch and practice trials, written as a manifest
//! plus PNG tree.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{write_png, ImageDataset};
use crate::error::{ImiError, Result};
use crate::experiment::TrialStimulus;
use crate::featviz::{
    search_diversity, DiversitySearchResult, FeatureVizConfig, Sign, SynthesisResult, DEFAULT_MAX_EXPONENTIAL_PROBES,
};
use crate::model::{record_activation_table, ActivationTable, ModelBackend, Tensor, UnitAddress};
use crate::par;
use crate::stimulus::{assemble_trials, difficulty_queries, select_exemplars, AssembledInstance, Condition, Difficulty, Exemplar};
use crate::store::{
    ConditionEntry, FeatvizSidecar, ImageRef, InstanceEntry, QueryPair, QuerySet, StimulusManifest, UnitEntry,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    /// Trial instances built per unit.
    pub instances: usize,
    /// Leading instances served to participants.
    pub active_instances: usize,
    pub conditions: Vec<Condition>,
    pub difficulties: Vec<Difficulty>,
    pub catch_trials: usize,
    pub practice_trials: usize,
    pub seed: u64,
    pub featviz: FeatureVizConfig,
    pub max_exponential_probes: usize,
    /// Retries, each with four times the step budget, for units whose
    /// undiversified batch stays weaker than the data.
    #[serde(default)]
    pub budget_escalations: usize,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            instances: 4,
            active_instances: 4,
            conditions: vec![Condition::Natural],
            difficulties: vec![Difficulty::Easy],
            catch_trials: 5,
            practice_trials: 5,
            seed: 0,
            featviz: FeatureVizConfig::default(),
            max_exponential_probes: DEFAULT_MAX_EXPONENTIAL_PROBES,
            budget_escalations: 0,
        }
    }
}

/// Output of [`prepare_stimuli`]: the manifest and the images it references.
pub struct PreparedStimuli {
    pub manifest: StimulusManifest,
    pub table: ActivationTable,
    pub images: Vec<(String, Tensor)>,
}

impl PreparedStimuli {
    /// Writes every image as PNG below `root`.
    pub fn write_images(&self, root: &Path) -> Result<()> {
        par::try_map_slice(&self.images, |(path, img)| {
            let dst = root.join(path);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| ImiError::io(parent, e))?;
            }
            write_png(img, &dst)
        })?;
        Ok(())
    }
}

struct Builder<'a> {
    dataset: &'a ImageDataset,
    images: Vec<(String, Tensor)>,
}

impl Builder<'_> {
    fn natural(&mut self, path: String, e: &Exemplar) -> Result<ImageRef> {
        let idx = self
            .dataset
            .index_of(&e.id)
            .ok_or_else(|| ImiError::NotFound(format!("image {}", e.id)))?;
        self.images.push((path.clone(), self.dataset.images[idx].clone()));
        Ok(ImageRef {
            path,
            source_id: Some(e.id.clone()),
            activation: e.activation,
        })
    }
}

fn refs_paths(refs: &[ImageRef]) -> Vec<String> {
    refs.iter().map(|r| r.path.clone()).collect()
}

struct UnitMaterial {
    entry: UnitEntry,
    images: Vec<(String, Tensor)>,
    assembled: Vec<AssembledInstance>,
}

fn prepare_unit<B: ModelBackend + ?Sized>(
    backend: &B,
    dataset: &ImageDataset,
    table: &ActivationTable,
    unit: &UnitAddress,
    cfg: &PrepareConfig,
) -> Result<UnitMaterial> {
    let key = unit.key();
    let t = cfg.instances;
    let selection = select_exemplars(table, unit, t)?;
    let assembled = assemble_trials(&selection, cfg.seed);
    let mut b = Builder {
        dataset,
        images: Vec::new(),
    };

    let mut reserved: Vec<String> = selection
        .pos_reference_candidates
        .iter()
        .chain(&selection.neg_reference_candidates)
        .map(|e| e.id.clone())
        .collect();
    reserved.extend(selection.pos_queries.iter().chain(&selection.neg_queries).map(|e| e.id.clone()));

    // Query images are natural in both conditions.
    let mut query_sets = Vec::new();
    for &level in &cfg.difficulties {
        let (pos, neg): (Vec<Exemplar>, Vec<Exemplar>) = if level == Difficulty::Easy {
            (
                assembled.iter().map(|a| a.pos_query.clone()).collect(),
                assembled.iter().map(|a| a.neg_query.clone()).collect(),
            )
        } else {
            let q = difficulty_queries(table, unit, level, t, &reserved)?;
            (q.positive, q.negative)
        };
        let mut pairs = Vec::with_capacity(t);
        for (k, (p, n)) in pos.iter().zip(&neg).enumerate() {
            pairs.push(QueryPair {
                instance_index: k,
                pos_query: b.natural(format!("{key}/query/{level}/i{k}_pos.png"), p)?,
                neg_query: b.natural(format!("{key}/query/{level}/i{k}_neg.png"), n)?,
            });
        }
        query_sets.push(QuerySet {
            difficulty: level,
            percentile: level.query_percentile(),
            pairs,
        });
    }

    let mut conditions = Vec::new();
    for &condition in &cfg.conditions {
        let (instances, featviz) = match condition {
            Condition::Natural => {
                let mut inst = Vec::with_capacity(t);
                for a in &assembled {
                    let k = a.instance_index;
                    let pos = a
                        .pos_references
                        .iter()
                        .enumerate()
                        .map(|(r, e)| b.natural(format!("{key}/natural/i{k}/pos_ref_{r}.png"), e))
                        .collect::<Result<Vec<_>>>()?;
                    let neg = a
                        .neg_references
                        .iter()
                        .enumerate()
                        .map(|(r, e)| b.natural(format!("{key}/natural/i{k}/neg_ref_{r}.png"), e))
                        .collect::<Result<Vec<_>>>()?;
                    inst.push(InstanceEntry {
                        instance_index: k,
                        pos_references: pos,
                        neg_references: neg,
                    });
                }
                (inst, Vec::new())
            }
            Condition::Synthetic => {
                let column = table.column(unit)?;
                let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = column.iter().copied().fold(f64::INFINITY, f64::min);
                let mut sidecars = Vec::new();
                let mut sides: Vec<Vec<ImageRef>> = Vec::new();
                for (sign, extreme, role) in [(Sign::Max, max, "pos"), (Sign::Min, min, "neg")] {
                    let (search, batch) = escalating_search(backend, unit, sign, extreme, cfg)
                        .map_err(|e| match e {
                            ImiError::WeakerThanData(m) => ImiError::WeakerThanData(format!("{unit} ({role}): {m}")),
                            other => other,
                        })?;
                    let refs: Vec<ImageRef> = batch
                        .images
                        .iter()
                        .zip(&batch.activations)
                        .enumerate()
                        .map(|(r, (img, &activation))| {
                            let path = format!("{key}/synthetic/{role}_ref_{r}.png");
                            b.images.push((path.clone(), img.clone()));
                            ImageRef {
                                path,
                                source_id: None,
                                activation,
                            }
                        })
                        .collect();
                    sidecars.push(FeatvizSidecar {
                        sign,
                        lambda: search.lambda_star,
                        steps: batch.steps,
                        truncated: batch.truncated,
                        seed: batch.seed,
                        activations: batch.activations.clone(),
                        natural_extreme: extreme,
                        search,
                    });
                    sides.push(refs);
                }
                let inst = (0..t)
                    .map(|k| InstanceEntry {
                        instance_index: k,
                        pos_references: sides[0].clone(),
                        neg_references: sides[1].clone(),
                    })
                    .collect();
                (inst, sidecars)
            }
        };
        conditions.push(ConditionEntry {
            condition,
            active_instances: (0..cfg.active_instances).collect(),
            instances,
            queries: query_sets.clone(),
            featviz,
        });
    }
    Ok(UnitMaterial {
        entry: UnitEntry {
            unit: unit.clone(),
            conditions,
        },
        images: b.images,
        assembled,
    })
}

/// Obvious trials: `catch` shows a query identical to one of its own
/// references; `practice` uses the most extreme images of a unit as queries.
fn obvious_trials(
    dataset: &ImageDataset,
    materials: &[UnitMaterial],
    count: usize,
    prefix: &str,
    identical: bool,
    images: &mut Vec<(String, Tensor)>,
) -> Result<Vec<TrialStimulus>> {
    let mut b = Builder {
        dataset,
        images: Vec::new(),
    };
    let mut out = Vec::with_capacity(count);
    for c in 0..count {
        let m = &materials[c % materials.len()];
        let a = &m.assembled[(c / materials.len()) % m.assembled.len()];
        let dir = format!("{prefix}/{prefix}{c}");
        let pos = a
            .pos_references
            .iter()
            .enumerate()
            .map(|(r, e)| b.natural(format!("{dir}/pos_ref_{r}.png"), e))
            .collect::<Result<Vec<_>>>()?;
        let neg = a
            .neg_references
            .iter()
            .enumerate()
            .map(|(r, e)| b.natural(format!("{dir}/neg_ref_{r}.png"), e))
            .collect::<Result<Vec<_>>>()?;
        let (pq, nq) = if identical {
            (&a.pos_references[0], &a.neg_references[0])
        } else {
            let other = &m.assembled[(c / materials.len() + 1) % m.assembled.len()];
            (&other.pos_references[0], &other.neg_references[0])
        };
        let pos_query = b.natural(format!("{dir}/query_a.png"), pq)?;
        let neg_query = b.natural(format!("{dir}/query_b.png"), nq)?;
        out.push(TrialStimulus {
            pos_references: refs_paths(&pos),
            neg_references: refs_paths(&neg),
            pos_query: pos_query.path,
            neg_query: neg_query.path,
        });
    }
    images.extend(b.images);
    Ok(out)
}

fn escalating_search<B: ModelBackend + ?Sized>(
    backend: &B,
    unit: &UnitAddress,
    sign: Sign,
    extreme: f64,
    cfg: &PrepareConfig,
) -> Result<(DiversitySearchResult, SynthesisResult)> {
    let mut fv = cfg.featviz.clone();
    let mut attempt = 0;
    loop {
        match search_diversity(backend, unit, sign, extreme, &fv, cfg.max_exponential_probes) {
            Err(ImiError::WeakerThanData(_)) if attempt < cfg.budget_escalations => {
                attempt += 1;
                fv.min_steps *= 4;
                fv.max_steps *= 4;
            }
            other => return other,
        }
    }
}

/// Builds every stimulus for `units`, in parallel across units.
pub fn prepare_stimuli<B: ModelBackend + ?Sized>(
    backend: &B,
    dataset: &ImageDataset,
    units: &[UnitAddress],
    cfg: &PrepareConfig,
    config_hash: &str,
) -> Result<PreparedStimuli> {
    if units.is_empty() {
        return Err(ImiError::Config("no units to prepare".into()));
    }
    if cfg.instances == 0 || cfg.active_instances == 0 || cfg.active_instances > cfg.instances {
        return Err(ImiError::Config(format!(
            "need 0 < active instances ({}) <= instances ({})",
            cfg.active_instances, cfg.instances
        )));
    }
    if cfg.conditions.is_empty() || cfg.difficulties.is_empty() {
        return Err(ImiError::Config("at least one condition and difficulty required".into()));
    }
    if cfg.conditions.contains(&Condition::Synthetic) {
        cfg.featviz.validate()?;
    }
    let table = record_activation_table(backend, dataset, units)?;
    let materials = par::try_map_slice(units, |u| prepare_unit(backend, dataset, &table, u, cfg))?;

    let mut images = Vec::new();
    let catch = obvious_trials(dataset, &materials, cfg.catch_trials, "catch", true, &mut images)?;
    let practice = obvious_trials(dataset, &materials, cfg.practice_trials, "practice", false, &mut images)?;
    let mut manifest = StimulusManifest::new(&dataset.id, config_hash);
    manifest.catch = catch;
    manifest.practice = practice;
    for m in materials {
        images.extend(m.images);
        manifest.units.push(m.entry);
    }
    images.sort_by(|a, b| a.0.cmp(&b.0));
    images.dedup_by(|a, b| a.0 == b.0);
    Ok(PreparedStimuli {
        manifest,
        table,
        images,
    })
}
