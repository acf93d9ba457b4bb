//! The IMI dataset format: `manifest.json`, `responses.jsonl` and an
//! `images/` tree, plus quality partitioning and grouping helpers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::experiment::{Side, TaskKey, TaskStimuli, TrialStimulus, UnitStimuli};
use crate::featviz::{DiversitySearchResult, Sign};
use crate::model::UnitAddress;
use crate::stimulus::{Condition, Difficulty};

pub const IMI_VERSION: u32 = 1;
pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGES_DIR: &str = "images";

/// One real-trial response. Fields are declared in sorted key order so the
/// serialized objects are too.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImiResponseRecord {
    pub channel_index: usize,
    pub choice: Side,
    pub condition: Condition,
    pub confidence: u8,
    pub correct: bool,
    pub difficulty: Difficulty,
    pub failed_checks: Vec<String>,
    pub instance_index: usize,
    pub layer_id: String,
    pub model_id: String,
    pub participant_id: String,
    pub quality_passed: bool,
    pub reaction_time_ms: u64,
}

impl ImiResponseRecord {
    pub fn unit(&self) -> UnitAddress {
        UnitAddress::new(&self.model_id, &self.layer_id, self.channel_index)
    }

    pub fn task(&self) -> TaskKey {
        TaskKey::new(&self.model_id, self.condition, self.difficulty)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRef {
    /// Path below `images/`.
    pub path: String,
    /// Dataset image id for natural images.
    pub source_id: Option<String>,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceEntry {
    pub instance_index: usize,
    pub pos_references: Vec<ImageRef>,
    pub neg_references: Vec<ImageRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryPair {
    pub instance_index: usize,
    pub pos_query: ImageRef,
    pub neg_query: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySet {
    pub difficulty: Difficulty,
    /// `None` for the extreme queries.
    pub percentile: Option<f64>,
    pub pairs: Vec<QueryPair>,
}

/// Optimization record of one synthetic batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatvizSidecar {
    pub sign: Sign,
    pub lambda: f64,
    pub steps: usize,
    pub truncated: bool,
    pub seed: u64,
    pub activations: Vec<f64>,
    pub natural_extreme: f64,
    pub search: DiversitySearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionEntry {
    pub condition: Condition,
    /// Instances served to participants.
    pub active_instances: Vec<usize>,
    pub instances: Vec<InstanceEntry>,
    pub queries: Vec<QuerySet>,
    pub featviz: Vec<FeatvizSidecar>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitEntry {
    pub unit: UnitAddress,
    pub conditions: Vec<ConditionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusManifest {
    pub imi_version: u32,
    pub dataset_id: String,
    pub config_hash: String,
    pub units: Vec<UnitEntry>,
    pub catch: Vec<TrialStimulus>,
    pub practice: Vec<TrialStimulus>,
}

const MANIFEST_KEYS: [&str; 6] = ["imi_version", "dataset_id", "config_hash", "units", "catch", "practice"];

impl StimulusManifest {
    pub fn new(dataset_id: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            imi_version: IMI_VERSION,
            dataset_id: dataset_id.into(),
            config_hash: config_hash.into(),
            units: Vec::new(),
            catch: Vec::new(),
            practice: Vec::new(),
        }
    }

    pub fn models(&self) -> BTreeSet<&str> {
        self.units.iter().map(|u| u.unit.model_id.as_str()).collect()
    }

    /// Tasks this manifest can serve: every (model, condition, difficulty)
    /// with query material.
    pub fn tasks(&self) -> BTreeSet<TaskKey> {
        let mut out = BTreeSet::new();
        for u in &self.units {
            for c in &u.conditions {
                for q in &c.queries {
                    out.insert(TaskKey::new(&u.unit.model_id, c.condition, q.difficulty));
                }
            }
        }
        out
    }

    fn condition(&self, unit: &UnitAddress, condition: Condition) -> Option<&ConditionEntry> {
        self.units
            .iter()
            .find(|u| &u.unit == unit)?
            .conditions
            .iter()
            .find(|c| c.condition == condition)
    }

    /// The trial for one unit instance under a task, if the manifest has it.
    pub fn trial(&self, unit: &UnitAddress, condition: Condition, difficulty: Difficulty, instance: usize) -> Option<TrialStimulus> {
        let c = self.condition(unit, condition)?;
        let refs = c.instances.iter().find(|i| i.instance_index == instance)?;
        let pair = c
            .queries
            .iter()
            .find(|q| q.difficulty == difficulty)?
            .pairs
            .iter()
            .find(|p| p.instance_index == instance)?;
        Some(TrialStimulus {
            pos_references: refs.pos_references.iter().map(|r| r.path.clone()).collect(),
            neg_references: refs.neg_references.iter().map(|r| r.path.clone()).collect(),
            pos_query: pair.pos_query.path.clone(),
            neg_query: pair.neg_query.path.clone(),
        })
    }

    /// Experiment input for one task: the active instances of every unit.
    pub fn task_stimuli(&self, key: &TaskKey) -> Result<TaskStimuli> {
        let mut units = Vec::new();
        for u in self.units.iter().filter(|u| u.unit.model_id == key.model_id) {
            let Some(c) = u.conditions.iter().find(|c| c.condition == key.condition) else {
                continue;
            };
            let instances = c
                .active_instances
                .iter()
                .map(|&k| {
                    self.trial(&u.unit, key.condition, key.difficulty, k)
                        .map(|t| (k, t))
                        .ok_or_else(|| ImiError::Validation(format!("{} lacks instance {k} for {key}", u.unit)))
                })
                .collect::<Result<Vec<_>>>()?;
            units.push(UnitStimuli {
                unit: u.unit.clone(),
                instances,
            });
        }
        if units.is_empty() {
            return Err(ImiError::NotFound(format!("no stimuli for task {key}")));
        }
        Ok(TaskStimuli {
            units,
            catch: self.catch.clone(),
            practice: self.practice.clone(),
        })
    }

    /// Every image path the manifest mentions, sorted.
    pub fn image_paths(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        for t in self.catch.iter().chain(&self.practice) {
            out.extend(t.pos_references.iter().map(String::as_str));
            out.extend(t.neg_references.iter().map(String::as_str));
            out.insert(t.pos_query.as_str());
            out.insert(t.neg_query.as_str());
        }
        for u in &self.units {
            for c in &u.conditions {
                for i in &c.instances {
                    out.extend(i.pos_references.iter().map(|r| r.path.as_str()));
                    out.extend(i.neg_references.iter().map(|r| r.path.as_str()));
                }
                for q in &c.queries {
                    for p in &q.pairs {
                        out.insert(p.pos_query.path.as_str());
                        out.insert(p.neg_query.path.as_str());
                    }
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.imi_version != IMI_VERSION {
            return Err(ImiError::Validation(format!(
                "manifest has imi_version {}, this reader understands {IMI_VERSION}",
                self.imi_version
            )));
        }
        let mut seen = HashSet::new();
        for u in &self.units {
            if !seen.insert(&u.unit) {
                return Err(ImiError::Validation(format!("unit {} listed twice", u.unit)));
            }
            for c in &u.conditions {
                let ids: HashSet<usize> = c.instances.iter().map(|i| i.instance_index).collect();
                if ids.len() != c.instances.len() {
                    return Err(ImiError::Validation(format!("{} {}: duplicate instance ids", u.unit, c.condition)));
                }
                if let Some(k) = c.active_instances.iter().find(|k| !ids.contains(k)) {
                    return Err(ImiError::Validation(format!("{} {}: active instance {k} missing", u.unit, c.condition)));
                }
            }
        }
        Ok(())
    }
}

fn record_offenders(records: &[ImiResponseRecord], manifest: &StimulusManifest) -> Vec<String> {
    let mut offenders = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.quality_passed != r.failed_checks.is_empty() {
            offenders.push(format!("record {}: quality_passed disagrees with failed_checks", i + 1));
        }
        if !(1..=3).contains(&r.confidence) {
            offenders.push(format!("record {}: confidence {}", i + 1, r.confidence));
        }
        if manifest
            .trial(&r.unit(), r.condition, r.difficulty, r.instance_index)
            .is_none()
        {
            offenders.push(format!(
                "record {}: {} {} {} instance {} not in manifest",
                i + 1,
                r.unit(),
                r.condition,
                r.difficulty,
                r.instance_index
            ));
        }
    }
    offenders
}

/// Checks records against a manifest; the error lists every offender.
pub fn validate_records(records: &[ImiResponseRecord], manifest: &StimulusManifest) -> Result<()> {
    manifest.validate()?;
    let offenders = record_offenders(records, manifest);
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(ImiError::Validation(offenders.join("; ")))
    }
}

pub fn responses_jsonl(records: &[ImiResponseRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn manifest_json(manifest: &StimulusManifest) -> Result<String> {
    let mut s = serde_json::to_string_pretty(manifest)?;
    s.push('\n');
    Ok(s)
}

/// Writes a dataset into `dir`, copying every manifest image from `image_root`.
pub fn write_dataset(
    records: &[ImiResponseRecord],
    manifest: &StimulusManifest,
    image_root: &Path,
    dir: &Path,
) -> Result<()> {
    validate_records(records, manifest)?;
    let missing: Vec<&str> = manifest
        .image_paths()
        .into_iter()
        .filter(|p| !image_root.join(p).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(ImiError::Validation(format!(
            "images missing under {}: {}",
            image_root.display(),
            missing.join(", ")
        )));
    }
    fs::create_dir_all(dir).map_err(|e| ImiError::io(dir, e))?;
    let images = dir.join(IMAGES_DIR);
    if image_root != images {
        if images.exists() {
            fs::remove_dir_all(&images).map_err(|e| ImiError::io(&images, e))?;
        }
        for p in manifest.image_paths() {
            let dst = images.join(p);
            if let Some(parent) = dst.parent() {
                fs::create_dir_all(parent).map_err(|e| ImiError::io(parent, e))?;
            }
            fs::copy(image_root.join(p), &dst).map_err(|e| ImiError::io(&dst, e))?;
        }
    }
    write_file(&dir.join(MANIFEST_FILE), &manifest_json(manifest)?)?;
    write_file(&dir.join(RESPONSES_FILE), &responses_jsonl(records)?)?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ImiError::io(path, e))
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<StimulusManifest> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ImiError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| ImiError::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "manifest is not a JSON object".into(),
    })?;
    let version = obj.get("imi_version").and_then(|v| v.as_u64());
    match version {
        None => {
            return Err(ImiError::Validation(format!(
                "{}: imi_version missing; expected {IMI_VERSION}",
                path.display()
            )))
        }
        Some(v) if v != IMI_VERSION as u64 => {
            return Err(ImiError::Validation(format!(
                "{}: imi_version {v} is not supported; this reader understands {IMI_VERSION}",
                path.display()
            )))
        }
        _ => {}
    }
    if let Some(k) = obj.keys().find(|k| !MANIFEST_KEYS.contains(&k.as_str())) {
        return Err(ImiError::Validation(format!(
            "{}: unknown top-level key {k:?} for imi_version {IMI_VERSION}; the file may come from a newer version",
            path.display()
        )));
    }
    let manifest: StimulusManifest = serde_json::from_value(value).map_err(|e| ImiError::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn parse_responses(text: &str, path: &Path) -> Result<Vec<ImiResponseRecord>> {
    let mut out = Vec::new();
    let lines: Vec<&str> = text.split('\n').collect();
    for (i, line) in lines.iter().enumerate() {
        let is_last = i + 1 == lines.len();
        if line.is_empty() {
            if is_last {
                break;
            }
            return Err(ImiError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "empty line".into(),
            });
        }
        let rec: ImiResponseRecord = serde_json::from_str(line).map_err(|e| ImiError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if is_last {
            return Err(ImiError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "final line is not newline-terminated (truncated file?)".into(),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads and fully validates a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<(Vec<ImiResponseRecord>, StimulusManifest)> {
    let mpath = dir.join(MANIFEST_FILE);
    let rpath = dir.join(RESPONSES_FILE);
    let mtext = fs::read_to_string(&mpath).map_err(|e| ImiError::io(&mpath, e))?;
    let rtext = fs::read_to_string(&rpath).map_err(|e| ImiError::io(&rpath, e))?;
    let manifest = parse_manifest(&mtext, &mpath)?;
    let records = parse_responses(&rtext, &rpath)?;
    validate_records(&records, &manifest)?;
    let images = dir.join(IMAGES_DIR);
    let missing: Vec<&str> = manifest
        .image_paths()
        .into_iter()
        .filter(|p| !images.join(p).is_file())
        .collect();
    if !missing.is_empty() {
        return Err(ImiError::Validation(format!(
            "manifest images missing from {}: {}",
            images.display(),
            missing.join(", ")
        )));
    }
    Ok((records, manifest))
}

pub fn images_dir(dir: &Path) -> PathBuf {
    dir.join(IMAGES_DIR)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QualityPartition {
    pub main: Vec<ImiResponseRecord>,
    pub development: Vec<ImiResponseRecord>,
}

/// Splits records into those from sessions that passed every check and the rest.
pub fn partition_quality(records: &[ImiResponseRecord]) -> QualityPartition {
    let (main, development) = records.iter().cloned().partition(|r| r.quality_passed);
    QualityPartition { main, development }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Model,
    Layer,
    Unit,
}

impl GroupKey {
    pub fn of(self, r: &ImiResponseRecord) -> String {
        match self {
            GroupKey::Model => r.model_id.clone(),
            GroupKey::Layer => format!("{}/{}", r.model_id, r.layer_id),
            GroupKey::Unit => r.unit().to_string(),
        }
    }
}

/// Groups records by model, layer or unit.
pub fn group_by(records: &[ImiResponseRecord], key: GroupKey) -> BTreeMap<String, Vec<&ImiResponseRecord>> {
    let mut out: BTreeMap<String, Vec<&ImiResponseRecord>> = BTreeMap::new();
    for r in records {
        out.entry(key.of(r)).or_default().push(r);
    }
    out
}

/// Splits records into (held out, rest) by group membership, so no group
/// straddles both sides.
pub fn split_by_groups<'a>(
    records: &'a [ImiResponseRecord],
    key: GroupKey,
    held_out: &[String],
) -> (Vec<&'a ImiResponseRecord>, Vec<&'a ImiResponseRecord>) {
    let held: HashSet<&str> = held_out.iter().map(String::as_str).collect();
    records.iter().partition(|r| held.contains(key.of(r).as_str()))
}
