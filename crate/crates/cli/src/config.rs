//! The run configuration: a sectioned TOML file plus command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use imi_core::analysis::PowerParams;
use imi_core::experiment::{QualityThresholds, RecruitmentPlan, TaskKey};
use imi_core::featviz::{FeatureVizConfig, DEFAULT_MAX_EXPONENTIAL_PROBES};
use imi_core::pipeline::PrepareConfig;
use imi_core::rng::derive_seed;
use imi_core::sampler::SamplingConfig;
use imi_core::stimulus::{Condition, Difficulty};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub units: UnitsSection,
    #[serde(default)]
    pub stimuli: StimuliSection,
    #[serde(default)]
    pub featviz: FeatvizSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub quality: QualityThresholds,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub serve: ServeSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Output root; relative paths resolve against the config file.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Root of every random stream. Required, here or via `--seed`.
    pub seed: Option<u64>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    ReferenceCnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub backend: Backend,
    /// Weight seed; derived from the run seed when absent.
    pub seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            backend: Backend::ReferenceCnn,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    /// Procedurally generated images.
    Toy {
        #[serde(default = "default_toy_size")]
        size: usize,
        seed: Option<u64>,
    },
    /// A directory of square PNGs at the model's input size.
    PngDir { path: PathBuf },
}

fn default_toy_size() -> usize {
    600
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection::Toy {
            size: default_toy_size(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitsSection {
    pub n_units: usize,
    /// Leading convolutions never sampled.
    pub exclusion: usize,
    pub allowlist: Option<Vec<String>>,
}

impl Default for UnitsSection {
    fn default() -> Self {
        Self {
            n_units: 12,
            exclusion: 1,
            allowlist: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StimuliSection {
    pub instances: usize,
    pub active_instances: usize,
    pub conditions: Vec<Condition>,
    pub difficulties: Vec<Difficulty>,
    pub catch_trials: usize,
    pub practice_trials: usize,
}

impl Default for StimuliSection {
    fn default() -> Self {
        Self {
            instances: 4,
            active_instances: 4,
            conditions: vec![Condition::Natural, Condition::Synthetic],
            difficulties: vec![Difficulty::Easy],
            catch_trials: 5,
            practice_trials: 5,
        }
    }
}

/// Desk-scale optimisation budget; raise for paper-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatvizSection {
    pub batch_size: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub window: usize,
    pub step_size: f64,
    pub init_noise: f64,
    pub max_exponential_probes: usize,
    /// Retries at four times the step budget for units the budget cannot
    /// push past their natural extreme.
    pub budget_escalations: usize,
}

impl Default for FeatvizSection {
    fn default() -> Self {
        Self {
            batch_size: 9,
            min_steps: 100,
            max_steps: 400,
            window: 10,
            step_size: 1.0,
            init_noise: 0.1,
            max_exponential_probes: DEFAULT_MAX_EXPONENTIAL_PROBES,
            budget_escalations: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSection {
    pub responses_per_instance: usize,
    /// Picked to split the response total evenly when absent.
    pub real_trials_per_session: Option<usize>,
    pub catch_trials_per_session: usize,
}

impl Default for PlanSection {
    fn default() -> Self {
        Self {
            responses_per_instance: 3,
            real_trials_per_session: None,
            catch_trials_per_session: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub accuracy: f64,
    /// Keyed `condition/difficulty` or by difficulty alone.
    pub task_accuracy: BTreeMap<String, f64>,
    pub catch_accuracy: f64,
    pub failure_rate: f64,
    pub wave_size: usize,
    pub max_sessions: usize,
    pub epoch_ms: i64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            accuracy: 0.8,
            task_accuracy: BTreeMap::new(),
            catch_accuracy: 0.95,
            failure_rate: 0.1,
            wave_size: 9,
            max_sessions: 100_000,
            epoch_ms: 1_700_000_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub bind: String,
    /// Falls back to the `IMI_ADMIN_TOKEN` environment variable.
    pub admin_token: Option<String>,
    pub handle_salt: Option<String>,
    pub virtual_clock: bool,
    pub sweep_seconds: u64,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            admin_token: None,
            handle_salt: None,
            virtual_clock: false,
            sweep_seconds: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub bootstrap_resamples: usize,
    pub power: PowerParams,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            bootstrap_resamples: 10_000,
            power: PowerParams::default(),
        }
    }
}

fn has_duplicates<T: Ord + Copy>(v: &[T]) -> bool {
    let mut s = v.to_vec();
    s.sort();
    s.windows(2).any(|w| w[0] == w[1])
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub units: Option<usize>,
    pub condition: Option<Condition>,
    pub difficulty: Option<Difficulty>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path`, applies `ov`, resolves relative paths and validates.
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.run.out = base.join(&cfg.run.out);
        if let DatasetSection::PngDir { path } = &mut cfg.dataset {
            *path = base.join(&*path);
        }
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(out) = &ov.out {
            self.run.out = out.clone();
        }
        if let Some(seed) = ov.seed {
            self.run.seed = Some(seed);
        }
        if let Some(n) = ov.units {
            self.units.n_units = n;
        }
        if let Some(c) = ov.condition {
            self.stimuli.conditions = vec![c];
        }
        if let Some(d) = ov.difficulty {
            self.stimuli.difficulties = vec![d];
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.run.seed.is_none() {
            return bad("run.seed is required (set it in [run] or pass --seed)".into());
        }
        if self.units.n_units == 0 {
            return bad("units.n_units must be positive".into());
        }
        if self.stimuli.conditions.is_empty() || self.stimuli.difficulties.is_empty() {
            return bad("stimuli.conditions and stimuli.difficulties must not be empty".into());
        }
        if has_duplicates(&self.stimuli.conditions) || has_duplicates(&self.stimuli.difficulties) {
            return bad("stimuli.conditions and stimuli.difficulties must not repeat".into());
        }
        if let DatasetSection::PngDir { path } = &self.dataset {
            if !path.is_dir() {
                return bad(format!("dataset.path {} is not a directory", path.display()));
            }
        }
        if let DatasetSection::Toy { size: 0, .. } = self.dataset {
            return bad("dataset.size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.simulate.failure_rate) {
            return bad(format!("simulate.failure_rate {} outside [0, 1]", self.simulate.failure_rate));
        }
        if self.simulate.wave_size == 0 {
            return bad("simulate.wave_size must be positive".into());
        }
        self.featviz_config().validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.expect("validated config has a seed")
    }

    /// Seed for a named stream.
    pub fn stream_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed(), label)
    }

    /// Hex SHA-256 of the effective config, leaving out the output root.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_seed(&self) -> u64 {
        self.model.seed.unwrap_or_else(|| self.stream_seed("model"))
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            n_units: self.units.n_units,
            seed: self.stream_seed("units"),
            exclusion: self.units.exclusion,
            allowlist: self.units.allowlist.clone(),
        }
    }

    pub fn featviz_config(&self) -> FeatureVizConfig {
        let f = &self.featviz;
        FeatureVizConfig {
            batch_size: f.batch_size,
            min_steps: f.min_steps,
            max_steps: f.max_steps,
            window: f.window,
            step_size: f.step_size,
            init_noise: f.init_noise,
            seed: self.stream_seed("featviz"),
            ..FeatureVizConfig::default()
        }
    }

    pub fn prepare(&self, conditions: Vec<Condition>) -> PrepareConfig {
        let s = &self.stimuli;
        PrepareConfig {
            instances: s.instances,
            active_instances: s.active_instances,
            conditions,
            difficulties: s.difficulties.clone(),
            catch_trials: s.catch_trials,
            practice_trials: s.practice_trials,
            seed: self.stream_seed("stimuli"),
            featviz: self.featviz_config(),
            max_exponential_probes: self.featviz.max_exponential_probes,
            budget_escalations: self.featviz.budget_escalations,
        }
    }

    /// The recruitment plan for `units` sampled units.
    pub fn plan(&self, units: usize) -> Result<RecruitmentPlan, CliError> {
        let total = units * self.stimuli.active_instances * self.plan.responses_per_instance;
        let trials = match self.plan.real_trials_per_session {
            Some(t) => t,
            None => (1..=units.min(40))
                .rev()
                .find(|d| total % d == 0)
                .ok_or_else(|| CliError::Config("no session size splits the plan".into()))?,
        };
        Ok(RecruitmentPlan {
            responses_per_instance: self.plan.responses_per_instance,
            real_trials_per_session: trials,
            catch_trials_per_session: self.plan.catch_trials_per_session,
            practice_trials: self.stimuli.practice_trials,
            seed: self.stream_seed("plan"),
        })
    }

    /// Every configured task of `model_id`.
    pub fn tasks(&self, model_id: &str) -> Vec<TaskKey> {
        let mut out = Vec::new();
        for &c in &self.stimuli.conditions {
            for &d in &self.stimuli.difficulties {
                out.push(TaskKey::new(model_id, c, d));
            }
        }
        out
    }

    pub fn prepared_dir(&self) -> PathBuf {
        self.run.out.join("prepared")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.run.out.join("dataset")
    }

    pub fn simulate_dir(&self) -> PathBuf {
        self.run.out.join("simulate")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.run.out.join("analysis")
    }

    pub fn export_dir(&self) -> PathBuf {
        self.run.out.join("export")
    }
}
