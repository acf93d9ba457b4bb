use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::model::UnitAddress;
use crate::stimulus::{Condition, Difficulty};

/// Milliseconds since the Unix epoch (server clock).
pub type Millis = i64;

/// One recruitment target: a model shown under one condition and difficulty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskKey {
    pub model_id: String,
    pub condition: Condition,
    pub difficulty: Difficulty,
}

impl TaskKey {
    pub fn new(model_id: impl Into<String>, condition: Condition, difficulty: Difficulty) -> Self {
        Self {
            model_id: model_id.into(),
            condition,
            difficulty,
        }
    }
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.model_id, self.condition, self.difficulty)
    }
}

/// Image references of a single trial. Paths are relative to the stimulus root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialStimulus {
    pub pos_references: Vec<String>,
    pub neg_references: Vec<String>,
    pub pos_query: String,
    pub neg_query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitStimuli {
    pub unit: UnitAddress,
    /// Active instances as `(instance_index, stimulus)`.
    pub instances: Vec<(usize, TrialStimulus)>,
}

/// Everything a task needs to run sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStimuli {
    pub units: Vec<UnitStimuli>,
    pub catch: Vec<TrialStimulus>,
    pub practice: Vec<TrialStimulus>,
}

/// Recruitment arithmetic for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecruitmentPlan {
    pub responses_per_instance: usize,
    pub real_trials_per_session: usize,
    pub catch_trials_per_session: usize,
    pub practice_trials: usize,
    pub seed: u64,
}

impl Default for RecruitmentPlan {
    fn default() -> Self {
        Self {
            responses_per_instance: 3,
            real_trials_per_session: 40,
            catch_trials_per_session: 5,
            practice_trials: 5,
            seed: 0,
        }
    }
}

/// Derived quantities of a plan applied to a stimulus set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanTargets {
    pub units: usize,
    pub active_instances_per_unit: usize,
    pub responses_per_unit: usize,
    pub total_responses: usize,
    pub target_passing_sessions: usize,
}

impl RecruitmentPlan {
    /// Checks the plan against a stimulus set and returns its targets. The
    /// response total must split evenly into sessions.
    pub fn targets(&self, stimuli: &TaskStimuli) -> Result<PlanTargets> {
        let units = stimuli.units.len();
        if units == 0 {
            return Err(ImiError::Config("task has no units".into()));
        }
        let instances = stimuli.units[0].instances.len();
        if instances == 0 || stimuli.units.iter().any(|u| u.instances.len() != instances) {
            return Err(ImiError::Config(
                "every unit needs the same positive number of active instances".into(),
            ));
        }
        if self.responses_per_instance == 0 || self.real_trials_per_session == 0 {
            return Err(ImiError::Config("plan counts must be positive".into()));
        }
        if self.real_trials_per_session > units {
            return Err(ImiError::Config(format!(
                "{} real trials per session need at least that many units, have {units}",
                self.real_trials_per_session
            )));
        }
        if stimuli.catch.is_empty() && self.catch_trials_per_session > 0 {
            return Err(ImiError::Config("catch trials requested but none configured".into()));
        }
        if stimuli.practice.len() < self.practice_trials {
            return Err(ImiError::Config(format!(
                "{} practice trials requested, {} configured",
                self.practice_trials,
                stimuli.practice.len()
            )));
        }
        let per_unit = instances * self.responses_per_instance;
        let total = units * per_unit;
        if total % self.real_trials_per_session != 0 {
            return Err(ImiError::Config(format!(
                "{units} units x {per_unit} responses = {total} is not a multiple of {} trials per session",
                self.real_trials_per_session
            )));
        }
        Ok(PlanTargets {
            units,
            active_instances_per_unit: instances,
            responses_per_unit: per_unit,
            total_responses: total,
            target_passing_sessions: total / self.real_trials_per_session,
        })
    }
}
