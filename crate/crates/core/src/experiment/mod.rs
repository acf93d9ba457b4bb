//! Session scheduling, quality control and recruitment bookkeeping.
//!
//! All operations take the current server time as an argument, so the same
//! code drives live serving and simulated campaigns.

pub mod plan;
pub mod quality;
pub mod scheduler;
pub mod session;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

pub use plan::{Millis, PlanTargets, RecruitmentPlan, TaskKey, TaskStimuli, TrialStimulus, UnitStimuli};
pub use quality::{evaluate_quality, CheckResult, QualityCheck, QualityReport, QualityThresholds};
pub use scheduler::{Scheduler, Slot};
pub use session::{
    Feedback, NextTrial, Phase, Response, ScheduledTrial, SessionRecord, SessionState, Side, TrialKind,
    TrialPayload,
};

use crate::error::{ImiError, Result};
use crate::model::UnitAddress;
use crate::rng;
use crate::store::ImiResponseRecord;

#[derive(Debug, Clone)]
struct TaskState {
    plan: RecruitmentPlan,
    targets: PlanTargets,
    stimuli: TaskStimuli,
    scheduler: Scheduler,
    admitted: HashSet<String>,
    admissions: usize,
    passing: usize,
    failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceLedger {
    pub instance_index: usize,
    pub passing_responses: usize,
    pub open_slots: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitLedger {
    pub unit: UnitAddress,
    pub passing_responses: usize,
    pub distinct_participants: usize,
    pub instances: Vec<InstanceLedger>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecruitmentStatus {
    pub task: TaskKey,
    pub passing_sessions: usize,
    pub failed_sessions: usize,
    pub in_flight_sessions: usize,
    pub target_passing_sessions: usize,
    pub open_slots: usize,
    pub complete: bool,
    pub ledger: Vec<UnitLedger>,
}

/// Admission, trial flow and ledgers for any number of tasks.
#[derive(Debug, Clone)]
pub struct Experiment {
    thresholds: QualityThresholds,
    tasks: BTreeMap<TaskKey, TaskState>,
    sessions: Vec<SessionRecord>,
    by_id: HashMap<String, usize>,
    /// Per session: the claimed slots, emptied once settled.
    claims: Vec<Vec<Slot>>,
    history: HashMap<String, Vec<usize>>,
}

impl Experiment {
    pub fn new(thresholds: QualityThresholds) -> Self {
        Self {
            thresholds,
            tasks: BTreeMap::new(),
            sessions: Vec::new(),
            by_id: HashMap::new(),
            claims: Vec::new(),
            history: HashMap::new(),
        }
    }

    pub fn thresholds(&self) -> &QualityThresholds {
        &self.thresholds
    }

    pub fn add_task(&mut self, key: TaskKey, plan: RecruitmentPlan, stimuli: TaskStimuli) -> Result<PlanTargets> {
        if self.tasks.contains_key(&key) {
            return Err(ImiError::Config(format!("task {key} registered twice")));
        }
        if stimuli.units.iter().any(|u| u.unit.model_id != key.model_id) {
            return Err(ImiError::Config(format!("task {key} lists units of another model")));
        }
        let targets = plan.targets(&stimuli)?;
        if plan.catch_trials_per_session < self.thresholds.min_catch_correct {
            return Err(ImiError::Config(format!(
                "{} catch trials cannot reach the required {} correct",
                plan.catch_trials_per_session, self.thresholds.min_catch_correct
            )));
        }
        let keys = stimuli.units.iter().map(|u| u.unit.key()).collect();
        let scheduler = Scheduler::new(keys, targets.active_instances_per_unit, plan.responses_per_instance);
        self.tasks.insert(
            key,
            TaskState {
                plan,
                targets,
                stimuli,
                scheduler,
                admitted: HashSet::new(),
                admissions: 0,
                passing: 0,
                failed: 0,
            },
        );
        Ok(targets)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskKey> {
        self.tasks.keys()
    }

    pub fn task_stimuli(&self, key: &TaskKey) -> Result<&TaskStimuli> {
        Ok(&self.task(key)?.stimuli)
    }

    fn task(&self, key: &TaskKey) -> Result<&TaskState> {
        self.tasks
            .get(key)
            .ok_or_else(|| ImiError::NotFound(format!("task {key}")))
    }

    fn index(&self, session_id: &str) -> Result<usize> {
        self.by_id
            .get(session_id)
            .copied()
            .ok_or_else(|| ImiError::NotFound(format!("session {session_id}")))
    }

    pub fn session(&self, session_id: &str) -> Result<&SessionRecord> {
        Ok(&self.sessions[self.index(session_id)?])
    }

    /// All sessions in admission order.
    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    /// Slots held by a running session, as `(unit, instance)` positions.
    pub fn claimed_slots(&self, session_id: &str) -> Result<&[Slot]> {
        Ok(&self.claims[self.index(session_id)?])
    }

    /// Admits a participant and schedules their trials.
    pub fn create_session(&mut self, participant_id: &str, key: &TaskKey, now: Millis) -> Result<&SessionRecord> {
        if participant_id.is_empty() {
            return Err(ImiError::Validation("participant id is empty".into()));
        }
        let repeat = self
            .history
            .get(participant_id)
            .is_some_and(|ids| ids.iter().any(|&i| &self.sessions[i].task != key));
        let task = self
            .tasks
            .get_mut(key)
            .ok_or_else(|| ImiError::NotFound(format!("task {key}")))?;
        if task.passing >= task.targets.target_passing_sessions {
            return Err(ImiError::RecruitmentClosed(key.to_string()));
        }
        if task.admitted.contains(participant_id) {
            return Err(ImiError::RepeatParticipant(participant_id.to_string()));
        }
        let plan = &task.plan;
        let slots = task.scheduler.claim(plan.real_trials_per_session)?;

        let admission = task.admissions;
        let session_seed = rng::derive_seed(plan.seed, &format!("session/{key}/{admission}"));
        let mut rng = rng::stream(session_seed, "schedule");
        let mut order = slots.clone();
        order.shuffle(&mut rng);

        let n_real = order.len();
        let n_catch = plan.catch_trials_per_session;
        let total = n_real + n_catch;
        let mut positions: Vec<usize> = (0..total).collect();
        positions.shuffle(&mut rng);
        let mut is_catch = vec![false; total];
        for &p in &positions[..n_catch] {
            is_catch[p] = true;
        }
        let catch_picks: Vec<usize> = if task.stimuli.catch.len() >= n_catch {
            let all: Vec<usize> = (0..task.stimuli.catch.len()).collect();
            all.choose_multiple(&mut rng, n_catch).copied().collect()
        } else {
            (0..n_catch)
                .map(|_| *(0..task.stimuli.catch.len()).collect::<Vec<_>>().choose(&mut rng).unwrap())
                .collect()
        };

        let mut real = order.into_iter();
        let mut catches = catch_picks.into_iter();
        let mut trials = Vec::with_capacity(total);
        for (pos, &catch) in is_catch.iter().enumerate() {
            let (kind, stimulus) = if catch {
                let c = catches.next().expect("catch count matches");
                (TrialKind::Catch { index: c }, task.stimuli.catch[c].clone())
            } else {
                let (u, i) = real.next().expect("real count matches");
                let unit = &task.stimuli.units[u];
                (
                    TrialKind::Real {
                        unit: u,
                        instance: unit.instances[i].0,
                    },
                    unit.instances[i].1.clone(),
                )
            };
            trials.push(ScheduledTrial {
                trial_id: format!("t{pos:02}"),
                kind,
                stimulus,
                positive_side: Side::random(&mut rng),
            });
        }

        let session_id = format!("{:016x}", rng::derive_seed(session_seed, "id"));
        if self.by_id.contains_key(&session_id) {
            task.scheduler.release(&slots);
            return Err(ImiError::State(format!("session id collision {session_id}")));
        }
        let practice = task.stimuli.practice[..plan.practice_trials].to_vec();
        task.admissions += 1;
        task.admitted.insert(participant_id.to_string());

        let record = SessionRecord::new(
            session_id.clone(),
            participant_id.to_string(),
            key.clone(),
            now,
            trials,
            practice,
            session_seed,
            repeat,
        );
        let idx = self.sessions.len();
        self.sessions.push(record);
        self.claims.push(slots);
        self.by_id.insert(session_id, idx);
        self.history.entry(participant_id.to_string()).or_default().push(idx);
        Ok(&self.sessions[idx])
    }

    pub fn next_trial(&mut self, session_id: &str, now: Millis) -> Result<NextTrial> {
        let i = self.index(session_id)?;
        self.sessions[i].next_trial(now)
    }

    pub fn submit_response(
        &mut self,
        session_id: &str,
        trial_id: &str,
        choice: Side,
        confidence: u8,
        reaction_time_ms: u64,
        now: Millis,
    ) -> Result<Feedback> {
        let i = self.index(session_id)?;
        self.sessions[i].submit_response(trial_id, choice, confidence, reaction_time_ms, now)
    }

    /// Closes a session, evaluates it and settles its slots: a pass fulfils
    /// them, a failure returns them to the pool.
    pub fn finish_session(&mut self, session_id: &str, now: Millis) -> Result<QualityReport> {
        let i = self.index(session_id)?;
        let session = &mut self.sessions[i];
        session.close(now)?;
        let report = evaluate_quality(session, &self.thresholds)?;
        session.quality = Some(report.clone());
        let task = self.tasks.get_mut(&session.task).expect("session task exists");
        let slots = std::mem::take(&mut self.claims[i]);
        if report.passed {
            task.scheduler.fulfill(&slots, &session.participant_id);
            task.passing += 1;
        } else {
            task.scheduler.release(&slots);
            task.failed += 1;
        }
        Ok(report)
    }

    /// Finishes every running session whose `deadline` has passed, so its
    /// slots return to the pool. Returns the expired session ids.
    pub fn expire_stale(&mut self, now_of: impl Fn(&SessionRecord) -> Millis) -> Vec<String> {
        let limit = (self.thresholds.max_total_seconds * 1000.0) as Millis;
        let stale: Vec<(String, Millis)> = self
            .sessions
            .iter()
            .filter(|s| !s.is_finished())
            .filter_map(|s| {
                let now = now_of(s);
                (now - s.instruction_start > limit).then(|| (s.session_id.clone(), now))
            })
            .collect();
        for (id, now) in &stale {
            self.finish_session(id, *now).expect("running session finishes");
        }
        stale.into_iter().map(|(id, _)| id).collect()
    }

    pub fn recruitment_status(&self, key: &TaskKey) -> Result<RecruitmentStatus> {
        let task = self.task(key)?;
        let in_flight = self
            .sessions
            .iter()
            .filter(|s| &s.task == key && !s.is_finished())
            .count();
        let ledger = task
            .stimuli
            .units
            .iter()
            .enumerate()
            .map(|(u, unit)| {
                let instances: Vec<InstanceLedger> = unit
                    .instances
                    .iter()
                    .enumerate()
                    .map(|(i, (index, _))| InstanceLedger {
                        instance_index: *index,
                        passing_responses: task.scheduler.fulfilled(u, i),
                        open_slots: task.scheduler.open(u, i),
                        target: task.plan.responses_per_instance,
                    })
                    .collect();
                UnitLedger {
                    unit: unit.unit.clone(),
                    passing_responses: instances.iter().map(|l| l.passing_responses).sum(),
                    distinct_participants: task.scheduler.participants(u).len(),
                    instances,
                }
            })
            .collect();
        Ok(RecruitmentStatus {
            task: key.clone(),
            passing_sessions: task.passing,
            failed_sessions: task.failed,
            in_flight_sessions: in_flight,
            target_passing_sessions: task.targets.target_passing_sessions,
            open_slots: task.scheduler.open_slots(),
            complete: task.passing == task.targets.target_passing_sessions && task.scheduler.is_complete(),
            ledger,
        })
    }

    /// Response records of every finished session, passing or not, in
    /// admission order.
    pub fn records(&self) -> Vec<ImiResponseRecord> {
        let mut out = Vec::new();
        for s in self.sessions.iter().filter(|s| s.is_finished()) {
            let task = &self.tasks[&s.task];
            let quality = s.quality.as_ref().expect("finished sessions are evaluated");
            let failed = quality.failed_names();
            for (trial, resp) in s.answered_main() {
                let TrialKind::Real { unit, instance } = trial.kind else {
                    continue;
                };
                let address = &task.stimuli.units[unit].unit;
                out.push(ImiResponseRecord {
                    channel_index: address.channel_index,
                    choice: resp.choice,
                    condition: s.task.condition,
                    confidence: resp.confidence,
                    correct: resp.correct,
                    difficulty: s.task.difficulty,
                    failed_checks: failed.clone(),
                    instance_index: instance,
                    layer_id: address.layer_id.clone(),
                    model_id: address.model_id.clone(),
                    participant_id: s.participant_id.clone(),
                    quality_passed: quality.passed,
                    reaction_time_ms: resp.reaction_time_ms,
                });
            }
        }
        out
    }
}
