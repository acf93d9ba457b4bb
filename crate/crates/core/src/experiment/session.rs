//! One participant's run through instructions, gated practice and the main block.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::experiment::plan::{Millis, TaskKey, TrialStimulus};
use crate::experiment::quality::QualityReport;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Instructions,
    Practice,
    Main,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Top,
    Bottom,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Top => "top",
            Side::Bottom => "bottom",
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Top => Side::Bottom,
            Side::Bottom => Side::Top,
        }
    }

    pub(crate) fn random<R: Rng + ?Sized>(rng: &mut R) -> Side {
        if rng.random::<bool>() {
            Side::Top
        } else {
            Side::Bottom
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Side {
    type Err = ImiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(Side::Top),
            "bottom" => Ok(Side::Bottom),
            other => Err(ImiError::Validation(format!("unknown side {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrialKind {
    Practice { round: usize, index: usize },
    Catch { index: usize },
    /// `unit` indexes the task's unit list.
    Real { unit: usize, instance: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTrial {
    pub trial_id: String,
    pub kind: TrialKind,
    pub stimulus: TrialStimulus,
    /// Where the positive query is shown. Never sent to clients.
    pub positive_side: Side,
}

impl ScheduledTrial {
    pub fn query_on(&self, side: Side) -> &str {
        if side == self.positive_side {
            &self.stimulus.pos_query
        } else {
            &self.stimulus.neg_query
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub trial_id: String,
    pub choice: Side,
    pub confidence: u8,
    pub reaction_time_ms: u64,
    pub correct: bool,
    pub timestamp: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Practice,
    Main,
}

/// What a client sees for one trial. Carries no correctness information.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPayload {
    pub trial_id: String,
    pub phase: Phase,
    pub practice_round: Option<usize>,
    /// Zero-based position within the phase (or practice round).
    pub index: usize,
    pub total: usize,
    pub neg_references: Vec<String>,
    pub pos_references: Vec<String>,
    pub top_query: String,
    pub bottom_query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTrial {
    Trial(TrialPayload),
    /// Every trial is answered; the session awaits finishing.
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub correct: bool,
    /// True when this delivery repeated an already stored response.
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub participant_id: String,
    pub task: TaskKey,
    pub state: SessionState,
    pub created_at: Millis,
    pub instruction_start: Millis,
    pub instruction_end: Option<Millis>,
    pub finished_at: Option<Millis>,
    pub practice_attempt_count: usize,
    pub practice_round: usize,
    pub practice_trials: Vec<ScheduledTrial>,
    pub practice_responses: Vec<Response>,
    /// Real and catch trials in presentation order.
    pub trials: Vec<ScheduledTrial>,
    pub responses: Vec<Response>,
    pub quality: Option<QualityReport>,
    /// Participant was admitted to another task before this session.
    pub repeat_participation: bool,
    pub(crate) placement_seed: u64,
    pub(crate) practice_set: Vec<TrialStimulus>,
}

impl SessionRecord {
    pub(crate) fn new(
        session_id: String,
        participant_id: String,
        task: TaskKey,
        now: Millis,
        trials: Vec<ScheduledTrial>,
        practice_set: Vec<TrialStimulus>,
        placement_seed: u64,
        repeat_participation: bool,
    ) -> Self {
        Self {
            session_id,
            participant_id,
            task,
            state: SessionState::Instructions,
            created_at: now,
            instruction_start: now,
            instruction_end: None,
            finished_at: None,
            practice_attempt_count: 0,
            practice_round: 0,
            practice_trials: Vec::new(),
            practice_responses: Vec::new(),
            trials,
            responses: Vec::new(),
            quality: None,
            repeat_participation,
            placement_seed,
            practice_set,
        }
    }

    /// Main-block trials paired with their responses, in order.
    pub fn answered_main(&self) -> impl Iterator<Item = (&ScheduledTrial, &Response)> {
        self.trials.iter().zip(self.responses.iter())
    }

    /// Practice trials per round.
    pub fn practice_trial_count(&self) -> usize {
        self.practice_set.len()
    }

    pub fn is_finished(&self) -> bool {
        self.state == SessionState::Finished
    }

    fn start_practice_round(&mut self) {
        self.practice_round += 1;
        let round = self.practice_round;
        let mut rng = rng::stream(self.placement_seed, &format!("practice-{round}"));
        self.practice_trials = self
            .practice_set
            .iter()
            .enumerate()
            .map(|(index, stimulus)| ScheduledTrial {
                trial_id: format!("p{round}-{index}"),
                kind: TrialKind::Practice { round, index },
                stimulus: stimulus.clone(),
                positive_side: Side::random(&mut rng),
            })
            .collect();
    }

    fn round_offset(&self) -> usize {
        (self.practice_round.saturating_sub(1)) * self.practice_set.len()
    }

    fn current_practice(&self) -> usize {
        self.practice_responses.len() - self.round_offset()
    }

    fn leave_instructions(&mut self, now: Millis) {
        self.instruction_end = Some(now);
        if self.practice_set.is_empty() {
            self.state = SessionState::Main;
        } else {
            self.state = SessionState::Practice;
            self.start_practice_round();
        }
    }

    fn payload(trial: &ScheduledTrial, phase: Phase, round: Option<usize>, index: usize, total: usize) -> TrialPayload {
        TrialPayload {
            trial_id: trial.trial_id.clone(),
            phase,
            practice_round: round,
            index,
            total,
            neg_references: trial.stimulus.neg_references.clone(),
            pos_references: trial.stimulus.pos_references.clone(),
            top_query: trial.query_on(Side::Top).to_string(),
            bottom_query: trial.query_on(Side::Bottom).to_string(),
        }
    }

    /// The trial the participant should answer now. The first call ends the
    /// instruction phase.
    pub fn next_trial(&mut self, now: Millis) -> Result<NextTrial> {
        match self.state {
            SessionState::Finished => Err(ImiError::State(format!(
                "session {} is finished",
                self.session_id
            ))),
            SessionState::Instructions => {
                self.leave_instructions(now);
                self.next_trial(now)
            }
            SessionState::Practice => {
                let i = self.current_practice();
                let trial = &self.practice_trials[i];
                Ok(NextTrial::Trial(Self::payload(
                    trial,
                    Phase::Practice,
                    Some(self.practice_round),
                    i,
                    self.practice_trials.len(),
                )))
            }
            SessionState::Main => {
                let i = self.responses.len();
                match self.trials.get(i) {
                    Some(trial) => Ok(NextTrial::Trial(Self::payload(
                        trial,
                        Phase::Main,
                        None,
                        i,
                        self.trials.len(),
                    ))),
                    None => Ok(NextTrial::Done),
                }
            }
        }
    }

    fn find_stored(&self, trial_id: &str) -> Option<&Response> {
        self.responses
            .iter()
            .chain(self.practice_responses.iter())
            .find(|r| r.trial_id == trial_id)
    }

    /// Stores a response to the current trial and returns feedback.
    pub fn submit_response(
        &mut self,
        trial_id: &str,
        choice: Side,
        confidence: u8,
        reaction_time_ms: u64,
        now: Millis,
    ) -> Result<Feedback> {
        if let Some(prev) = self.find_stored(trial_id) {
            if prev.choice == choice
                && prev.confidence == confidence
                && prev.reaction_time_ms == reaction_time_ms
            {
                return Ok(Feedback {
                    correct: prev.correct,
                    duplicate: true,
                });
            }
            return Err(ImiError::Protocol(format!(
                "trial {trial_id} already has a different response"
            )));
        }
        if !(1..=3).contains(&confidence) {
            return Err(ImiError::Validation(format!(
                "confidence must be 1, 2 or 3, got {confidence}"
            )));
        }
        let elapsed = now - self.created_at;
        if reaction_time_ms == 0 || reaction_time_ms as i64 > elapsed {
            return Err(ImiError::Validation(format!(
                "reaction time {reaction_time_ms} ms outside (0, {elapsed}] ms"
            )));
        }
        let expected = match self.state {
            SessionState::Practice => Some(&self.practice_trials[self.current_practice()]),
            SessionState::Main => self.trials.get(self.responses.len()),
            SessionState::Instructions => None,
            SessionState::Finished => {
                return Err(ImiError::State(format!(
                    "session {} is finished",
                    self.session_id
                )))
            }
        };
        let Some(trial) = expected else {
            return Err(ImiError::Protocol(format!(
                "no trial is awaiting a response, got {trial_id}"
            )));
        };
        if trial.trial_id != trial_id {
            return Err(ImiError::Protocol(format!(
                "expected a response to {}, got {trial_id}",
                trial.trial_id
            )));
        }
        let correct = choice == trial.positive_side;
        let response = Response {
            trial_id: trial_id.to_string(),
            choice,
            confidence,
            reaction_time_ms,
            correct,
            timestamp: now,
        };
        if self.state == SessionState::Practice {
            self.practice_responses.push(response);
            if self.current_practice() == self.practice_trials.len() {
                self.practice_attempt_count += 1;
                let round = &self.practice_responses[self.round_offset()..];
                if round.iter().all(|r| r.correct) {
                    self.state = SessionState::Main;
                } else {
                    self.start_practice_round();
                }
            }
        } else {
            self.responses.push(response);
        }
        Ok(Feedback {
            correct,
            duplicate: false,
        })
    }

    pub(crate) fn close(&mut self, now: Millis) -> Result<()> {
        if self.state == SessionState::Finished {
            return Err(ImiError::State(format!(
                "session {} is already finished",
                self.session_id
            )));
        }
        self.state = SessionState::Finished;
        self.finished_at = Some(now);
        Ok(())
    }
}
