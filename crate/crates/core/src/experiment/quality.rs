//! The per-session quality battery.

use serde::{Deserialize, Serialize};

use crate::error::{ImiError, Result};
use crate::experiment::session::{SessionRecord, SessionState, Side, TrialKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityThresholds {
    pub max_practice_attempts: usize,
    pub min_instruction_seconds: f64,
    pub min_catch_correct: usize,
    pub min_total_seconds: f64,
    pub max_total_seconds: f64,
    pub max_same_side_fraction: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        Self {
            max_practice_attempts: 3,
            min_instruction_seconds: 15.0,
            min_catch_correct: 4,
            min_total_seconds: 135.0,
            max_total_seconds: 2500.0,
            max_same_side_fraction: 0.90,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityCheck {
    PracticeAttempts,
    InstructionTime,
    CatchTrials,
    TotalDuration,
    SameSide,
    UniqueParticipation,
    /// Every scheduled trial was answered before finishing.
    Completion,
}

impl QualityCheck {
    pub fn as_str(self) -> &'static str {
        match self {
            QualityCheck::PracticeAttempts => "practice_attempts",
            QualityCheck::InstructionTime => "instruction_time",
            QualityCheck::CatchTrials => "catch_trials",
            QualityCheck::TotalDuration => "total_duration",
            QualityCheck::SameSide => "same_side",
            QualityCheck::UniqueParticipation => "unique_participation",
            QualityCheck::Completion => "completion",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: QualityCheck,
    pub value: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl QualityReport {
    pub fn failed(&self) -> Vec<QualityCheck> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.check).collect()
    }

    pub fn failed_names(&self) -> Vec<String> {
        self.failed().iter().map(|c| c.as_str().to_string()).collect()
    }

    pub fn value(&self, check: QualityCheck) -> Option<f64> {
        self.checks.iter().find(|c| c.check == check).map(|c| c.value)
    }
}

/// Applies every check to a finished session.
pub fn evaluate_quality(session: &SessionRecord, th: &QualityThresholds) -> Result<QualityReport> {
    if session.state != SessionState::Finished {
        return Err(ImiError::State(format!(
            "session {} is not finished",
            session.session_id
        )));
    }
    let finished = session.finished_at.expect("finished sessions carry a timestamp");
    let instruction_seconds = session
        .instruction_end
        .map(|end| (end - session.instruction_start) as f64 / 1000.0)
        .unwrap_or(0.0);
    let total_seconds = (finished - session.instruction_start) as f64 / 1000.0;

    let mut catch_correct = 0usize;
    let (mut top, mut bottom) = (0usize, 0usize);
    for (trial, resp) in session.answered_main() {
        if matches!(trial.kind, TrialKind::Catch { .. }) && resp.correct {
            catch_correct += 1;
        }
        match resp.choice {
            Side::Top => top += 1,
            Side::Bottom => bottom += 1,
        }
    }
    let answered = top + bottom;
    let same_side = if answered == 0 {
        0.0
    } else {
        top.max(bottom) as f64 / answered as f64
    };

    let checks = vec![
        CheckResult {
            check: QualityCheck::PracticeAttempts,
            value: session.practice_attempt_count as f64,
            passed: session.practice_attempt_count <= th.max_practice_attempts,
        },
        CheckResult {
            check: QualityCheck::InstructionTime,
            value: instruction_seconds,
            passed: instruction_seconds >= th.min_instruction_seconds,
        },
        CheckResult {
            check: QualityCheck::CatchTrials,
            value: catch_correct as f64,
            passed: catch_correct >= th.min_catch_correct,
        },
        CheckResult {
            check: QualityCheck::TotalDuration,
            value: total_seconds,
            passed: (th.min_total_seconds..=th.max_total_seconds).contains(&total_seconds),
        },
        CheckResult {
            check: QualityCheck::SameSide,
            value: same_side,
            passed: same_side <= th.max_same_side_fraction,
        },
        CheckResult {
            check: QualityCheck::UniqueParticipation,
            value: if session.repeat_participation { 1.0 } else { 0.0 },
            passed: !session.repeat_participation,
        },
        CheckResult {
            check: QualityCheck::Completion,
            value: session.responses.len() as f64,
            passed: session.responses.len() == session.trials.len(),
        },
    ];
    let passed = checks.iter().all(|c| c.passed);
    Ok(QualityReport { checks, passed })
}
