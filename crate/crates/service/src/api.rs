//! JSON bodies exchanged over the HTTP API.

use imi_core::experiment::{QualityReport, SessionState, Side};
use imi_core::stimulus::{Condition, Difficulty};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub participant_id: String,
    pub model_id: String,
    pub condition: Condition,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub state: SessionState,
    /// ISO-8601 UTC.
    pub created_at: String,
    pub practice_trials: usize,
    pub main_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub trial_id: String,
    pub choice: Side,
    pub confidence: u8,
    pub reaction_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFinished {
    pub session_id: String,
    pub finished_at: String,
    pub quality: QualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvanceClock {
    pub advance_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockState {
    pub session_id: String,
    pub now: String,
    pub offset_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub dir: String,
    pub records: usize,
    pub main: usize,
    pub development: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable code, e.g. `repeat_participant`.
    pub error: String,
    pub message: String,
}
