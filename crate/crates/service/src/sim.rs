//! Simulated participants that drive the public API.
//!
//! Correctness is decided against the ground-truth side recovered from the
//! stimulus manifest, never from pixels. Every feedback the service returns
//! is checked against that truth.

use std::collections::{BTreeMap, HashSet};

use futures::future::join_all;
use imi_core::experiment::{
    NextTrial, Phase, QualityCheck, QualityReport, RecruitmentStatus, Side, TaskKey, TrialPayload,
};
use imi_core::rng;
use imi_core::store::StimulusManifest;
use imi_core::ImiError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::api::{SessionCreated, SubmitResponse};
use crate::client::Client;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("service answered {status} {code}: {message}")]
    Service { status: u16, code: String, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("feedback for {trial_id} disagrees with the manifest")]
    Mismatch { trial_id: String },
    #[error("stimulus {0} is not in the manifest")]
    UnknownStimulus(String),
    #[error("campaign stalled: {0}")]
    Stalled(String),
    #[error(transparent)]
    Core(#[from] ImiError),
}

impl SimError {
    pub fn code(&self) -> Option<&str> {
        match self {
            SimError::Service { code, .. } => Some(code),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    None,
    /// Leaves the instructions after 10 s.
    SlowReader,
    CatchFailer,
    SameSide,
    /// Finishes after 100 s.
    TooFast,
    /// Finishes after 3000 s.
    TooSlow,
    /// Fails three practice rounds before passing the fourth.
    TriplePracticeFailer,
}

impl Violation {
    /// Injection order used by campaigns.
    pub const INJECTED: [Violation; 6] = [
        Violation::SlowReader,
        Violation::TooFast,
        Violation::TooSlow,
        Violation::SameSide,
        Violation::TriplePracticeFailer,
        Violation::CatchFailer,
    ];

    pub fn targeted_check(self) -> Option<QualityCheck> {
        match self {
            Violation::None => None,
            Violation::SlowReader => Some(QualityCheck::InstructionTime),
            Violation::CatchFailer => Some(QualityCheck::CatchTrials),
            Violation::SameSide => Some(QualityCheck::SameSide),
            Violation::TooFast | Violation::TooSlow => Some(QualityCheck::TotalDuration),
            Violation::TriplePracticeFailer => Some(QualityCheck::PracticeAttempts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantProfile {
    /// Probability of answering a real trial correctly.
    pub accuracy: f64,
    /// Overrides keyed `condition/difficulty` (e.g. `natural/hard`) or by difficulty alone.
    pub task_accuracy: BTreeMap<String, f64>,
    pub catch_accuracy: f64,
    pub rt_median_ms: f64,
    pub rt_sigma: f64,
    pub violation: Violation,
    pub seed: u64,
}

impl Default for ParticipantProfile {
    fn default() -> Self {
        Self {
            accuracy: 0.8,
            task_accuracy: BTreeMap::new(),
            catch_accuracy: 0.95,
            rt_median_ms: 2500.0,
            rt_sigma: 0.5,
            violation: Violation::None,
            seed: 0,
        }
    }
}

const CATCH_FAILER_ACCURACY: f64 = 0.4;
const RT_RANGE_MS: (f64, f64) = (300.0, 20_000.0);

impl ParticipantProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let probs = [self.accuracy, self.catch_accuracy]
            .into_iter()
            .chain(self.task_accuracy.values().copied());
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ImiError::Config(format!("probability {p} outside [0, 1]")).into());
            }
        }
        if !(self.rt_median_ms > 0.0 && self.rt_sigma >= 0.0) {
            return Err(ImiError::Config("reaction time model needs median > 0 and sigma >= 0".into()).into());
        }
        Ok(())
    }

    pub fn accuracy_for(&self, task: &TaskKey) -> f64 {
        let full = format!("{}/{}", task.condition, task.difficulty);
        self.task_accuracy
            .get(&full)
            .or_else(|| self.task_accuracy.get(task.difficulty.as_str()))
            .copied()
            .unwrap_or(self.accuracy)
    }

    fn catch_accuracy(&self) -> f64 {
        if self.violation == Violation::CatchFailer {
            CATCH_FAILER_ACCURACY
        } else {
            self.catch_accuracy
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QueryKind {
    Catch,
    Other,
}

/// Which query of a payload is positive, recovered from the manifest.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    positive: HashSet<String>,
    negative: HashSet<String>,
    catch: HashSet<String>,
    handles: BTreeMap<String, String>,
}

impl GroundTruth {
    /// `handles` maps stimulus handles to manifest paths.
    pub fn new(manifest: &StimulusManifest, handles: BTreeMap<String, String>) -> Result<Self, SimError> {
        let mut positive = HashSet::new();
        let mut negative = HashSet::new();
        let mut catch = HashSet::new();
        for key in manifest.tasks() {
            for u in manifest.task_stimuli(&key)?.units {
                for (_, t) in u.instances {
                    positive.insert(t.pos_query);
                    negative.insert(t.neg_query);
                }
            }
        }
        for t in manifest.practice.iter().chain(&manifest.catch) {
            positive.insert(t.pos_query.clone());
            negative.insert(t.neg_query.clone());
        }
        for t in &manifest.catch {
            catch.insert(t.pos_query.clone());
            catch.insert(t.neg_query.clone());
        }
        Ok(Self {
            positive,
            negative,
            catch,
            handles,
        })
    }

    pub async fn fetch(client: &Client, manifest: &StimulusManifest) -> Result<Self, SimError> {
        Self::new(manifest, client.stimulus_handles().await?)
    }

    fn path(&self, url: &str) -> Result<&str, SimError> {
        let handle = url.rsplit('/').next().unwrap_or(url);
        self.handles
            .get(handle)
            .map(String::as_str)
            .ok_or_else(|| SimError::UnknownStimulus(url.to_string()))
    }

    fn classify(&self, p: &TrialPayload) -> Result<(Side, QueryKind), SimError> {
        let top = self.path(&p.top_query)?;
        let bottom = self.path(&p.bottom_query)?;
        let side = if self.positive.contains(top) && self.negative.contains(bottom) {
            Side::Top
        } else if self.positive.contains(bottom) && self.negative.contains(top) {
            Side::Bottom
        } else {
            return Err(SimError::UnknownStimulus(format!("{top} / {bottom}")));
        };
        let kind = if self.catch.contains(top) {
            QueryKind::Catch
        } else {
            QueryKind::Other
        };
        Ok((side, kind))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOutcome {
    pub session_id: String,
    pub participant_id: String,
    pub violation: Violation,
    pub quality: QualityReport,
    pub main_trials: usize,
    /// Main trials that are not catch trials.
    pub real_trials: usize,
    pub main_correct: usize,
    pub catch_correct: usize,
    pub practice_rounds: usize,
}

fn confidence(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    // 1 + Binomial(2, p): confident when likely right.
    1 + rng.random_bool(p) as u8 + rng.random_bool(p) as u8
}

/// Plays an admitted session to the end and finishes it.
pub async fn play_session(
    client: &Client,
    truth: &GroundTruth,
    task: &TaskKey,
    session: &SessionCreated,
    participant_id: &str,
    profile: &ParticipantProfile,
) -> Result<SessionOutcome, SimError> {
    profile.validate()?;
    let id = session.session_id.as_str();
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let rt_model = LogNormal::new(profile.rt_median_ms.ln(), profile.rt_sigma)
        .map_err(|e| ImiError::Config(e.to_string()))?;
    let accuracy = profile.accuracy_for(task);
    let catch_accuracy = profile.catch_accuracy();
    // Checks other than the targeted one are kept safe.
    let guard_catch = profile.violation != Violation::CatchFailer;
    let guard_side = profile.violation != Violation::SameSide;

    let mut elapsed: i64 = 0;
    let dwell = match profile.violation {
        Violation::SlowReader => 10_000,
        _ => rng.random_range(20_000..=60_000),
    };
    client.advance(id, dwell).await?;
    elapsed += dwell;

    let answers = session.practice_trials + session.main_trials;
    let fast_budget = (100_000 - elapsed - 1_000) / (answers as i64 + 1);
    let max_same_side = session.main_trials * 9 / 10;
    let (mut tops, mut bottoms) = (0usize, 0usize);
    let (mut real_trials, mut main_correct, mut catch_correct, mut catch_missed) = (0, 0, 0, 0);
    let mut failed_rounds = 0usize;
    let mut rounds = 0usize;

    loop {
        let payload = match client.next_trial(id).await? {
            NextTrial::Trial(p) => p,
            NextTrial::Done => break,
        };
        let (truth_side, kind) = truth.classify(&payload)?;
        let (want_correct, p_conf) = match payload.phase {
            Phase::Practice => {
                let fail_round = profile.violation == Violation::TriplePracticeFailer && failed_rounds < 3;
                (!(fail_round && payload.index == 0), 1.0)
            }
            Phase::Main if kind == QueryKind::Catch => {
                let mut ok = rng.random_bool(catch_accuracy);
                if guard_catch && !ok && catch_missed >= 1 {
                    ok = true;
                }
                (ok, catch_accuracy)
            }
            Phase::Main => (rng.random_bool(accuracy), accuracy),
        };
        let mut choice = if want_correct { truth_side } else { truth_side.other() };
        if payload.phase == Phase::Main {
            if profile.violation == Violation::SameSide {
                choice = Side::Top;
            } else if guard_side {
                let count = if choice == Side::Top { tops } else { bottoms };
                if count + 1 > max_same_side {
                    choice = choice.other();
                }
            }
        }
        let conf = confidence(&mut rng, p_conf);
        let mut rt = rt_model.sample(&mut rng).clamp(RT_RANGE_MS.0, RT_RANGE_MS.1) as i64;
        if profile.violation == Violation::TooFast {
            rt = rt.min(fast_budget);
        }
        client.advance(id, rt).await?;
        elapsed += rt;
        let fb = client
            .submit(
                id,
                &SubmitResponse {
                    trial_id: payload.trial_id.clone(),
                    choice,
                    confidence: conf,
                    reaction_time_ms: rt as u64,
                },
            )
            .await?;
        let correct = choice == truth_side;
        if fb.correct != correct {
            return Err(SimError::Mismatch {
                trial_id: payload.trial_id,
            });
        }
        match payload.phase {
            Phase::Practice => {
                if payload.index + 1 == payload.total {
                    rounds += 1;
                    if profile.violation == Violation::TriplePracticeFailer && failed_rounds < 3 {
                        failed_rounds += 1;
                    }
                }
            }
            Phase::Main => {
                match choice {
                    Side::Top => tops += 1,
                    Side::Bottom => bottoms += 1,
                }
                if kind == QueryKind::Catch {
                    if correct {
                        catch_correct += 1;
                    } else {
                        catch_missed += 1;
                    }
                } else {
                    real_trials += 1;
                    main_correct += correct as usize;
                }
            }
        }
    }

    let target = match profile.violation {
        Violation::TooFast => 100_000,
        Violation::TooSlow => 3_000_000,
        _ => 150_000 + rng.random_range(0..=30_000),
    };
    client.advance(id, target - elapsed).await?;
    let done = client.finish(id).await?;
    Ok(SessionOutcome {
        session_id: id.to_string(),
        participant_id: participant_id.to_string(),
        violation: profile.violation,
        quality: done.quality,
        main_trials: session.main_trials,
        real_trials,
        main_correct,
        catch_correct,
        practice_rounds: rounds,
    })
}

/// Admits one participant and plays the session.
pub async fn run_session(
    client: &Client,
    truth: &GroundTruth,
    task: &TaskKey,
    participant_id: &str,
    profile: &ParticipantProfile,
) -> Result<SessionOutcome, SimError> {
    let session = client.create_session(participant_id, task).await?;
    play_session(client, truth, task, &session, participant_id, profile).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub task: TaskKey,
    /// Sessions admitted together and then run concurrently.
    pub wave_size: usize,
    /// Probability that a participant carries a quality violation.
    pub failure_rate: f64,
    pub profile: ParticipantProfile,
    pub seed: u64,
    /// Safety stop.
    pub max_sessions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub outcomes: Vec<SessionOutcome>,
    pub status: RecruitmentStatus,
}

impl CampaignReport {
    pub fn passing(&self) -> usize {
        self.outcomes.iter().filter(|o| o.quality.passed).count()
    }
}

/// Recruits participants wave by wave until the task reports completion.
/// Admission is sequential and every session's randomness is seeded, so a
/// campaign replays identically.
pub async fn run_campaign(client: &Client, truth: &GroundTruth, cfg: &CampaignConfig) -> Result<CampaignReport, SimError> {
    if cfg.wave_size == 0 {
        return Err(ImiError::Config("wave size must be positive".into()).into());
    }
    if !(0.0..=1.0).contains(&cfg.failure_rate) {
        return Err(ImiError::Config(format!("failure rate {} outside [0, 1]", cfg.failure_rate)).into());
    }
    cfg.profile.validate()?;
    let mut rng = rng::stream(cfg.seed, &format!("campaign/{}", cfg.task));
    let mut outcomes = Vec::new();
    let mut next = 0usize;
    let mut injected = 0usize;
    loop {
        let status = client.recruitment(&cfg.task).await?;
        if status.complete {
            return Ok(CampaignReport { outcomes, status });
        }
        if next >= cfg.max_sessions {
            return Err(SimError::Stalled(format!("{next} sessions without completing {}", cfg.task)));
        }
        let mut wave = Vec::new();
        while wave.len() < cfg.wave_size && next < cfg.max_sessions {
            let violation = if rng.random_bool(cfg.failure_rate) {
                injected += 1;
                Violation::INJECTED[(injected - 1) % Violation::INJECTED.len()]
            } else {
                Violation::None
            };
            let participant = format!("sim-{}-{next:05}", cfg.seed);
            let profile = ParticipantProfile {
                violation,
                seed: rng::derive_seed(cfg.seed, &format!("participant/{next}")),
                ..cfg.profile.clone()
            };
            next += 1;
            match client.create_session(&participant, &cfg.task).await {
                Ok(s) => wave.push((s, participant, profile)),
                Err(e) if matches!(e.code(), Some("recruitment_closed" | "no_capacity")) => break,
                Err(e) => return Err(e),
            }
        }
        if wave.is_empty() {
            return Err(SimError::Stalled(format!("no session could be admitted to {}", cfg.task)));
        }
        let runs = wave
            .iter()
            .map(|(s, who, profile)| play_session(client, truth, &cfg.task, s, who, profile));
        for r in join_all(runs).await {
            outcomes.push(r?);
        }
    }
}
