//! Talks to the service over real HTTP or straight into an in-process router.

use std::collections::BTreeMap;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request};
use axum::Router;
use imi_core::experiment::{Feedback, NextTrial, RecruitmentStatus, TaskKey};
use imi_core::store::ImiResponseRecord;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower::ServiceExt;

use crate::api::{
    AdvanceClock, ClockState, CreateSession, ErrorBody, ExportSummary, SessionCreated,
    SessionFinished, SubmitResponse,
};
use crate::sim::SimError;

#[derive(Clone)]
enum Transport {
    Http { base: String, http: reqwest::Client },
    InProcess(Router),
}

#[derive(Clone)]
pub struct Client {
    transport: Transport,
    token: String,
    virtual_clock: bool,
}

impl Client {
    /// `base` like `http://127.0.0.1:8080`.
    pub fn http(base: impl Into<String>, token: impl Into<String>, virtual_clock: bool) -> Self {
        Self {
            transport: Transport::Http {
                base: base.into().trim_end_matches('/').to_string(),
                http: reqwest::Client::new(),
            },
            token: token.into(),
            virtual_clock,
        }
    }

    pub fn in_process(router: Router, token: impl Into<String>, virtual_clock: bool) -> Self {
        Self {
            transport: Transport::InProcess(router),
            token: token.into(),
            virtual_clock,
        }
    }

    async fn call<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&B>,
        admin: bool,
    ) -> Result<T, SimError> {
        let json = match body {
            Some(b) => Some(serde_json::to_vec(b).map_err(|e| SimError::Decode(e.to_string()))?),
            None => None,
        };
        let (status, bytes) = match &self.transport {
            Transport::Http { base, http } => {
                let mut req = http.request(method, format!("{base}{path}"));
                if admin {
                    req = req.bearer_auth(&self.token);
                }
                if let Some(j) = json {
                    req = req.header(header::CONTENT_TYPE, "application/json").body(j);
                }
                let resp = req.send().await.map_err(|e| SimError::Transport(e.to_string()))?;
                let status = resp.status().as_u16();
                let bytes = resp.bytes().await.map_err(|e| SimError::Transport(e.to_string()))?;
                (status, bytes.to_vec())
            }
            Transport::InProcess(router) => {
                let mut req = Request::builder().method(method).uri(path);
                if admin {
                    req = req.header(header::AUTHORIZATION, format!("Bearer {}", self.token));
                }
                let body = match json {
                    Some(j) => {
                        req = req.header(header::CONTENT_TYPE, "application/json");
                        Body::from(j)
                    }
                    None => Body::empty(),
                };
                let req = req.body(body).map_err(|e| SimError::Transport(e.to_string()))?;
                let resp = router
                    .clone()
                    .oneshot(req)
                    .await
                    .map_err(|e| SimError::Transport(e.to_string()))?;
                let status = resp.status().as_u16();
                let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
                    .await
                    .map_err(|e| SimError::Transport(e.to_string()))?;
                (status, bytes.to_vec())
            }
        };
        if !(200..300).contains(&status) {
            let err: ErrorBody = serde_json::from_slice(&bytes).unwrap_or(ErrorBody {
                error: "unknown".into(),
                message: String::from_utf8_lossy(&bytes).into_owned(),
            });
            return Err(SimError::Service {
                status,
                code: err.error,
                message: err.message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| SimError::Decode(format!("{path}: {e}")))
    }

    pub async fn create_session(&self, participant_id: &str, task: &TaskKey) -> Result<SessionCreated, SimError> {
        let body = CreateSession {
            participant_id: participant_id.to_string(),
            model_id: task.model_id.clone(),
            condition: task.condition,
            difficulty: task.difficulty,
        };
        self.call(Method::POST, "/sessions", Some(&body), false).await
    }

    pub async fn next_trial(&self, session_id: &str) -> Result<NextTrial, SimError> {
        self.call::<(), _>(Method::GET, &format!("/sessions/{session_id}/trial"), None, false)
            .await
    }

    pub async fn submit(&self, session_id: &str, resp: &SubmitResponse) -> Result<Feedback, SimError> {
        self.call(Method::POST, &format!("/sessions/{session_id}/responses"), Some(resp), false)
            .await
    }

    pub async fn finish(&self, session_id: &str) -> Result<SessionFinished, SimError> {
        self.call::<(), _>(Method::POST, &format!("/sessions/{session_id}/finish"), None, false)
            .await
    }

    /// Moves the session's clock forward; sleeps instead on a system clock.
    pub async fn advance(&self, session_id: &str, ms: i64) -> Result<(), SimError> {
        if ms <= 0 {
            return Ok(());
        }
        if self.virtual_clock {
            let body = AdvanceClock { advance_ms: ms };
            let _: ClockState = self
                .call(Method::POST, &format!("/admin/sessions/{session_id}/clock"), Some(&body), true)
                .await?;
        } else {
            tokio::time::sleep(Duration::from_millis(ms as u64)).await;
        }
        Ok(())
    }

    pub async fn recruitment(&self, task: &TaskKey) -> Result<RecruitmentStatus, SimError> {
        let path = format!(
            "/admin/recruitment?model_id={}&condition={}&difficulty={}",
            task.model_id, task.condition, task.difficulty
        );
        let mut all: Vec<RecruitmentStatus> = self.call::<(), _>(Method::GET, &path, None, true).await?;
        all.pop()
            .ok_or_else(|| SimError::Decode(format!("no recruitment status for {task}")))
    }

    pub async fn stimulus_handles(&self) -> Result<BTreeMap<String, String>, SimError> {
        self.call::<(), _>(Method::GET, "/admin/stimuli", None, true).await
    }

    pub async fn records(&self) -> Result<Vec<ImiResponseRecord>, SimError> {
        self.call::<(), _>(Method::GET, "/admin/records", None, true).await
    }

    pub async fn export(&self) -> Result<ExportSummary, SimError> {
        self.call::<(), _>(Method::POST, "/admin/export", None, true).await
    }
}
