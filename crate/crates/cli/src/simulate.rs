use std::collections::BTreeMap;
use std::sync::Arc;

use imi_core::experiment::TaskKey;
use imi_core::store::{self, partition_quality};
use imi_service::sim::{run_campaign, CampaignConfig, GroundTruth, ParticipantProfile, Violation};
use imi_service::{router, AppState, Client, ClockMode};
use serde::Serialize;

use crate::prepare::load_manifest;
use crate::serve::service_config;
use crate::{fresh_dir, write_report, CliError, RunConfig};

pub const REPORT_FILE: &str = "report.json";
const TOKEN: &str = "simulate";

#[derive(Debug, Clone, Serialize)]
pub struct TaskReport {
    pub task: TaskKey,
    pub sessions: usize,
    pub passing_sessions: usize,
    pub target_passing_sessions: usize,
    pub complete: bool,
    /// Sessions per injected violation, `none` included.
    pub injected: BTreeMap<Violation, usize>,
    /// Sessions flagged per quality check.
    pub flagged: BTreeMap<String, usize>,
    /// Proportion correct over the main trials of passing sessions.
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub tasks: Vec<TaskReport>,
    pub records: usize,
    pub main: usize,
    pub development: usize,
}

/// Runs one simulated campaign per task against an in-process service on a
/// virtual clock, then exports the responses to `out/dataset`.
pub fn run(cfg: &RunConfig) -> Result<SimulateReport, CliError> {
    let manifest = load_manifest(cfg)?;
    let clock = ClockMode::Virtual {
        epoch_ms: cfg.simulate.epoch_ms,
    };
    let svc = service_config(cfg, &manifest, TOKEN.into(), clock)?;
    let tasks = svc.tasks.clone().unwrap_or_default();
    let state = Arc::new(AppState::new(
        manifest.clone(),
        &store::images_dir(&cfg.prepared_dir()),
        svc,
    )?);
    let client = Client::in_process(router(state), TOKEN, true);
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Run(e.to_string()))?;
    let report = runtime.block_on(async {
        let truth = GroundTruth::fetch(&client, &manifest).await?;
        let mut reports = Vec::new();
        for task in &tasks {
            log::info!("simulating {task}");
            let campaign = CampaignConfig {
                task: task.clone(),
                wave_size: cfg.simulate.wave_size,
                failure_rate: cfg.simulate.failure_rate,
                profile: ParticipantProfile {
                    accuracy: cfg.simulate.accuracy,
                    task_accuracy: cfg.simulate.task_accuracy.clone(),
                    catch_accuracy: cfg.simulate.catch_accuracy,
                    seed: cfg.stream_seed(&format!("participants/{task}")),
                    ..ParticipantProfile::default()
                },
                seed: cfg.stream_seed(&format!("campaign/{task}")),
                max_sessions: cfg.simulate.max_sessions,
            };
            let out = run_campaign(&client, &truth, &campaign).await?;
            let mut injected = BTreeMap::new();
            let mut flagged = BTreeMap::new();
            let (mut trials, mut correct) = (0, 0);
            for o in &out.outcomes {
                *injected.entry(o.violation).or_insert(0) += 1;
                for name in o.quality.failed_names() {
                    *flagged.entry(name).or_insert(0) += 1;
                }
                if o.quality.passed {
                    trials += o.real_trials;
                    correct += o.main_correct;
                }
            }
            reports.push(TaskReport {
                task: task.clone(),
                sessions: out.outcomes.len(),
                passing_sessions: out.status.passing_sessions,
                target_passing_sessions: out.status.target_passing_sessions,
                complete: out.status.complete,
                injected,
                flagged,
                mean_accuracy: if trials == 0 { 0.0 } else { correct as f64 / trials as f64 },
            });
        }
        let records = client.records().await?;
        fresh_dir(&cfg.dataset_dir())?;
        client.export().await?;
        let part = partition_quality(&records);
        Ok::<_, CliError>(SimulateReport {
            tasks: reports,
            records: records.len(),
            main: part.main.len(),
            development: part.development.len(),
        })
    })?;
    write_report(&cfg.simulate_dir().join(REPORT_FILE), &cfg.hash(), &report)?;
    if let Some(t) = report.tasks.iter().find(|t| !t.complete) {
        return Err(CliError::Run(format!(
            "campaign for {} stopped at {}/{} passing sessions",
            t.task, t.passing_sessions, t.target_passing_sessions
        )));
    }
    Ok(report)
}
