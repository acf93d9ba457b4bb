use std::sync::Arc;
use std::time::Duration;

use imi_core::store::StimulusManifest;
use imi_service::{AppState, ClockMode, ServiceConfig};

use crate::prepare::load_manifest;
use crate::{CliError, RunConfig};

pub const TOKEN_ENV: &str = "IMI_ADMIN_TOKEN";

/// Service settings shared by `serve` and `simulate`.
pub fn service_config(
    cfg: &RunConfig,
    manifest: &StimulusManifest,
    admin_token: String,
    clock: ClockMode,
) -> Result<ServiceConfig, CliError> {
    let model_id = manifest
        .units
        .first()
        .map(|u| u.unit.model_id.clone())
        .ok_or_else(|| CliError::Run("prepared manifest has no units".into()))?;
    let handle_salt = cfg
        .serve
        .handle_salt
        .clone()
        .unwrap_or_else(|| format!("{:016x}", cfg.stream_seed("handles")));
    Ok(ServiceConfig {
        admin_token,
        clock,
        handle_salt,
        thresholds: cfg.quality.clone(),
        plan: cfg.plan(manifest.units.len())?,
        tasks: Some(cfg.tasks(&model_id)),
        export_dir: Some(cfg.dataset_dir()),
    })
}

/// Serves the prepared stimuli over HTTP until interrupted.
pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    let manifest = load_manifest(cfg)?;
    let token = match &cfg.serve.admin_token {
        Some(t) => t.clone(),
        None => std::env::var(TOKEN_ENV).map_err(|_| {
            CliError::Config(format!("serve.admin_token is unset and {TOKEN_ENV} is not in the environment"))
        })?,
    };
    let clock = if cfg.serve.virtual_clock {
        ClockMode::Virtual {
            epoch_ms: cfg.simulate.epoch_ms,
        }
    } else {
        ClockMode::System
    };
    let svc = service_config(cfg, &manifest, token, clock)?;
    let state = Arc::new(AppState::new(
        manifest,
        &imi_core::store::images_dir(&cfg.prepared_dir()),
        svc,
    )?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Run(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.serve.bind)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {}: {e}", cfg.serve.bind)))?;
        log::info!("listening on {}", cfg.serve.bind);
        imi_service::serve(listener, state, Duration::from_secs(cfg.serve.sweep_seconds.max(1)))
            .await
            .map_err(|e| CliError::Run(e.to_string()))
    })
}
