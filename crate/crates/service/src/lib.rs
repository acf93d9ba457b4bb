//! HTTP experiment service for 2-AFC unit interpretability studies, plus
//! simulated participants that exercise it end to end.

pub mod api;
pub mod app;
pub mod client;
pub mod sim;

pub use app::{router, serve, AppState, ClockMode, ServiceConfig};
pub use client::Client;
