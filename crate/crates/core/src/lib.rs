//! Core library for measuring per-unit interpretability of vision models
//! with two-alternative forced-choice (2-AFC) psychophysics.
//!
//! The pipeline runs: record activations ([`model`]), pick units
//! ([`sampler`]), build natural and synthetic stimuli ([`stimulus`],
//! [`featviz`]), schedule and quality-check sessions ([`experiment`]),
//! persist responses ([`store`]) and analyse them ([`analysis`]).

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod featviz;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod stimulus;
pub mod store;

pub use error::{ImiError, Result};
