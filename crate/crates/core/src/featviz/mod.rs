//! Feature visualization: gradient ascent in input space with augmentation,
//! a batch-diversity regularizer, adaptive stopping and a per-unit search
//! for the diversity weight.

pub mod augment;
pub mod diversity;
pub mod search;
pub mod synth;

pub use augment::{default_augmentations, Augmentation, Warp};
pub use diversity::{diversity_gradient, diversity_penalty};
pub use search::{search_diversity, search_lambda, DiversitySearchResult, Probe, BINARY_STEPS, DEFAULT_MAX_EXPONENTIAL_PROBES};
pub use synth::{should_halt, synthesize, FeatureVizConfig, Sign, SynthesisResult};
