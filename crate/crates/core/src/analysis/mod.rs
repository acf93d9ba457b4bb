//! Statistics over response records and activation maps.

pub mod bootstrap;
pub mod conover;
pub mod correlation;
pub mod difficulty;
pub mod power;
pub mod predictors;
pub mod ranks;
pub mod scores;

pub use bootstrap::{bootstrap_ci, percentile, BootstrapCI};
pub use conover::{conover_holm, holm_adjust, stars, ConoverHolm, PairwiseComparison};
pub use correlation::{
    cross_condition_correlation, layer_position_analysis, score_vs_metric, spearman, LayerPoint,
    LayerPositionResult, MetricRow, ScoreMetricResult, SpearmanResult,
};
pub use difficulty::{difficulty_analysis, DifficultyReport, UnitDifficulty};
pub use power::{power_analysis, PowerParams, PowerResult};
pub use predictors::{local_contrast, map_contrast, predictor_sparseness, unit_maps, Sparseness};
pub use ranks::average_ranks;
pub use scores::{confidence_split, mean_score, unit_scores, ConfidenceLevel, ConfidenceSplit, UnitScore};
