//! Vehicular edge computing: replicate micro services across vehicular clouds
//! to maximize the probability that every service finishes before its
//! deadline, net of replication cost.

pub mod channel;
pub mod dataset;
pub mod predictor;
pub mod simulate;
pub mod utility;

pub use channel::{compute_delay, dbm_to_watts, transmission_delay, ChannelParams};
pub use dataset::{file_sha256, generate_instances, Dataset, DatasetConfig, FeatureDistribution, ProblemInstance, Split};
pub use predictor::{
    error_budget, fit_linear, fit_residual, percentile, prediction_errors, training_pairs, LinearPredictor,
    Predictor, ResidualFitConfig, ResidualPredictor,
};
pub use simulate::{simulate_success_rate, Feature, SimulationParams};
pub use utility::{success_probability, utility, utility_gradient_in_x, OffloadShape, UtilityTable, VecCost};
