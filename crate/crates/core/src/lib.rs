pub mod baselines;
pub mod error;
pub mod eval;
pub mod lrco;
pub mod maximizer;
pub mod minimizer;
pub mod nn;
pub mod problem;
pub mod scalar;
pub mod vec;

pub use error::{Error, Result};

/// Double-precision aliases for the generic core types.
pub type Mlp = nn::Mlp<f64>;
pub type Adam = nn::AdamState<f64>;
pub type Uncertainty = problem::UncertaintySet<f64>;
pub type Maximizer = maximizer::MaximizerNet<f64>;
pub type Ensemble = maximizer::MaximizerEnsemble<f64>;
pub type Policy = minimizer::MinimizerPolicy<f64>;
pub type Model = lrco::LrcoModel<f64>;
pub type VecCost = vec::VecCost<f64>;
