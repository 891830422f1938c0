//! Bayes shrinkage rules induced by deep ReLU network priors in the normal
//! location model `Y ~ N_p(θ, I_p)`, with Monte Carlo risk estimation,
//! a horseshoe reference sampler, predictive densities under KL loss and
//! numerical minimaxity diagnostics.

pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod horseshoe;
pub mod mixing;
pub mod predictive;
pub mod quadrature;
pub mod risk;
pub mod rng;
pub mod shrinkage;
pub mod specialfn;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
