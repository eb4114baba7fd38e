//! Simulation, estimation and counterfactual analysis for dynamic latent
//! skill-formation models with factor-structured measurements.

pub mod counterfact;
pub mod error;
pub mod firststep;
pub mod mc;
pub mod mixture;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod secondstep;
pub mod simulate;
pub mod stats;

pub use error::{Error, Result};
pub use mixture::MixtureModel;
