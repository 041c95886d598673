pub mod error;
pub mod estimator;
pub mod harness;
pub mod map_model;
pub mod metrics;
pub mod nn;
pub mod noise_sim;
pub mod oracle;
pub mod predictor;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
