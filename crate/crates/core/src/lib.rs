pub mod config;
pub mod error;
pub mod harness;
pub mod optics;
pub mod optimizer;
pub mod output;
pub mod phy;
pub mod predictor;
pub mod rng;
pub mod stats;
pub mod traffic;

pub use error::{Error, Result};
