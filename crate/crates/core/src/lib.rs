pub mod attacks;
pub mod bottleneck;
pub mod config;
pub mod error;
pub mod graph;
pub mod harness;
pub mod mi;
pub mod nn;
pub mod predictor;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
