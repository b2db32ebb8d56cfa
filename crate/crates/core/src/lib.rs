pub mod amodal;
pub mod autodiff;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulator;
pub mod trainer;

pub use error::{Error, Result};
