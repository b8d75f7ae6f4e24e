pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod linearize;
pub mod methods;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
