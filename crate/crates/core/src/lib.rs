pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod generate;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod train;
pub mod vocab;


pub use error::{Error, Result};
