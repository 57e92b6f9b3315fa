pub mod alignment;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod model;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
