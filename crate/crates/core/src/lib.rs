pub mod autodiff;
pub mod blocks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod mask;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod params;
pub mod scan2d;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
