pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod features;
pub mod gradsuite;
pub mod metrics;
pub mod models;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
