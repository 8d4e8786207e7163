//! Configuration, file formats, parallel execution and the command-line
//! front end for the squeezing-amplified impulse sensor simulation.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod formats;
pub mod output;
pub mod parallel;
pub mod presets;
pub mod selftest;

pub use error::{AppError, Result};
