pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod interval;
pub mod model;
pub mod nn;
pub mod rope;
pub mod synth;
pub mod tokens;
pub mod train;

pub use error::{Error, Result};
