//! Configuration, file formats and experiment pipelines behind the `agmmn` binary.

pub mod config;
pub mod io;
pub mod pipeline;

pub use config::{Experiment, RunConfig};
pub use pipeline::{run, Manifest};
