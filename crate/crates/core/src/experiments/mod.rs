//! Seeded experiment harnesses and the manifest-driven runner behind the CLI.

pub mod cml_front;
pub mod coupling;
pub mod density;
pub mod percolation;
pub mod runner;
pub mod survival;

pub use runner::{rerun_from_manifest, run_experiment, Experiment, OutputFormat, RunConfig, RunManifest};
