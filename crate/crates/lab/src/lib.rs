//! Experiment driver for the `hmc-kappa` toolkit.
//!
//! Experiments are seeded, run their trials on the rayon pool, and write a
//! CSV table, a summary JSON and a run manifest (see [`output`]). The
//! `hmc-kappa` binary exposes them as subcommands through [`cli`].

pub mod cli;
pub mod error;
pub mod experiments;
pub mod output;
pub mod stats;
pub mod trials;

pub use error::{LabError, Result};
pub use output::{ExperimentConfig, ExperimentRecord};
pub use stats::{r_squared, RSquared};
