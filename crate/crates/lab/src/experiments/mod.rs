//! Desk-scale experiment drivers. Each returns an [`ExperimentRecord`]
//! holding one table row per trial plus summary statistics.
//!
//! [`ExperimentRecord`]: crate::output::ExperimentRecord

mod blocks;
mod burnin;
mod chain;
mod inference;
mod lowrank;
mod spectrum;
mod table1;
mod wishart;

pub use blocks::{blocks_config, precond_blocks};
pub use burnin::{burnin_config, burnin_plan};
pub use chain::{hmc_run, HmcRunOutput, HmcRunSpec, StepChoice};
pub use inference::{inference_config, kappa_inference};
pub use lowrank::{lowrank_config, lowrank_train};
pub use spectrum::{spectrum_config, spectrum_gen};
pub use table1::{table1, table1_config, TABLE1_WINNERS};
pub use wishart::{wishart_config, wishart_kappa};

use serde_json::Value;

use crate::error::{LabError, Result};
use crate::output::ExperimentConfig;

fn extra_f64(config: &ExperimentConfig, key: &str) -> Result<f64> {
    config
        .extra
        .get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| LabError::InvalidConfig(format!("missing numeric setting `{key}`")))
}

fn extra_usize(config: &ExperimentConfig, key: &str) -> Result<usize> {
    config
        .extra
        .get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| LabError::InvalidConfig(format!("missing integer setting `{key}`")))
}

fn first_dim(config: &ExperimentConfig) -> Result<usize> {
    config
        .dims
        .first()
        .copied()
        .ok_or_else(|| LabError::InvalidConfig("no dimension given".into()))
}
