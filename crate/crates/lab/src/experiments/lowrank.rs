use hmc_kappa::precond::{circulant_covariance, train_diag_lowrank, LossMode, TrainOptions};
use hmc_kappa::GeneratorParams;

use super::{extra_f64, extra_usize, first_dim};
use crate::error::{LabError, Result};
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};

/// Circulant profile used for the low-rank runs: m = 1, M = 5, β = 8.
pub const CIRCULANT_MIN: f64 = 1.0;
pub const CIRCULANT_MAX: f64 = 5.0;
pub const CIRCULANT_BETA: f64 = 8.0;

pub fn lowrank_config(n: usize, cutoff: f64, rank: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("lowrank_train", seed)
        .with_extra("rank", rank)
        .with_extra("mc_draws", 0);
    c.dims = vec![n];
    c.generators = vec![GeneratorParams {
        min: CIRCULANT_MIN,
        max: CIRCULANT_MAX,
        cutoff,
        beta: CIRCULANT_BETA,
    }];
    c
}

/// Trains F = D + UUᵀ on a circulant target; the table is the objective trace.
///
/// A positive `mc_draws` setting switches to the Monte Carlo loss.
pub fn lowrank_train(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let n = first_dim(config)?;
    let rank = extra_usize(config, "rank")?;
    let params = *config
        .generators
        .first()
        .ok_or_else(|| LabError::InvalidConfig("no generator parameters".into()))?;
    let draws = extra_f64(config, "mc_draws").unwrap_or(0.0) as usize;
    let opts = TrainOptions {
        loss: if draws > 0 {
            LossMode::MonteCarlo { draws }
        } else {
            LossMode::ClosedForm
        },
        ..TrainOptions::default()
    };

    let circ = circulant_covariance(n, &params)?;
    let threshold = 0.5 * (params.min + params.max);
    let large = circ.variances.iter().filter(|v| v.sqrt() > threshold).count();
    let res = train_diag_lowrank(&circ.covariance, rank, &opts, config.seed)?;

    let mut table = Table::new(&["iteration", "objective"]);
    for (i, v) in res.trace.iter().enumerate() {
        table.push(vec![Cell::from(i), Cell::from(*v)]);
    }
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("n", n);
    rec.set("rank", rank);
    rec.set("large_eigenvalues", large);
    rec.set("kappa_before", res.kappa_before);
    rec.set("kappa_after", res.kappa_after);
    rec.set("reduction", res.kappa_before / res.kappa_after);
    rec.set("initial_objective", res.initial_objective);
    rec.set("final_objective", res.final_objective);
    rec.set("iterations", res.iterations);
    rec.set("converged", res.converged);
    rec.set("preconditioner", serde_json::to_value(&res.spec)?);
    Ok(rec)
}
