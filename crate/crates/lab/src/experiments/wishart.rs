use hmc_kappa::randmat::{asymptotic_kappa, inverse_wishart_kappa_draw};
use hmc_kappa::rng::derive_seed;
use serde_json::json;

use crate::error::{LabError, Result};
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};
use crate::stats::{mean, median};
use crate::trials::{partition, run_trials};

pub fn wishart_config(dims: &[usize], ratios: &[f64], draws: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("wishart_kappa", seed);
    c.dims = dims.to_vec();
    c.ratios = ratios.to_vec();
    c.trials = draws;
    c
}

/// κ of inverse-Wishart(N, S) draws for each (N, S/N) cell, next to the
/// large-N formula.
///
/// Cell `j` in (dims × ratios) order draws its trials from
/// `derive_seed(seed, j)`.
pub fn wishart_kappa(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    if config.dims.is_empty() || config.ratios.is_empty() {
        return Err(LabError::InvalidConfig("need at least one dimension and one ratio".into()));
    }
    let mut table = Table::new(&["n", "s", "trial_index", "trial_seed", "kappa", "error"]);
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut j = 0u64;
    for &n in &config.dims {
        for &ratio in &config.ratios {
            let s = (ratio * n as f64).round() as usize;
            let cell_seed = derive_seed(config.seed, j);
            j += 1;
            let trials = run_trials(config.trials, cell_seed, |_, seed| {
                Ok(inverse_wishart_kappa_draw(n, s, seed)?)
            });
            for t in &trials {
                let (kappa, err) = match &t.outcome {
                    Ok(k) => (Cell::from(*k), Cell::Empty),
                    Err(f) => (Cell::Empty, Cell::from(format!("{}: {}", f.kind, f.message))),
                };
                table.push(vec![
                    Cell::from(n),
                    Cell::from(s),
                    Cell::from(t.index),
                    Cell::from(t.seed),
                    kappa,
                    err,
                ]);
            }
            let (ok, failed) = partition(trials);
            failures.extend(failed);
            let ks: Vec<f64> = ok.into_iter().map(|(_, _, k)| k).collect();
            let omega = s as f64 / n as f64;
            cells.push(json!({
                "n": n,
                "s": s,
                "draws": ks.len(),
                "mean_kappa": if ks.is_empty() { None } else { Some(mean(&ks)) },
                "median_kappa": if ks.is_empty() { None } else { Some(median(&ks)) },
                "asymptotic_kappa": asymptotic_kappa(n, omega).ok(),
            }));
        }
    }
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("cells", cells);
    rec.failures = failures;
    Ok(rec)
}
