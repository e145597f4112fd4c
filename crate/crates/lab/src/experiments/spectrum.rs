use hmc_kappa::rng::seeded;
use hmc_kappa::spectra::{decay_assumption_ratio, kappa, nu, random_spectrum};
use hmc_kappa::GeneratorParams;

use super::first_dim;
use crate::error::{LabError, Result};
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};

pub fn spectrum_config(n: usize, params: GeneratorParams, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("spectrum_gen", seed);
    c.dims = vec![n];
    c.generators = vec![params];
    c
}

/// One generator spectrum on `n` uniform points drawn from the seed.
pub fn spectrum_gen(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let n = first_dim(config)?;
    let params = *config
        .generators
        .first()
        .ok_or_else(|| LabError::InvalidConfig("no generator parameters".into()))?;
    let s = random_spectrum(n, &params, &mut seeded(config.seed))?;
    let mut table = Table::new(&["rank", "sigma"]);
    for (i, v) in s.sigmas().iter().enumerate() {
        table.push(vec![Cell::from(i + 1), Cell::from(*v)]);
    }
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("n", n);
    rec.set("kappa", kappa(&s));
    rec.set("nu", nu(&s));
    rec.set("decay_ratio", decay_assumption_ratio(&s));
    rec.set("sigma_max", s.sigma_max());
    rec.set("sigma_min", s.sigma_min());
    Ok(rec)
}
