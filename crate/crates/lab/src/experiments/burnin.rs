use hmc_kappa::randmat::{burn_in_plan, g_n, u_function};

use super::{extra_f64, first_dim};
use crate::error::Result;
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};

pub fn burnin_config(kappa0_ratio: f64, dim: usize, final_ratio: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("burnin_plan", 0)
        .with_extra("kappa0_ratio", kappa0_ratio)
        .with_extra("final_ratio", final_ratio);
    c.dims = vec![dim];
    c
}

/// Burn-in plan for κ₀ = ratio·N^{1/4} and S_f = final_ratio·N, plus the
/// curves U(ω) and g_N(ωN) on a grid of ω.
pub fn burnin_plan(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let n = first_dim(config)?;
    let ratio = extra_f64(config, "kappa0_ratio")?;
    let final_ratio = extra_f64(config, "final_ratio")?;
    let root_n = (n as f64).powf(0.25);
    let plan = burn_in_plan(ratio * root_n, n, final_ratio * n as f64)?;

    let mut table = Table::new(&["omega", "u", "kappa_after"]);
    for i in 1..=200 {
        let omega = 1.0 + 0.05 * i as f64;
        table.push(vec![
            Cell::from(omega),
            Cell::from(u_function(omega)),
            Cell::from(g_n(n, omega * n as f64)?),
        ]);
    }
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("kappa0", plan.kappa0);
    rec.set("dim", n);
    rec.set("final_samples", plan.final_samples);
    rec.set("omega_star", plan.omega_star);
    rec.set("s_star", plan.s_star);
    rec.set("s_star_ratio", plan.s_star as f64 / n as f64);
    rec.set("speedup", plan.speedup);
    Ok(rec)
}
