use hmc_kappa::precond::{block_kappas, BlockModel};
use serde_json::Value;

use super::extra_usize;
use crate::error::{LabError, Result};
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};

pub fn blocks_config(rest: &[f64], points: usize) -> ExperimentConfig {
    ExperimentConfig::new("precond_blocks", 0)
        .with_extra("rest_rhos", rest.to_vec())
        .with_extra("points", points)
}

/// κ of unit-diagonal 2×2 block models as ρ₁ sweeps (0, 1) with the other
/// blocks' correlations fixed.
pub fn precond_blocks(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let points = extra_usize(config, "points")?;
    if points == 0 {
        return Err(LabError::InvalidConfig("points must be at least 1".into()));
    }
    let rest: Vec<f64> = match config.extra.get("rest_rhos") {
        Some(Value::Array(a)) => a.iter().filter_map(Value::as_f64).collect(),
        _ => Vec::new(),
    };

    let mut table = Table::new(&["rho1", "kappa_nothing", "kappa_fwd", "kappa_rev", "kappa_opt"]);
    let mut fwd_le_rev = true;
    for i in 1..=points {
        let rho1 = i as f64 / (points + 1) as f64;
        let mut rhos = vec![rho1];
        rhos.extend(&rest);
        let k = block_kappas(&BlockModel::new(rhos, None)?)?;
        fwd_le_rev &= k.fwd <= k.rev;
        table.push(vec![
            Cell::from(rho1),
            Cell::from(k.nothing),
            Cell::from(k.fwd),
            Cell::from(k.rev),
            Cell::from(k.opt),
        ]);
    }
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("blocks", rest.len() + 1);
    rec.set("fwd_never_worse_than_rev", fwd_le_rev);
    Ok(rec)
}
