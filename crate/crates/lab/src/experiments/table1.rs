use std::collections::BTreeMap;

use hmc_kappa::precond::{compare_preconditioners, Method, Table1Ensemble};
use hmc_kappa::rng::{derive_seed, seeded};
use serde_json::json;

use super::first_dim;
use crate::error::{LabError, Result};
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};
use crate::trials::{partition, run_trials};

/// Majority winners reported for the five ensembles, in [`Table1Ensemble::ALL`] order.
pub const TABLE1_WINNERS: [Method; 5] = [
    Method::FwdKl,
    Method::FwdKl,
    Method::FwdKl,
    Method::RevKl,
    Method::Nothing,
];

pub fn table1_config(n: usize, trials: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("precond_compare", seed);
    c.dims = vec![n];
    c.trials = trials;
    c
}

/// Which diagonal preconditioner gives the lowest κ, per random ensemble.
///
/// Ensemble `e` draws its trials from `derive_seed(seed, e)`.
pub fn table1(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    let n = first_dim(config)?;
    if n < 2 {
        return Err(LabError::InvalidConfig("ensembles need N >= 2".into()));
    }
    let mut table = Table::new(&[
        "trial",
        "kind",
        "trial_seed",
        "kappa_nothing",
        "kappa_fwd",
        "kappa_rev",
        "winner",
        "error",
    ]);
    let mut summary = BTreeMap::new();
    let mut failures = Vec::new();
    let mut all_match = true;

    for (e, (ensemble, expected)) in Table1Ensemble::ALL.iter().zip(TABLE1_WINNERS).enumerate() {
        let label = ensemble.label();
        let trials = run_trials(config.trials, derive_seed(config.seed, e as u64), |_, seed| {
            let c = ensemble.sample(n, &mut seeded(seed))?;
            Ok(compare_preconditioners(&c)?)
        });
        for t in &trials {
            let mut row = vec![Cell::from(t.index), Cell::from(label.as_str()), Cell::from(t.seed)];
            match &t.outcome {
                Ok(c) => row.extend([
                    Cell::from(c.kappa_nothing),
                    Cell::from(c.kappa_fwd),
                    Cell::from(c.kappa_rev),
                    Cell::from(c.winner.label()),
                    Cell::Empty,
                ]),
                Err(f) => row.extend([
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::Empty,
                    Cell::from(format!("{}: {}", f.kind, f.message)),
                ]),
            }
            table.push(row);
        }
        let (ok, failed) = partition(trials);
        failures.extend(failed);

        let mut wins: BTreeMap<Method, usize> = Method::ALL.iter().map(|m| (*m, 0)).collect();
        for (_, _, c) in &ok {
            *wins.entry(c.winner).or_default() += 1;
        }
        // Ties in the count go to the earlier method.
        let majority = Method::ALL
            .iter()
            .copied()
            .fold(Method::Nothing, |best, m| if wins[&m] > wins[&best] { m } else { best });
        let total = ok.len().max(1) as f64;
        let pct: BTreeMap<&str, f64> = wins
            .iter()
            .map(|(m, w)| (m.label(), 100.0 * *w as f64 / total))
            .collect();
        let matches = majority == expected && !ok.is_empty();
        all_match &= matches;
        summary.insert(
            label,
            json!({
                "trials": ok.len(),
                "win_percent": pct,
                "majority": majority.label(),
                "expected": expected.label(),
                "matches": matches,
            }),
        );
    }
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("ensembles", serde_json::to_value(summary)?);
    rec.set("all_winners_match", all_match);
    rec.failures = failures;
    Ok(rec)
}
