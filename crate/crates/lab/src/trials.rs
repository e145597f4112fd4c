//! Seeded trial dispatch over the rayon pool.

use rayon::prelude::*;

use hmc_kappa::rng::derive_seed;

use crate::error::LabError;
use crate::output::TrialFailure;

/// One trial's outcome, tagged with its index and derived seed.
#[derive(Debug, Clone)]
pub struct Trial<T> {
    pub index: usize,
    pub seed: u64,
    pub outcome: Result<T, TrialFailure>,
}

/// Runs `n` trials, trial `i` with seed `derive_seed(seed, i)`.
///
/// Results come back in index order whatever the completion order, and a
/// failing trial is captured instead of aborting the batch.
pub fn run_trials<T, F>(n: usize, seed: u64, f: F) -> Vec<Trial<T>>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T, LabError> + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let outcome = f(i, s).map_err(|e| TrialFailure {
                trial: i,
                seed: s,
                kind: e.kind().to_string(),
                message: e.to_string(),
            });
            Trial {
                index: i,
                seed: s,
                outcome,
            }
        })
        .collect()
}

/// Splits trials into successes and failures, keeping index order.
pub fn partition<T>(trials: Vec<Trial<T>>) -> (Vec<(usize, u64, T)>, Vec<TrialFailure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for t in trials {
        match t.outcome {
            Ok(v) => ok.push((t.index, t.seed, v)),
            Err(e) => failed.push(e),
        }
    }
    (ok, failed)
}
