use std::collections::BTreeMap;

use hmc_kappa::integrator::IntegrationTimeLaw;
use hmc_kappa::rng::{derive_seed, seeded};
use hmc_kappa::sampler::{
    estimate_sigma1, infer_kappa, plug_in_kappa, run_chain_exact_gaussian, tune_step_size,
    ChainBackend, TuneBudget,
};
use hmc_kappa::spectra::{kappa, random_spectrum};
use hmc_kappa::{ChainConfig, Error, GeneratorParams};
use serde_json::json;

use crate::error::{LabError, Result};
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};
use crate::stats::{mean, r_squared, RSquared};
use crate::trials::{partition, run_trials};

/// Generator grid: m = 1, M ∈ {5, 20}, c ∈ {0.25, 0.75}, β ∈ {2, 6}.
pub fn generator_grid() -> Vec<GeneratorParams> {
    let mut grid = Vec::new();
    for max in [5.0, 20.0] {
        for cutoff in [0.25, 0.75] {
            for beta in [2.0, 6.0] {
                grid.push(GeneratorParams {
                    min: 1.0,
                    max,
                    cutoff,
                    beta,
                });
            }
        }
    }
    grid
}

/// Desk scale: N ≤ 256, 13 spectra per (N, generator) cell (104 per N),
/// S/N ∈ {4, 8}. The full grid adds N = 512, all six ratios and 60 spectra
/// per cell.
pub fn inference_config(full_grid: bool, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new("kappa_inference", seed);
    c.generators = generator_grid();
    c.targets = vec![0.8, 0.95];
    if full_grid {
        c.dims = vec![32, 64, 128, 256, 512];
        c.ratios = vec![4.0, 6.0, 8.0, 12.0, 16.0, 32.0];
        c.trials = 60;
    } else {
        c.dims = vec![32, 64, 128, 256];
        c.ratios = vec![4.0, 8.0];
        c.trials = 13;
    }
    c
}

struct Outcome {
    n: usize,
    params: GeneratorParams,
    target: f64,
    ratio: f64,
    samples: usize,
    step_size: f64,
    tuned: bool,
    acceptance: f64,
    truth: f64,
    plugin: f64,
    estimated: f64,
    known: f64,
}

fn one_spectrum(
    n: usize,
    params: GeneratorParams,
    target: f64,
    ratio: f64,
    seed: u64,
) -> Result<Outcome> {
    let spectrum = random_spectrum(n, &params, &mut seeded(seed))?;
    let law = IntegrationTimeLaw::default_for(spectrum.sigma_max())?;
    let backend = ChainBackend::ExactModes(&spectrum);
    let (h, tuned) =
        match tune_step_size(&backend, target, &law, &TuneBudget::default(), derive_seed(seed, 1)) {
            Ok(t) => (t.step_size, true),
            Err(Error::BudgetExhausted { best_step_size, .. }) if best_step_size.is_finite() => {
                (best_step_size, false)
            }
            Err(e) => return Err(e.into()),
        };
    let samples = (ratio * n as f64).round() as usize;
    let cfg = ChainConfig {
        step_size: h,
        law,
        n_proposals: samples,
        seed: derive_seed(seed, 2),
        record_samples: true,
    };
    let res = run_chain_exact_gaussian(&spectrum, &cfg)?;
    let acceptance = res.mean_accept_prob;
    Ok(Outcome {
        n,
        params,
        target,
        ratio,
        samples,
        step_size: h,
        tuned,
        acceptance,
        truth: kappa(&spectrum),
        plugin: plug_in_kappa(&res.samples)?,
        estimated: infer_kappa(estimate_sigma1(&res.samples)?, h, acceptance)?,
        known: infer_kappa(spectrum.sigma_max(), h, acceptance)?,
    })
}

fn both_r2(truth: &[f64], est: &[f64]) -> Option<serde_json::Value> {
    let raw = r_squared(truth, est).ok()?;
    let ln = |v: &[f64]| v.iter().map(|x| x.ln()).collect::<Vec<_>>();
    let log: RSquared = r_squared(&ln(truth), &ln(est)).ok()?;
    Some(json!({ "raw": raw, "log": log }))
}

/// Infers κ from tuned chains on random generator spectra.
///
/// For every spectrum: tune h to the target acceptance on pilot chains, draw
/// S = ratio·N samples, then compare the plug-in κ of the sample covariance
/// and the acceptance-based κ̂ (with σ̂₁ from the samples, and with the
/// known σ₁) against the true κ. Trial `i` of cell `j` (dims × generators)
/// uses `derive_seed(derive_seed(seed, j), i)`; targets and ratios cycle with
/// the trial index.
pub fn kappa_inference(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    config.validate()?;
    if config.dims.is_empty()
        || config.ratios.is_empty()
        || config.targets.is_empty()
        || config.generators.is_empty()
    {
        return Err(LabError::InvalidConfig(
            "kappa inference needs dimensions, ratios, targets and generators".into(),
        ));
    }
    let mut table = Table::new(&[
        "trial",
        "trial_seed",
        "n",
        "max",
        "cutoff",
        "beta",
        "target",
        "ratio",
        "samples",
        "step_size",
        "tuned",
        "acceptance",
        "kappa_true",
        "kappa_plugin",
        "kappa_inferred_estimated",
        "kappa_inferred_known",
        "error",
    ]);
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    let mut trial_base = 0;
    let mut j = 0u64;
    let (nt, nr) = (config.targets.len(), config.ratios.len());
    for &n in &config.dims {
        for &params in &config.generators {
            let trials = run_trials(config.trials, derive_seed(config.seed, j), |i, seed| {
                one_spectrum(n, params, config.targets[i % nt], config.ratios[(i / nt) % nr], seed)
            });
            j += 1;
            for t in &trials {
                let mut row = vec![Cell::from(trial_base + t.index), Cell::from(t.seed)];
                match &t.outcome {
                    Ok(o) => row.extend([
                        Cell::from(o.n),
                        Cell::from(o.params.max),
                        Cell::from(o.params.cutoff),
                        Cell::from(o.params.beta),
                        Cell::from(o.target),
                        Cell::from(o.ratio),
                        Cell::from(o.samples),
                        Cell::from(o.step_size),
                        Cell::from(usize::from(o.tuned)),
                        Cell::from(o.acceptance),
                        Cell::from(o.truth),
                        Cell::from(o.plugin),
                        Cell::from(o.estimated),
                        Cell::from(o.known),
                        Cell::Empty,
                    ]),
                    Err(f) => {
                        row.push(Cell::from(n));
                        row.extend([params.max, params.cutoff, params.beta].map(Cell::from));
                        row.extend(std::iter::repeat_n(Cell::Empty, 10));
                        row.push(Cell::from(format!("{}: {}", f.kind, f.message)));
                    }
                }
                table.push(row);
            }
            trial_base += config.trials;
            let (ok, failed) = partition(trials);
            failures.extend(failed);
            outcomes.extend(ok.into_iter().map(|(_, _, o)| o));
        }
    }

    let column = |f: fn(&Outcome) -> f64, subset: &[&Outcome]| subset.iter().map(|o| f(o)).collect::<Vec<_>>();
    let all: Vec<&Outcome> = outcomes.iter().collect();
    let truth = column(|o| o.truth, &all);
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("spectra", outcomes.len());
    rec.set("untuned", outcomes.iter().filter(|o| !o.tuned).count());
    for (name, f) in [
        ("plugin", (|o: &Outcome| o.plugin) as fn(&Outcome) -> f64),
        ("inferred_estimated", |o: &Outcome| o.estimated),
        ("inferred_known", |o: &Outcome| o.known),
    ] {
        let est = column(f, &all);
        rec.set(&format!("r2_{name}"), both_r2(&truth, &est));
        let bias: Vec<f64> = est.iter().zip(&truth).map(|(e, t)| e - t).collect();
        rec.set(&format!("mean_bias_{name}"), if bias.is_empty() { None } else { Some(mean(&bias)) });
    }
    let mut per_n = BTreeMap::new();
    for &n in &config.dims {
        let sub: Vec<&Outcome> = outcomes.iter().filter(|o| o.n == n).collect();
        let t = column(|o| o.truth, &sub);
        per_n.insert(
            n.to_string(),
            json!({
                "spectra": sub.len(),
                "r2_inferred_known": both_r2(&t, &column(|o| o.known, &sub)),
                "r2_plugin": both_r2(&t, &column(|o| o.plugin, &sub)),
            }),
        );
    }
    rec.set("per_dimension", serde_json::to_value(per_n)?);
    rec.failures = failures;
    Ok(rec)
}
