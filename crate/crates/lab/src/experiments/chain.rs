use hmc_kappa::integrator::IntegrationTimeLaw;
use hmc_kappa::sampler::{
    alpha_for_acceptance, run_chain, run_chain_exact_gaussian, step_size_exact, tune_step_size,
    ChainBackend, TuneBudget,
};
use hmc_kappa::spectra::kappa;
use hmc_kappa::{ChainConfig, ChainResult, CovarianceModel, Spectrum};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::output::{Cell, ExperimentConfig, ExperimentRecord, Table};

/// How the step size of an `hmc run` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StepChoice {
    Fixed { h: f64 },
    /// h_N from the step-size law for this acceptance.
    Theory { accept: f64 },
    /// Bisection on pilot chains.
    Tuned { accept: f64 },
}

/// A single chain on diag(σ²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcRunSpec {
    pub sigmas: Vec<f64>,
    pub step: StepChoice,
    pub proposals: usize,
    /// Integrate with leapfrog instead of the closed form.
    pub leapfrog: bool,
    pub law_lo: f64,
    pub law_hi: f64,
}

impl HmcRunSpec {
    pub fn config(&self, seed: u64) -> Result<ExperimentConfig> {
        let mut c = ExperimentConfig::new("hmc_run", seed);
        c.dims = vec![self.sigmas.len()];
        c.trials = self.proposals;
        c.extra.insert("run".into(), serde_json::to_value(self)?);
        Ok(c)
    }
}

pub struct HmcRunOutput {
    pub record: ExperimentRecord,
    pub result: ChainResult,
}

/// Runs one chain; the table is the per-proposal Δ stream.
pub fn hmc_run(config: &ExperimentConfig, spec: &HmcRunSpec) -> Result<HmcRunOutput> {
    config.validate()?;
    let spectrum = Spectrum::new(spec.sigmas.clone())?;
    let law = IntegrationTimeLaw::new(spec.law_lo, spec.law_hi, spectrum.sigma_max())?;
    let model = CovarianceModel::from_spectrum(&spectrum);
    let backend = if spec.leapfrog {
        ChainBackend::Leapfrog(&model)
    } else {
        ChainBackend::ExactModes(&spectrum)
    };
    let (h, target, tune_iterations) = match spec.step {
        StepChoice::Fixed { h } => (h, None, None),
        StepChoice::Theory { accept } => {
            (step_size_exact(&spectrum, alpha_for_acceptance(accept)?, &law), Some(accept), None)
        }
        StepChoice::Tuned { accept } => {
            let out = tune_step_size(&backend, accept, &law, &TuneBudget::default(), config.seed)?;
            (out.step_size, Some(accept), Some(out.iterations))
        }
    };
    let cfg = ChainConfig {
        step_size: h,
        law,
        n_proposals: spec.proposals,
        seed: config.seed,
        record_samples: false,
    };
    let result = if spec.leapfrog {
        run_chain(&model, &cfg)?
    } else {
        run_chain_exact_gaussian(&spectrum, &cfg)?
    };

    let mut table = Table::new(&["proposal_index", "delta", "accepted"]);
    for (i, (d, a)) in result.delta_samples.iter().zip(&result.accepted).enumerate() {
        table.push(vec![Cell::from(i), Cell::from(*d), Cell::from(usize::from(*a))]);
    }
    let m = result.delta_moments();
    let mut rec = ExperimentRecord::new(config, table);
    rec.set("n", spectrum.dim());
    rec.set("kappa", kappa(&spectrum));
    rec.set("step_size", h);
    rec.set("accept_rate", result.accept_rate);
    rec.set("mean_accept_prob", result.mean_accept_prob);
    rec.set("delta_mean", m.mean);
    rec.set("delta_variance", m.variance);
    rec.set("delta_skewness", m.skewness);
    rec.set("leapfrog_steps_total", result.leapfrog_steps_total);
    rec.set("rng", result.rng.clone());
    if let Some(t) = target {
        rec.set("target_accept", t);
        rec.set("alpha", alpha_for_acceptance(t)?);
    }
    if let Some(i) = tune_iterations {
        rec.set("tune_iterations", i);
    }
    Ok(HmcRunOutput { record: rec, result })
}
