//! HMC chains on Gaussian targets, step-size laws, tuning and κ inference.

use std::io::{self, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::integrator::{leapfrog_in_place, IntegrationTimeLaw, ModeDynamics};
use crate::linalg::{symmetric_eigenvalues, SpdMatrix};
use crate::normal;
use crate::rng::{seeded, RNG_NAME};
use crate::spectra::{kappa_spd, nu, Spectrum};

/// α = 4 Φ⁻¹(1 − ā/2)², the energy-error scale that yields acceptance ā.
pub fn alpha_for_acceptance(abar: f64) -> Result<f64> {
    if !(abar > 0.0 && abar < 1.0) {
        return Err(Error::OutOfRange(format!(
            "target acceptance {abar} must lie in (0, 1)"
        )));
    }
    let z = normal::quantile(1.0 - 0.5 * abar);
    Ok(4.0 * z * z)
}

/// ā = 2Φ(−√α/2), the limiting acceptance when Δ ~ N(α/2, α).
///
/// Returns NaN for negative or NaN `alpha`.
pub fn acceptance_for_alpha(alpha: f64) -> f64 {
    if !(alpha >= 0.0) {
        return f64::NAN;
    }
    2.0 * normal::cdf(-0.5 * alpha.sqrt())
}

/// h̄ = ((1/α) Σ (2σₙ)⁻⁴ / 2)^{-1/4} = ν⁻¹ (32α)^{1/4}.
pub fn step_size_simple(spectrum: &Spectrum, alpha: f64) -> f64 {
    let s: f64 = spectrum
        .sigmas()
        .iter()
        .map(|sn| 0.5 * (2.0 * sn).powi(-4))
        .sum();
    (s / alpha).powf(-0.25)
}

/// h_N = ((1/α) Σ (2σₙ)⁻⁴ E[sin²(σ₁T/σₙ)])^{-1/4}.
pub fn step_size_exact(spectrum: &Spectrum, alpha: f64, law: &IntegrationTimeLaw) -> f64 {
    let s: f64 = spectrum
        .sigmas()
        .iter()
        .map(|&sn| (2.0 * sn).powi(-4) * law.sin2_average(sn))
        .sum();
    (s / alpha).powf(-0.25)
}

/// Step-size recipe h̄ ≈ ν⁻¹ 2^{7/4} √Φ⁻¹(1 − ā/2).
pub fn step_size_recipe(spectrum: &Spectrum, abar: f64) -> Result<f64> {
    let alpha = alpha_for_acceptance(abar)?;
    Ok(2f64.powf(1.75) * (alpha.sqrt() / 2.0).sqrt() / nu(spectrum))
}

/// Both step-size laws for one target acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizePlan {
    pub alpha: f64,
    pub h_exact: f64,
    pub h_simple: f64,
    pub target_accept: f64,
    /// C_π of the integration-time law.
    pub fourier_bound: f64,
}

impl StepSizePlan {
    pub fn new(spectrum: &Spectrum, target_accept: f64, law: &IntegrationTimeLaw) -> Result<Self> {
        let alpha = alpha_for_acceptance(target_accept)?;
        Ok(Self {
            alpha,
            h_exact: step_size_exact(spectrum, alpha, law),
            h_simple: step_size_simple(spectrum, alpha),
            target_accept,
            fourier_bound: law.fourier_bound(),
        })
    }

    /// Interval (1 + C_π)^{-1/4} h̄ … (1 − C_π)^{-1/4} h̄ that must contain h_N.
    pub fn sandwich(&self) -> (f64, f64) {
        let c = self.fourier_bound;
        (
            (1.0 + c).powf(-0.25) * self.h_simple,
            (1.0 - c).powf(-0.25) * self.h_simple,
        )
    }
}

/// κ̂ = (σ̂₁/h) 2^{7/4} √Φ⁻¹(1 − â/2).
pub fn infer_kappa(sigma1_hat: f64, h: f64, abar_hat: f64) -> Result<f64> {
    if !(sigma1_hat > 0.0 && sigma1_hat.is_finite()) || !(h > 0.0 && h.is_finite()) {
        return Err(Error::OutOfRange(format!(
            "sigma1 = {sigma1_hat} and h = {h} must be positive"
        )));
    }
    if !(abar_hat > 0.0 && abar_hat < 1.0) {
        return Err(Error::OutOfRange(format!(
            "observed acceptance {abar_hat} must lie in (0, 1)"
        )));
    }
    let z = normal::quantile(1.0 - 0.5 * abar_hat);
    Ok(sigma1_hat / h * 2f64.powf(1.75) * z.sqrt())
}

/// Settings shared by both chain implementations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub step_size: f64,
    pub law: IntegrationTimeLaw,
    pub n_proposals: usize,
    pub seed: u64,
    /// Keep the chain state after every proposal.
    pub record_samples: bool,
}

impl ChainConfig {
    fn validate(&self, sigma_min: f64) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "step size {} must be positive",
                self.step_size
            )));
        }
        if self.n_proposals == 0 {
            return Err(Error::InvalidConfig("n_proposals must be at least 1".into()));
        }
        if self.step_size >= 2.0 * sigma_min {
            return Err(Error::Unstable {
                step_size: self.step_size,
                limit: 2.0 * sigma_min,
            });
        }
        Ok(())
    }
}

/// Output of an HMC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    /// Chain states after each proposal (empty unless recorded).
    pub samples: Vec<Vec<f64>>,
    /// Fraction of accepted proposals.
    pub accept_rate: f64,
    /// Mean Metropolis probability min(1, e^{−Δ}).
    pub mean_accept_prob: f64,
    /// Energy error Δ = H(end) − H(start) per proposal.
    pub delta_samples: Vec<f64>,
    pub accepted: Vec<bool>,
    pub seed: u64,
    pub rng: String,
    pub step_size: f64,
    pub leapfrog_steps_total: u64,
}

impl ChainResult {
    /// Writes `proposal_index,delta,accepted` rows with a header.
    pub fn write_delta_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "proposal_index,delta,accepted")?;
        for (i, (d, a)) in self.delta_samples.iter().zip(&self.accepted).enumerate() {
            writeln!(out, "{i},{d:.16e},{}", u8::from(*a))?;
        }
        Ok(())
    }

    /// Sample mean, variance (n − 1) and skewness of Δ.
    pub fn delta_moments(&self) -> Moments {
        Moments::of(&self.delta_samples)
    }
}

/// Mean, unbiased variance and sample skewness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let (mut m2, mut m3) = (0.0, 0.0);
        for v in values {
            let d = v - mean;
            m2 += d * d;
            m3 += d * d * d;
        }
        let variance = m2 / (n - 1.0);
        let skewness = (m3 / n) / (m2 / n).powf(1.5);
        Self {
            mean,
            variance,
            skewness,
        }
    }
}

struct Tally {
    result: ChainResult,
    accept_prob_sum: f64,
}

impl Tally {
    fn new(cfg: &ChainConfig) -> Self {
        Self {
            result: ChainResult {
                samples: Vec::with_capacity(if cfg.record_samples { cfg.n_proposals } else { 0 }),
                accept_rate: 0.0,
                mean_accept_prob: 0.0,
                delta_samples: Vec::with_capacity(cfg.n_proposals),
                accepted: Vec::with_capacity(cfg.n_proposals),
                seed: cfg.seed,
                rng: RNG_NAME.to_string(),
                step_size: cfg.step_size,
                leapfrog_steps_total: 0,
            },
            accept_prob_sum: 0.0,
        }
    }

    /// Records Δ and returns whether the proposal is accepted.
    fn record(&mut self, delta: f64, u: f64, ell: usize) -> bool {
        let prob = if delta.is_nan() { 0.0 } else { (-delta).exp().min(1.0) };
        let accepted = u < prob;
        self.accept_prob_sum += prob;
        self.result.delta_samples.push(delta);
        self.result.accepted.push(accepted);
        self.result.leapfrog_steps_total += ell as u64;
        accepted
    }

    fn finish(mut self) -> ChainResult {
        let n = self.result.delta_samples.len() as f64;
        let acc = self.result.accepted.iter().filter(|a| **a).count() as f64;
        self.result.accept_rate = acc / n;
        self.result.mean_accept_prob = self.accept_prob_sum / n;
        self.result
    }
}

fn normals<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Metropolis-adjusted HMC with leapfrog trajectories.
///
/// Starts in equilibrium, x⁰ ~ N(0, C). Each proposal refreshes ξ ~ N(0, I),
/// draws T from the law, runs ℓ = ⌈σ₁T/h⌉ leapfrog steps and accepts with
/// probability min(1, e^{−Δ}). Random numbers are consumed in the order:
/// N normals for x⁰, then per proposal N normals for ξ, one uniform for T
/// and one uniform for the accept test.
pub fn run_chain(c: &CovarianceModel, cfg: &ChainConfig) -> Result<ChainResult> {
    let spectrum = c.spectrum()?;
    cfg.validate(spectrum.sigma_min())?;
    let n = c.dim();
    let mut rng = seeded(cfg.seed);
    let mut tally = Tally::new(cfg);

    let mut x = c.sample(&mut rng);
    let mut g = vec![0.0; n];
    c.grad_log_density(&x, &mut g);
    let mut xi = vec![0.0; n];
    let (mut x_new, mut xi_new, mut g_new) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut grad = |q: &[f64], out: &mut [f64]| c.grad_log_density(q, out);

    for _ in 0..cfg.n_proposals {
        normals(&mut rng, &mut xi);
        let ell = IntegrationTimeLaw::steps(cfg.law.sample_time(&mut rng), cfg.step_size);
        let u = rng.random::<f64>();

        // Potential from the cached gradient: xᵀC⁻¹x/2 = −xᵀg/2.
        let h0 = energy(&x, &g, &xi);
        x_new.copy_from_slice(&x);
        xi_new.copy_from_slice(&xi);
        g_new.copy_from_slice(&g);
        leapfrog_in_place(&mut x_new, &mut xi_new, &mut g_new, cfg.step_size, ell, &mut grad);
        let delta = energy(&x_new, &g_new, &xi_new) - h0;

        if tally.record(delta, u, ell) {
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut g, &mut g_new);
        }
        if cfg.record_samples {
            tally.result.samples.push(x.clone());
        }
    }
    Ok(tally.finish())
}

fn energy(x: &[f64], g: &[f64], xi: &[f64]) -> f64 {
    let pot: f64 = -0.5 * x.iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
    pot + 0.5 * xi.iter().map(|p| p * p).sum::<f64>()
}

/// Largest number of cached (sin, cos) pairs for the exact chain.
const TRIG_CACHE_LIMIT: usize = 8 << 20;

/// Per-ℓ table of (sin ℓθₙ, cos ℓθₙ), filled on first use.
struct TrigCache {
    ell_min: usize,
    rows: Vec<Option<Vec<(f64, f64)>>>,
}

impl TrigCache {
    fn new(law: &IntegrationTimeLaw, h: f64, n: usize) -> Option<Self> {
        let (lo, hi) = law.step_range(h);
        let ell_min = lo.saturating_sub(1);
        let rows = hi - ell_min + 1;
        if rows.saturating_mul(n) > TRIG_CACHE_LIMIT {
            return None;
        }
        Some(Self {
            ell_min,
            rows: vec![None; rows],
        })
    }

    fn row(&mut self, ell: usize, modes: &[ModeDynamics]) -> Option<&[(f64, f64)]> {
        let idx = ell.checked_sub(self.ell_min)?;
        let slot = self.rows.get_mut(idx)?;
        Some(slot.get_or_insert_with(|| trig_row(ell, modes)))
    }
}

fn trig_row(ell: usize, modes: &[ModeDynamics]) -> Vec<(f64, f64)> {
    modes.iter().map(|m| (ell as f64 * m.theta).sin_cos()).collect()
}

/// HMC on diag(σ²) simulated mode by mode in closed form.
///
/// Same random-number consumption and the same law of results as
/// [`run_chain`] on [`CovarianceModel::from_spectrum`], at O(N) cost per
/// proposal regardless of ℓ.
pub fn run_chain_exact_gaussian(spectrum: &Spectrum, cfg: &ChainConfig) -> Result<ChainResult> {
    cfg.validate(spectrum.sigma_min())?;
    let n = spectrum.dim();
    let modes = spectrum
        .sigmas()
        .iter()
        .map(|&s| ModeDynamics::new(s, cfg.step_size))
        .collect::<Result<Vec<_>>>()?;
    let scales: Vec<f64> = spectrum.variances().iter().map(|v| v.sqrt()).collect();
    let mut cache = TrigCache::new(&cfg.law, cfg.step_size, n);
    let mut rng = seeded(cfg.seed);
    let mut tally = Tally::new(cfg);

    let mut x = vec![0.0; n];
    normals(&mut rng, &mut x);
    for (xi, s) in x.iter_mut().zip(&scales) {
        *xi *= s;
    }
    let mut xi = vec![0.0; n];
    let mut x_new = vec![0.0; n];

    for _ in 0..cfg.n_proposals {
        normals(&mut rng, &mut xi);
        let ell = IntegrationTimeLaw::steps(cfg.law.sample_time(&mut rng), cfg.step_size);
        let u = rng.random::<f64>();

        let scratch;
        let trig: &[(f64, f64)] = match cache.as_mut().and_then(|c| c.row(ell, &modes)) {
            Some(row) => row,
            None => {
                scratch = trig_row(ell, &modes);
                &scratch
            }
        };
        let mut delta = 0.0;
        for k in 0..n {
            let (s, c) = trig[k];
            let m = &modes[k];
            delta += m.energy_error_with(s, c, x[k], xi[k]);
            x_new[k] = m.propagate_with(s, c, x[k], xi[k]).0;
        }

        if tally.record(delta, u, ell) {
            std::mem::swap(&mut x, &mut x_new);
        }
        if cfg.record_samples {
            tally.result.samples.push(x.clone());
        }
    }
    Ok(tally.finish())
}

/// Which chain implementation to drive.
#[derive(Debug, Clone, Copy)]
pub enum ChainBackend<'a> {
    /// Closed-form per-mode simulation of diag(σ²).
    ExactModes(&'a Spectrum),
    /// Leapfrog on a general covariance.
    Leapfrog(&'a CovarianceModel),
}

impl ChainBackend<'_> {
    pub fn run(&self, cfg: &ChainConfig) -> Result<ChainResult> {
        match self {
            ChainBackend::ExactModes(s) => run_chain_exact_gaussian(s, cfg),
            ChainBackend::Leapfrog(c) => run_chain(c, cfg),
        }
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        match self {
            ChainBackend::ExactModes(s) => Ok((*s).clone()),
            ChainBackend::Leapfrog(c) => c.spectrum(),
        }
    }
}

/// Limits for [`tune_step_size`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneBudget {
    /// Proposals per pilot chain.
    pub pilot_proposals: usize,
    /// Maximum number of pilot chains.
    pub max_iterations: usize,
    /// Accepted distance between pilot acceptance and target.
    pub tolerance: f64,
}

impl Default for TuneBudget {
    fn default() -> Self {
        Self {
            pilot_proposals: 2000,
            max_iterations: 30,
            tolerance: 0.01,
        }
    }
}

/// Result of a successful tuning run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub step_size: f64,
    /// Pilot acceptance at `step_size`.
    pub acceptance: f64,
    pub iterations: usize,
    /// The h̄ the search was centered on.
    pub theory_step_size: f64,
}

/// Bisection on log h until pilot acceptance is within tolerance of the target.
///
/// The search starts from the bracket [h̄/8, 8h̄] around the theory value,
/// with the upper end clipped below the stability limit 2σ_min. Acceptance
/// is measured as the mean Metropolis probability of a pilot chain; every
/// pilot reuses `seed`, so the measured curve is monotone up to integrator
/// effects.
pub fn tune_step_size(
    backend: &ChainBackend<'_>,
    target_abar: f64,
    law: &IntegrationTimeLaw,
    budget: &TuneBudget,
    seed: u64,
) -> Result<TuneOutcome> {
    let alpha = alpha_for_acceptance(target_abar)?;
    if budget.pilot_proposals == 0 || budget.max_iterations == 0 {
        return Err(Error::InvalidConfig("tuning budget must be positive".into()));
    }
    let spectrum = backend.spectrum()?;
    let theory = step_size_simple(&spectrum, alpha);
    let limit = 2.0 * spectrum.sigma_min() * (1.0 - 1e-9);
    let mut hi = (8.0 * theory).min(limit);
    let mut lo = theory / 8.0;
    if lo >= hi {
        lo = hi / 64.0;
    }

    let mut best = (f64::NAN, f64::NAN, f64::INFINITY);
    for iteration in 1..=budget.max_iterations {
        let h = (lo * hi).sqrt();
        let cfg = ChainConfig {
            step_size: h,
            law: *law,
            n_proposals: budget.pilot_proposals,
            seed,
            record_samples: false,
        };
        let acceptance = backend.run(&cfg)?.mean_accept_prob;
        let miss = (acceptance - target_abar).abs();
        if miss < best.2 {
            best = (h, acceptance, miss);
        }
        if miss <= budget.tolerance {
            return Ok(TuneOutcome {
                step_size: h,
                acceptance,
                iterations: iteration,
                theory_step_size: theory,
            });
        }
        if acceptance > target_abar {
            lo = h;
        } else {
            hi = h;
        }
    }
    Err(Error::BudgetExhausted {
        best_step_size: best.0,
        best_acceptance: best.1,
    })
}

/// Ĉ = (1/S) Σ XˢXˢᵀ, or the mean-centered estimate with S − 1 normalization.
pub fn sample_covariance_matrix(samples: &[Vec<f64>], centered: bool) -> Result<DMatrix<f64>> {
    let s = samples.len();
    if s < 2 {
        return Err(Error::RankDeficient(format!("need at least 2 samples, got {s}")));
    }
    let n = samples[0].len();
    if let Some(bad) = samples.iter().find(|x| x.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let mut mean = vec![0.0; n];
    if centered {
        for x in samples {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= s as f64;
        }
    }
    let data = DMatrix::from_fn(n, s, |i, j| samples[j][i] - mean[i]);
    let denom = if centered { (s - 1) as f64 } else { s as f64 };
    let c = &data * data.transpose() / denom;
    Ok(crate::linalg::symmetrize(&c))
}

/// Sample covariance as an SPD matrix; needs at least N samples.
pub fn sample_covariance(samples: &[Vec<f64>], centered: bool) -> Result<SpdMatrix> {
    let c = sample_covariance_matrix(samples, centered)?;
    let n = c.nrows();
    let effective = if centered { samples.len() - 1 } else { samples.len() };
    if effective < n {
        return Err(Error::RankDeficient(format!(
            "{effective} effective samples cannot span dimension {n}"
        )));
    }
    let spd = SpdMatrix::new(c).map_err(|e| Error::RankDeficient(e.to_string()))?;
    spd.eigenvalues().map_err(|e| Error::RankDeficient(e.to_string()))?;
    Ok(spd)
}

/// κ of the (uncentered) sample covariance.
pub fn plug_in_kappa(samples: &[Vec<f64>]) -> Result<f64> {
    kappa_spd(&sample_covariance(samples, false)?)
}

/// σ̂₁ as the square root of the sample covariance's largest eigenvalue.
pub fn estimate_sigma1(samples: &[Vec<f64>]) -> Result<f64> {
    let c = sample_covariance_matrix(samples, false)?;
    let top = symmetric_eigenvalues(&c)?[0];
    if !(top > 0.0) {
        return Err(Error::RankDeficient("all samples are zero".into()));
    }
    Ok(top.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{kappa, GeneratorParams};

    fn law1() -> IntegrationTimeLaw {
        IntegrationTimeLaw::default_for(1.0).unwrap()
    }

    #[test]
    fn alpha_examples() {
        assert!((alpha_for_acceptance(0.8).unwrap() - 0.25674).abs() < 1e-5);
        // 4 · 0.41246312944140495²
        assert!((alpha_for_acceptance(0.68).unwrap() - 0.680_503_332_594_388_7).abs() < 1e-9);
        assert!(alpha_for_acceptance(1.0 - 1e-12).unwrap() < 1e-20);
        for bad in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(alpha_for_acceptance(bad), Err(Error::OutOfRange(_))));
        }
    }

    #[test]
    fn acceptance_roundtrip_and_monotone() {
        assert_eq!(acceptance_for_alpha(0.0), 1.0);
        for abar in [0.05, 0.3, 0.6, 0.8, 0.95, 0.999] {
            let a = alpha_for_acceptance(abar).unwrap();
            assert!((acceptance_for_alpha(a) - abar).abs() < 1e-9);
        }
        let mut prev = 1.0;
        for k in 1..200 {
            let cur = acceptance_for_alpha(k as f64 * 0.1);
            assert!(cur < prev);
            prev = cur;
        }
        assert!(acceptance_for_alpha(-1.0).is_nan());
    }

    #[test]
    fn simple_step_examples() {
        let flat32 = Spectrum::flat(32, 1.0).unwrap();
        assert!((step_size_simple(&flat32, 1.0) - 1.0).abs() < 1e-14);
        let flat256 = Spectrum::flat(256, 1.0).unwrap();
        let a = alpha_for_acceptance(0.8).unwrap();
        assert!((step_size_simple(&flat256, a) - 0.4233).abs() < 1e-4);
        let mut rng = seeded(3);
        let p = GeneratorParams::new(1.0, 20.0, 0.25, 6.0).unwrap();
        let s = crate::spectra::random_spectrum(64, &p, &mut rng).unwrap();
        for abar in [0.6, 0.8, 0.95] {
            let a = alpha_for_acceptance(abar).unwrap();
            let simple = step_size_simple(&s, a);
            assert!((simple - (32.0 * a).powf(0.25) / nu(&s)).abs() < 1e-12 * simple);
            assert!((simple - step_size_recipe(&s, abar).unwrap()).abs() < 1e-12 * simple);
        }
    }

    #[test]
    fn exact_step_examples() {
        let flat = Spectrum::flat(32, 1.0).unwrap();
        let law = IntegrationTimeLaw::new(0.0, std::f64::consts::PI, 1.0).unwrap();
        assert!((step_size_exact(&flat, 1.0, &law) - step_size_simple(&flat, 1.0)).abs() < 1e-12);

        // Strong decay: all but the top modes oscillate fast, so h_N/h̄_N → 1.
        let decaying = Spectrum::new((0..400).map(|k| 1.0 / (1.0 + k as f64)).collect()).unwrap();
        let law = IntegrationTimeLaw::default_for(1.0).unwrap();
        let r = step_size_exact(&decaying, 1.0, &law) / step_size_simple(&decaying, 1.0);
        assert!((r - 1.0).abs() < 0.01, "ratio {r}");
    }

    #[test]
    fn plan_sandwich_holds() {
        let mut rng = seeded(8);
        let p = GeneratorParams::new(1.0, 5.0, 0.25, 2.0).unwrap();
        for _ in 0..50 {
            let s = crate::spectra::random_spectrum(40, &p, &mut rng).unwrap();
            let law = IntegrationTimeLaw::default_for(s.sigma_max()).unwrap();
            let plan = StepSizePlan::new(&s, 0.8, &law).unwrap();
            let (lo, hi) = plan.sandwich();
            assert!(lo <= plan.h_exact && plan.h_exact <= hi);
        }
    }

    #[test]
    fn infer_kappa_examples() {
        let k = infer_kappa(1.0, 0.1, 0.8).unwrap();
        assert!((k - 16.93).abs() < 0.01);
        assert!((infer_kappa(1.0, 0.2, 0.8).unwrap() - k / 2.0).abs() < 1e-12);
        assert!(infer_kappa(1.0, 0.1, 1.0).is_err());
        assert!(infer_kappa(-1.0, 0.1, 0.5).is_err());
        assert!(infer_kappa(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn inferred_kappa_is_consistent_with_simple_step() {
        // Plugging h̄ back in recovers κ exactly.
        let s = Spectrum::new(vec![3.0, 2.0, 1.5, 1.0, 0.5]).unwrap();
        let a = alpha_for_acceptance(0.8).unwrap();
        let h = step_size_simple(&s, a);
        let k = infer_kappa(s.sigma_max(), h, 0.8).unwrap();
        assert!((k - kappa(&s)).abs() < 1e-12 * k);
    }

    fn cfg(h: f64, n: usize, seed: u64, law: IntegrationTimeLaw) -> ChainConfig {
        ChainConfig {
            step_size: h,
            law,
            n_proposals: n,
            seed,
            record_samples: true,
        }
    }

    #[test]
    fn exact_chain_matches_leapfrog_chain() {
        let s = Spectrum::new(vec![2.0, 1.3, 0.9, 0.6]).unwrap();
        let c = CovarianceModel::from_spectrum(&s);
        let law = IntegrationTimeLaw::default_for(2.0).unwrap();
        let config = cfg(0.3, 100, 17, law);
        let a = run_chain(&c, &config).unwrap();
        let b = run_chain_exact_gaussian(&s, &config).unwrap();
        assert_eq!(a.accepted, b.accepted);
        assert_eq!(a.leapfrog_steps_total, b.leapfrog_steps_total);
        for (x, y) in a.delta_samples.iter().zip(&b.delta_samples) {
            assert!((x - y).abs() < 1e-8);
        }
        for (x, y) in a.samples.iter().flatten().zip(b.samples.iter().flatten()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn tiny_steps_accept_everything() {
        let s = Spectrum::new(vec![1.0, 0.7, 0.5]).unwrap();
        let r = run_chain_exact_gaussian(&s, &cfg(1e-4, 200, 1, law1())).unwrap();
        assert_eq!(r.accept_rate, 1.0);
        let c = CovarianceModel::from_spectrum(&s);
        let r = run_chain(&c, &cfg(1e-3, 50, 1, law1())).unwrap();
        assert_eq!(r.accept_rate, 1.0);
    }

    #[test]
    fn chain_errors() {
        let s = Spectrum::new(vec![1.0, 0.5]).unwrap();
        assert!(matches!(
            run_chain_exact_gaussian(&s, &cfg(1.0, 10, 1, law1())),
            Err(Error::Unstable { .. })
        ));
        assert!(matches!(
            run_chain_exact_gaussian(&s, &cfg(0.1, 0, 1, law1())),
            Err(Error::InvalidConfig(_))
        ));
        assert!(matches!(
            run_chain(&CovarianceModel::from_spectrum(&s), &cfg(-0.1, 10, 1, law1())),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn result_bookkeeping_and_csv() {
        let s = Spectrum::new(vec![1.0, 0.5]).unwrap();
        let r = run_chain_exact_gaussian(&s, &cfg(0.4, 20, 5, law1())).unwrap();
        assert_eq!(r.delta_samples.len(), 20);
        assert_eq!(r.samples.len(), 20);
        assert_eq!(r.seed, 5);
        assert_eq!(r.rng, RNG_NAME);
        assert!((0.0..=1.0).contains(&r.accept_rate));
        let mut buf = Vec::new();
        r.write_delta_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 21);
        assert!(text.starts_with("proposal_index,delta,accepted\n0,"));
        let json = serde_json::to_string(&r).unwrap();
        let back: ChainResult = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn same_seed_same_chain() {
        let s = Spectrum::new(vec![1.0, 0.8, 0.5]).unwrap();
        let a = run_chain_exact_gaussian(&s, &cfg(0.3, 50, 9, law1())).unwrap();
        let b = run_chain_exact_gaussian(&s, &cfg(0.3, 50, 9, law1())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cached_and_direct_trig_agree() {
        // A law with a huge step range bypasses the cache.
        let s = Spectrum::new(vec![1.0, 0.8, 0.5]).unwrap();
        let wide = IntegrationTimeLaw::new(0.5, 1.5, 1.0).unwrap();
        let modes: Vec<_> = s.sigmas().iter().map(|&x| ModeDynamics::new(x, 0.3).unwrap()).collect();
        let mut cache = TrigCache::new(&wide, 0.3, 3).unwrap();
        for ell in 1..=5 {
            assert_eq!(cache.row(ell, &modes).unwrap(), trig_row(ell, &modes).as_slice());
        }
        assert!(cache.row(6, &modes).is_none());
        assert!(TrigCache::new(&wide, 1e-7, 3).is_none());
    }

    #[test]
    fn tuning_hits_target_and_orders_step_sizes() {
        let s = Spectrum::flat(64, 1.0).unwrap();
        let law = law1();
        let backend = ChainBackend::ExactModes(&s);
        let budget = TuneBudget::default();
        let t80 = tune_step_size(&backend, 0.8, &law, &budget, 3).unwrap();
        let t95 = tune_step_size(&backend, 0.95, &law, &budget, 3).unwrap();
        assert!((t80.acceptance - 0.8).abs() <= 0.01);
        assert!(t95.step_size < t80.step_size);
    }

    #[test]
    fn tuning_budget_exhaustion_reports_best() {
        let s = Spectrum::flat(16, 1.0).unwrap();
        let backend = ChainBackend::ExactModes(&s);
        let budget = TuneBudget {
            pilot_proposals: 50,
            max_iterations: 1,
            tolerance: 1e-9,
        };
        match tune_step_size(&backend, 0.8, &law1(), &budget, 1) {
            Err(Error::BudgetExhausted { best_step_size, .. }) => assert!(best_step_size > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sample_covariance_rules() {
        let same = vec![vec![2.0, 0.0, 0.0]; 10];
        assert!(matches!(sample_covariance(&same, false), Err(Error::RankDeficient(_))));
        let few = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(sample_covariance(&few, false).is_ok());
        assert!(matches!(sample_covariance(&few[..1], false), Err(Error::RankDeficient(_))));
        let c = sample_covariance_matrix(&[vec![1.0, 1.0], vec![3.0, -1.0]], true).unwrap();
        assert!((c[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((c[(0, 1)] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn sample_covariance_consistency() {
        let c = SpdMatrix::new(DMatrix::from_row_slice(
            4,
            4,
            &[2.0, 0.5, 0.0, 0.1, 0.5, 1.0, 0.2, 0.0, 0.0, 0.2, 0.5, 0.1, 0.1, 0.0, 0.1, 3.0],
        ))
        .unwrap();
        let model = CovarianceModel::dense(c.clone());
        let mut rng = seeded(44);
        let samples: Vec<_> = (0..100_000).map(|_| model.sample(&mut rng)).collect();
        let est = sample_covariance(&samples, false).unwrap();
        let scale = c.matrix().amax();
        assert!((est.matrix() - c.matrix()).amax() < 0.05 * scale);
    }

    #[test]
    fn plug_in_over_estimates_flat() {
        let n = 32;
        let model = CovarianceModel::diagonal(vec![1.0; n]).unwrap();
        let mut rng = seeded(6);
        let samples: Vec<_> = (0..4 * n).map(|_| model.sample(&mut rng)).collect();
        assert!(plug_in_kappa(&samples).unwrap() > (n as f64).powf(0.25));
        assert!(estimate_sigma1(&samples).unwrap() > 1.0);
    }

    #[test]
    fn moments_of_known_values() {
        let m = Moments::of(&[1.0, 2.0, 3.0, 10.0]);
        assert!((m.mean - 4.0).abs() < 1e-15);
        assert!((m.variance - 50.0 / 3.0).abs() < 1e-12);
        assert!(m.skewness > 0.0);
    }
}
