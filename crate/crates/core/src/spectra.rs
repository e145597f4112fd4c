//! Spectra of Gaussian targets and the condition number κ.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;

/// Scale lengths σ₁ ≥ … ≥ σ_N > 0 of a Gaussian target.
///
/// Serializes as a JSON array of descending positive floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Spectrum {
    sigmas: Vec<f64>,
}

impl Spectrum {
    /// Validates and sorts descending (stable, so ties keep input order).
    pub fn new(mut sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::InvalidSpectrum("empty spectrum".into()));
        }
        if let Some(bad) = sigmas.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::InvalidSpectrum(format!(
                "scale lengths must be finite and positive, got {bad}"
            )));
        }
        sigmas.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { sigmas })
    }

    /// Spectrum from covariance eigenvalues (σ = √λ).
    pub fn from_variances(variances: &[f64]) -> Result<Self> {
        Self::new(variances.iter().map(|v| v.sqrt()).collect())
    }

    /// The flat spectrum σ ≡ value.
    pub fn flat(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn dim(&self) -> usize {
        self.sigmas.len()
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }

    /// Returns the spectrum multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.sigmas.iter().map(|s| s * c).collect())
    }

    pub fn variances(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s * s).collect()
    }
}

impl TryFrom<Vec<f64>> for Spectrum {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Spectrum::new(value)
    }
}

impl From<Spectrum> for Vec<f64> {
    fn from(value: Spectrum) -> Self {
        value.sigmas
    }
}

/// κ = (Σ (σ₁/σₙ)⁴)^{1/4}.
pub fn kappa(spectrum: &Spectrum) -> f64 {
    let s1 = spectrum.sigma_max();
    spectrum
        .sigmas()
        .iter()
        .map(|s| (s1 / s).powi(4))
        .sum::<f64>()
        .powf(0.25)
}

/// ν = (Σ σₙ⁻⁴)^{1/4}, so that κ = σ₁ ν.
pub fn nu(spectrum: &Spectrum) -> f64 {
    spectrum
        .sigmas()
        .iter()
        .map(|s| s.powi(-4))
        .sum::<f64>()
        .powf(0.25)
}

/// σ₁ · Σσₙ⁻⁷ · (Σσₙ⁻⁴)^{-3/2}.
///
/// Small values mean no single mode dominates the energy error. For a flat
/// spectrum it equals N^{-1/2}, which is also its minimum over all spectra
/// of dimension N.
pub fn decay_assumption_ratio(spectrum: &Spectrum) -> f64 {
    let s1 = spectrum.sigma_max();
    // Work relative to σ₁ to keep the powers in range.
    let (mut s7, mut s4) = (0.0, 0.0);
    for s in spectrum.sigmas() {
        let r = s1 / s;
        s4 += r.powi(4);
        s7 += r.powi(7);
    }
    s7 * s4.powf(-1.5)
}

/// κ of an SPD covariance, from the square roots of its eigenvalues.
///
/// Equals √(‖C‖₂ ‖C⁻¹‖_{S²}).
pub fn kappa_spd(c: &SpdMatrix) -> Result<f64> {
    let eig = c.eigenvalues()?;
    kappa_from_variances(eig)
}

/// κ from covariance eigenvalues: κ⁴ = Σ (λ_max/λₙ)².
pub fn kappa_from_variances(variances: &[f64]) -> Result<f64> {
    if variances.is_empty() {
        return Err(Error::InvalidSpectrum("empty spectrum".into()));
    }
    let max = variances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || variances.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(
            "variances must be finite and positive".into(),
        ));
    }
    Ok(variances
        .iter()
        .map(|v| (max / v).powi(2))
        .sum::<f64>()
        .powf(0.25))
}

/// Schatten r-norm: the vector r-norm of the singular values.
///
/// `r = f64::INFINITY` gives the spectral norm.
pub fn schatten_norm(c: &SpdMatrix, r: f64) -> Result<f64> {
    if r.is_nan() || r < 1.0 {
        return Err(Error::InvalidOrder(r));
    }
    let eig = c.eigenvalues()?;
    Ok(vector_norm(eig, r))
}

fn vector_norm(values: &[f64], r: f64) -> f64 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.is_infinite() || max == 0.0 {
        return max;
    }
    // Scaled to avoid overflow for large r.
    max * values
        .iter()
        .map(|v| (v.abs() / max).powf(r))
        .sum::<f64>()
        .powf(1.0 / r)
}

/// Parameters (m, M, c, β) of the spectrum generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub min: f64,
    pub max: f64,
    pub cutoff: f64,
    pub beta: f64,
}

impl GeneratorParams {
    pub fn new(min: f64, max: f64, cutoff: f64, beta: f64) -> Result<Self> {
        let p = Self {
            min,
            max,
            cutoff,
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.min, self.max, self.cutoff, self.beta]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidGenerator("parameters must be finite".into()));
        }
        if !(self.min > 0.0) {
            return Err(Error::InvalidGenerator(format!("m = {} must be > 0", self.min)));
        }
        if !(self.max > self.min) {
            return Err(Error::InvalidGenerator(format!(
                "M = {} must exceed m = {}",
                self.max, self.min
            )));
        }
        if !(self.cutoff > 0.0) {
            return Err(Error::InvalidGenerator(format!("c = {} must be > 0", self.cutoff)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidGenerator(format!("beta = {} must be > 0", self.beta)));
        }
        Ok(())
    }

    /// The low-pass profile g(y) = 1 / (1 + |y/c|^β).
    pub fn profile(&self, y: f64) -> f64 {
        1.0 / (1.0 + (y / self.cutoff).abs().powf(self.beta))
    }
}

/// Generator values in the order of `points`, rescaled onto [m, M].
///
/// The point(s) attaining max g map to exactly M and those attaining min g to
/// exactly m.
pub fn generator_values(points: &[f64], params: &GeneratorParams) -> Result<Vec<f64>> {
    params.validate()?;
    if points.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidGenerator("points must be finite".into()));
    }
    if points.len() < 2 {
        return Err(Error::DegenerateRange);
    }
    let g: Vec<f64> = points.iter().map(|&y| params.profile(y)).collect();
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(gmax > gmin) {
        return Err(Error::DegenerateRange);
    }
    let span = params.max - params.min;
    Ok(g.iter()
        .map(|&v| {
            if v == gmax {
                params.max
            } else if v == gmin {
                params.min
            } else {
                params.min + span * (v - gmin) / (gmax - gmin)
            }
        })
        .collect())
}

/// The generator f(𝒴; m, M, c, β) as a sorted spectrum.
pub fn generate_spectrum(points: &[f64], params: &GeneratorParams) -> Result<Spectrum> {
    Spectrum::new(generator_values(points, params)?)
}

/// `n` independent uniform points on (0, 1).
pub fn random_points<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Generator spectrum on `n` uniform random points.
pub fn random_spectrum<R: Rng + ?Sized>(
    n: usize,
    params: &GeneratorParams,
    rng: &mut R,
) -> Result<Spectrum> {
    generate_spectrum(&random_points(n, rng), params)
}
