//! Leapfrog integration and its closed form on Gaussian modes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};

/// Position and momentum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Result<Self> {
        if x.len() != xi.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: xi.len(),
            });
        }
        Ok(Self { x, xi })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// The same point with momentum negated.
    pub fn flipped(&self) -> Self {
        Self {
            x: self.x.clone(),
            xi: self.xi.iter().map(|v| -v).collect(),
        }
    }
}

/// One leapfrog step: half kick, drift, half kick.
///
/// `grad_logp(x, out)` writes ∇log p(x) into `out`.
pub fn leapfrog_step<G>(point: &PhasePoint, h: f64, grad_logp: G) -> PhasePoint
where
    G: FnMut(&[f64], &mut [f64]),
{
    leapfrog_trajectory(point, h, 1, grad_logp)
}

/// `ell` leapfrog steps, reusing the end-of-step gradient for the next kick.
pub fn leapfrog_trajectory<G>(point: &PhasePoint, h: f64, ell: usize, mut grad_logp: G) -> PhasePoint
where
    G: FnMut(&[f64], &mut [f64]),
{
    let mut x = point.x.clone();
    let mut xi = point.xi.clone();
    if ell > 0 {
        let mut g = vec![0.0; x.len()];
        grad_logp(&x, &mut g);
        leapfrog_in_place(&mut x, &mut xi, &mut g, h, ell, &mut grad_logp);
    }
    PhasePoint { x, xi }
}

/// Runs `ell` steps in place; `g` must hold ∇log p(x) on entry and holds it
/// at the final position on exit.
pub(crate) fn leapfrog_in_place<G>(
    x: &mut [f64],
    xi: &mut [f64],
    g: &mut [f64],
    h: f64,
    ell: usize,
    grad_logp: &mut G,
) where
    G: FnMut(&[f64], &mut [f64]),
{
    let half = 0.5 * h;
    for _ in 0..ell {
        for (p, gi) in xi.iter_mut().zip(g.iter()) {
            *p += half * gi;
        }
        for (q, p) in x.iter_mut().zip(xi.iter()) {
            *q += h * p;
        }
        grad_logp(x, g);
        for (p, gi) in xi.iter_mut().zip(g.iter()) {
            *p += half * gi;
        }
    }
}

/// H(x, ξ) = xᵀC⁻¹x/2 + ‖ξ‖²/2.
pub fn hamiltonian(point: &PhasePoint, c: &CovarianceModel) -> Result<f64> {
    if point.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: c.dim(),
            found: point.dim(),
        });
    }
    Ok(c.potential(&point.x) + 0.5 * point.xi.iter().map(|p| p * p).sum::<f64>())
}

/// Closed-form leapfrog on a single Gaussian mode of scale σ.
///
/// One step acts on (x, ξ) as a matrix U_h whose ℓ-th power is
/// `[[cos ℓθ, sin ℓθ / γ], [−γ sin ℓθ, cos ℓθ]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDynamics {
    pub sigma: f64,
    pub h: f64,
    /// Rotation angle per step, arccos(1 − h²/2σ²).
    pub theta: f64,
    /// (1/σ)√(1 − (h/2σ)²).
    pub gamma: f64,
    /// (h/2σ)⁴ / (1 − (h/2σ)²).
    pub chi: f64,
    /// (h/2σ)².
    pub q: f64,
}

impl ModeDynamics {
    pub fn new(sigma: f64, h: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidSpectrum(format!("sigma = {sigma} must be positive")));
        }
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::InvalidConfig(format!("step size {h} must be nonnegative")));
        }
        if h >= 2.0 * sigma {
            return Err(Error::Unstable {
                step_size: h,
                limit: 2.0 * sigma,
            });
        }
        let r = h / (2.0 * sigma);
        let q = r * r;
        Ok(Self {
            sigma,
            h,
            // Same angle as arccos(1 − 2r²), better conditioned for small r.
            theta: 2.0 * r.asin(),
            gamma: (1.0 - q).sqrt() / sigma,
            chi: q * q / (1.0 - q),
            q,
        })
    }

    /// U_h^ℓ as a row-major 2×2 matrix.
    pub fn matrix(&self, ell: usize) -> [[f64; 2]; 2] {
        let (s, c) = (ell as f64 * self.theta).sin_cos();
        [[c, s / self.gamma], [-self.gamma * s, c]]
    }

    /// (x_ℓ, ξ_ℓ) = U_h^ℓ (x₀, ξ₀).
    pub fn propagate(&self, ell: usize, x0: f64, xi0: f64) -> (f64, f64) {
        let (s, c) = (ell as f64 * self.theta).sin_cos();
        self.propagate_with(s, c, x0, xi0)
    }

    #[inline]
    pub(crate) fn propagate_with(&self, s: f64, c: f64, x0: f64, xi0: f64) -> (f64, f64) {
        (c * x0 + s / self.gamma * xi0, -self.gamma * s * x0 + c * xi0)
    }

    /// Energy error δ^ℓ = H(U_h^ℓ(x₀, ξ₀)) − H(x₀, ξ₀) without cancellation.
    pub fn energy_error(&self, ell: usize, x0: f64, xi0: f64) -> f64 {
        let (s, c) = (ell as f64 * self.theta).sin_cos();
        self.energy_error_with(s, c, x0, xi0)
    }

    #[inline]
    pub(crate) fn energy_error_with(&self, s: f64, c: f64, x0: f64, xi0: f64) -> f64 {
        let s2 = s * s;
        let xs = x0 / self.sigma;
        0.5 * s2 * self.q * (xi0 * xi0 - xs * xs)
            + 0.5 * s2 * self.chi * xi0 * xi0
            + c * s * self.sqrt_chi() * xs * xi0
    }

    /// √χ = (h/2σ)² / √(1 − (h/2σ)²).
    pub fn sqrt_chi(&self) -> f64 {
        self.q / (1.0 - self.q).sqrt()
    }

    /// Bound on |δ^ℓ| with the trigonometric factors replaced by one.
    pub fn energy_error_bound(&self, x0: f64, xi0: f64) -> f64 {
        let xs = x0 / self.sigma;
        0.5 * self.q * (xi0 * xi0 - xs * xs).abs()
            + 0.5 * self.chi * xi0 * xi0
            + self.sqrt_chi() * (xs * xi0).abs()
    }

    /// Equilibrium mean E[δ^ℓ] = sin²(ℓθ) χ / 2 for x₀ ~ N(0, σ²), ξ₀ ~ N(0, 1).
    pub fn mean_energy_error(&self, ell: usize) -> f64 {
        let s = (ell as f64 * self.theta).sin();
        0.5 * s * s * self.chi
    }

    /// Moduli of the eigenvalues of U_h.
    pub fn eigenvalue_moduli(&self) -> (f64, f64) {
        // Characteristic polynomial λ² − 2cosθ λ + det U_h.
        let m = self.matrix(1);
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let tr = m[0][0] + m[1][1];
        let disc = tr * tr - 4.0 * det;
        if disc >= 0.0 {
            let r = disc.sqrt();
            (((tr + r) / 2.0).abs(), ((tr - r) / 2.0).abs())
        } else {
            let modulus = det.sqrt();
            (modulus, modulus)
        }
    }

    pub fn determinant(&self) -> f64 {
        let m = self.matrix(1);
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }
}

/// Per-mode closed-form propagation.
pub fn mode_propagate(sigma: f64, h: f64, ell: usize, x0: f64, xi0: f64) -> Result<(f64, f64)> {
    Ok(ModeDynamics::new(sigma, h)?.propagate(ell, x0, xi0))
}

/// Per-mode closed-form energy error δ^ℓ.
pub fn mode_energy_error(sigma: f64, h: f64, ell: usize, x0: f64, xi0: f64) -> Result<f64> {
    Ok(ModeDynamics::new(sigma, h)?.energy_error(ell, x0, xi0))
}

/// Uniform law for the integration time: the trajectory length is σ₁·T with
/// T ~ U[lo, hi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationTimeLaw {
    pub lo: f64,
    pub hi: f64,
    pub sigma1: f64,
}

impl IntegrationTimeLaw {
    pub const DEFAULT_LO: f64 = 0.5;
    pub const DEFAULT_HI: f64 = 1.5;

    pub fn new(lo: f64, hi: f64, sigma1: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "integration time support [{lo}, {hi}] must satisfy 0 <= lo < hi"
            )));
        }
        if !(sigma1.is_finite() && sigma1 > 0.0) {
            return Err(Error::InvalidConfig(format!("sigma1 = {sigma1} must be positive")));
        }
        Ok(Self { lo, hi, sigma1 })
    }

    /// Uniform on [0.5, 1.5], mean trajectory length σ₁.
    pub fn default_for(sigma1: f64) -> Result<Self> {
        Self::new(Self::DEFAULT_LO, Self::DEFAULT_HI, sigma1)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Draws a trajectory length σ₁T from one uniform variate.
    pub fn sample_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.time_at(rng.random::<f64>())
    }

    /// Trajectory length at quantile `u` of the law.
    pub fn time_at(&self, u: f64) -> f64 {
        self.sigma1 * (self.lo + self.width() * u)
    }

    /// ℓ = ⌈t / h⌉.
    pub fn steps(time: f64, h: f64) -> usize {
        (time / h).ceil() as usize
    }

    /// Smallest and largest step counts the law can produce at step size `h`.
    pub fn step_range(&self, h: f64) -> (usize, usize) {
        (
            Self::steps(self.sigma1 * self.lo, h),
            Self::steps(self.sigma1 * self.hi, h),
        )
    }

    /// C_π = sup over frequencies k ≥ 2 of |E cos(kT)| for the centered
    /// oscillation; for a uniform law this is sup_{u ≥ hi−lo} |sin u / u|.
    pub fn fourier_bound(&self) -> f64 {
        sup_abs_sinc_from(self.width())
    }

    /// E[sin²(σ₁T/σₙ)].
    pub fn sin2_average(&self, sigma_n: f64) -> f64 {
        let k = 2.0 * self.sigma1 / sigma_n;
        let v = 0.5 - ((k * self.hi).sin() - (k * self.lo).sin()) / (2.0 * k * self.width());
        v.clamp(0.0, 1.0)
    }
}

/// E[sin²(σ₁T/σₙ)] for T drawn from `law`.
pub fn sin2_average(sigma_n: f64, law: &IntegrationTimeLaw) -> f64 {
    law.sin2_average(sigma_n)
}

fn sinc(u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        u.sin() / u
    }
}

/// sup_{u ≥ w} |sin u / u| for w ≥ 0.
fn sup_abs_sinc_from(w: f64) -> f64 {
    if w <= 0.0 {
        return 1.0;
    }
    // |sinc| has local maxima at the positive roots of tan u = u, one in each
    // (kπ, kπ + π/2); their heights decrease, so only the first at or past w
    // can beat the value at w itself.
    let pi = std::f64::consts::PI;
    let mut k = (w / pi).floor().max(1.0);
    let peak = loop {
        let (mut a, mut b) = (k * pi + 1e-12, k * pi + pi / 2.0 - 1e-12);
        let f = |u: f64| u.cos() * u - u.sin();
        let fa = f(a);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if (f(m) > 0.0) == (fa > 0.0) {
                a = m;
            } else {
                b = m;
            }
        }
        let root = 0.5 * (a + b);
        if root >= w {
            break root;
        }
        k += 1.0;
    };
    sinc(w).abs().max(sinc(peak).abs())
}
