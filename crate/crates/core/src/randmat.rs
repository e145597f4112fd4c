//! Wishart ensembles, the Marčenko–Pastur law, asymptotic κ of inverse
//! Wishart matrices and the burn-in planner for sample-covariance
//! preconditioning.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, solve_lower, symmetric_eigenvalues, SpdMatrix};
use crate::rng::{derive_seed, seeded};
use crate::spectra::kappa_spd;

/// Retries per draw before [`Error::SingularDraw`].
pub const MAX_DRAW_ATTEMPTS: usize = 10;

/// Dimension N and sample count S of a Wishart ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WishartParams {
    pub dim: usize,
    pub samples: usize,
}

impl WishartParams {
    pub fn new(dim: usize, samples: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be at least 1".into()));
        }
        if samples < dim {
            return Err(Error::OmegaTooSmall(samples as f64 / dim as f64));
        }
        Ok(Self { dim, samples })
    }

    /// Oversampling ratio ω = S/N.
    pub fn omega(&self) -> f64 {
        self.samples as f64 / self.dim as f64
    }
}

/// One Wishart draw (1/S) Σ XˢXˢᵀ.
#[derive(Debug, Clone)]
pub struct WishartDraw {
    pub matrix: DMatrix<f64>,
    /// Set when S < N, in which case the matrix is singular.
    pub singular: bool,
}

impl WishartDraw {
    pub fn into_spd(self) -> Result<SpdMatrix> {
        if self.singular {
            return Err(Error::RankDeficient("fewer samples than dimensions".into()));
        }
        SpdMatrix::new(self.matrix)
    }
}

/// Wishart draw from `rng`; consumes N·S standard normals column by column.
pub fn wishart_sample_with<R: Rng + ?Sized>(n: usize, s: usize, rng: &mut R) -> Result<WishartDraw> {
    if n == 0 || s == 0 {
        return Err(Error::InvalidConfig("N and S must be at least 1".into()));
    }
    let x = DMatrix::<f64>::from_fn(n, s, |_, _| rng.sample(StandardNormal));
    let w = &x * x.transpose() / s as f64;
    Ok(WishartDraw {
        matrix: crate::linalg::symmetrize(&w),
        singular: s < n,
    })
}

/// Wishart draw from a fresh generator seeded with `seed`.
pub fn wishart_sample(n: usize, s: usize, seed: u64) -> Result<WishartDraw> {
    wishart_sample_with(n, s, &mut seeded(seed))
}

/// Edges ((1 − ω^{-1/2})², (1 + ω^{-1/2})²) of the Marčenko–Pastur support.
pub fn mp_support(omega: f64) -> (f64, f64) {
    let r = omega.powf(-0.5);
    ((1.0 - r).powi(2), (1.0 + r).powi(2))
}

/// Marčenko–Pastur density (ω / 2πx) √((b − x)(x − a)) on [a, b].
///
/// Returns NaN for ω ≤ 1.
pub fn mp_density(x: f64, omega: f64) -> f64 {
    if !(omega > 1.0) {
        return f64::NAN;
    }
    let (a, b) = mp_support(omega);
    if x <= a || x >= b {
        return 0.0;
    }
    omega / (2.0 * std::f64::consts::PI * x) * ((b - x) * (x - a)).sqrt()
}

fn check_omega(omega: f64) -> Result<()> {
    if !(omega > 1.0) || !omega.is_finite() {
        return Err(Error::OmegaTooSmall(omega));
    }
    Ok(())
}

/// N^{1/4} (1 + ω⁻¹)^{1/4} / (1 − ω^{-1/2}).
pub fn asymptotic_kappa(n: usize, omega: f64) -> Result<f64> {
    check_omega(omega)?;
    Ok((n as f64).powf(0.25) * (1.0 + 1.0 / omega).powf(0.25) / (1.0 - omega.powf(-0.5)))
}

/// g_N(S): the asymptotic κ after preconditioning with S samples.
pub fn g_n(n: usize, s: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    asymptotic_kappa(n, s / n as f64)
}

/// U(ω) = 4(√ω − 1)² (ω² + ω)^{3/4} / (2ω + √ω + 1).
///
/// Strictly increasing on (1, ∞) with U(1) = 0.
pub fn u_function(omega: f64) -> f64 {
    let r = omega.sqrt();
    4.0 * (r - 1.0).powi(2) * (omega * omega + omega).powf(0.75) / (2.0 * omega + r + 1.0)
}

/// Lower and upper ends of the ω bracket searched by [`burn_in_plan`].
pub const OMEGA_BRACKET: (f64, f64) = (1.0 + 1e-6, 1e6);

/// Recommended burn-in for sample-covariance preconditioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurnInPlan {
    pub kappa0: f64,
    pub dim: usize,
    pub final_samples: f64,
    /// Solution of U(ω*) = (N^{1/4}/κ₀)(S_f/N).
    pub omega_star: f64,
    /// ⌈ω* N⌉ burn-in samples.
    pub s_star: u64,
    /// S_f κ₀ / (S* κ₀ + S_f g_N(S*)).
    pub speedup: f64,
}

/// Balances burn-in cost against the condition number after preconditioning.
///
/// A right-hand side below U at the lower bracket end resolves to that end.
pub fn burn_in_plan(kappa0: f64, n: usize, final_samples: f64) -> Result<BurnInPlan> {
    if n == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    let floor = (n as f64).powf(0.25);
    if !(kappa0.is_finite() && kappa0 >= floor * (1.0 - 1e-12)) {
        return Err(Error::OutOfRange(format!(
            "kappa0 = {kappa0} is below the flat-spectrum minimum N^(1/4) = {floor}"
        )));
    }
    let rhs = floor / kappa0 * final_samples / n as f64;
    if !(rhs > 0.0) || !rhs.is_finite() {
        return Err(Error::NoRoot(format!(
            "right-hand side {rhs} must be positive and finite"
        )));
    }
    let (lo, hi) = OMEGA_BRACKET;
    let omega_star = if rhs <= u_function(lo) {
        lo
    } else if rhs > u_function(hi) {
        return Err(Error::NoRoot(format!(
            "U(omega) = {rhs} has no solution below omega = {hi:e}"
        )));
    } else {
        bisect_increasing(u_function, rhs, lo, hi, 1e-10)
    };
    let s_star = (omega_star * n as f64).ceil();
    let speedup = final_samples * kappa0 / (s_star * kappa0 + final_samples * g_n(n, s_star)?);
    Ok(BurnInPlan {
        kappa0,
        dim: n,
        final_samples,
        omega_star,
        s_star: s_star as u64,
        speedup,
    })
}

fn bisect_increasing<F: Fn(f64) -> f64>(f: F, target: f64, mut lo: f64, mut hi: f64, rel: f64) -> f64 {
    while hi - lo > rel * lo {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// κ⁴ of the inverse of a matrix with eigenvalues `w`: Σ (wₙ / w_min)².
pub fn inverse_kappa_from_eigenvalues(w: &[f64]) -> f64 {
    let wmin = w.iter().copied().fold(f64::INFINITY, f64::min);
    w.iter().map(|v| (v / wmin).powi(2)).sum::<f64>().powf(0.25)
}

/// κ of inverse-Wishart draws, computed from the Wishart eigenvalues.
///
/// Draw `i` uses the seed `derive_seed(seed, i)`; a numerically singular
/// draw is retried with seeds derived from that one.
pub fn inverse_wishart_kappa_samples(n: usize, s: usize, n_draws: usize, seed: u64) -> Result<Vec<f64>> {
    let params = WishartParams::new(n, s)?;
    if s == n {
        return Err(Error::OmegaTooSmall(params.omega()));
    }
    (0..n_draws)
        .map(|i| inverse_wishart_kappa_draw(n, s, derive_seed(seed, i as u64)))
        .collect()
}

/// One inverse-Wishart κ for the given draw seed.
pub fn inverse_wishart_kappa_draw(n: usize, s: usize, seed: u64) -> Result<f64> {
    for attempt in 0..MAX_DRAW_ATTEMPTS {
        let draw_seed = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, attempt as u64)
        };
        let w = wishart_sample(n, s, draw_seed)?.matrix;
        let eig = symmetric_eigenvalues(&w)?;
        let (max, min) = (eig[0], eig[eig.len() - 1]);
        if min > crate::linalg::SPD_TOLERANCE * max {
            return Ok(inverse_kappa_from_eigenvalues(&eig));
        }
    }
    Err(Error::SingularDraw {
        attempts: MAX_DRAW_ATTEMPTS,
    })
}

/// Two κ sample sets that should share a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaLawCheck {
    /// κ after preconditioning draws from N(0, C) by the Cholesky factor of
    /// their sample covariance.
    pub preconditioned: Vec<f64>,
    /// κ of direct inverse-Wishart draws.
    pub inverse_wishart: Vec<f64>,
}

/// κ of L̂⁻¹ C L̂⁻ᵀ, where L̂ is the Cholesky factor of an S-sample covariance.
pub fn preconditioned_kappa_draw(c_true: &SpdMatrix, s: usize, seed: u64) -> Result<f64> {
    let n = c_true.dim();
    let l = c_true.cholesky_factor();
    for attempt in 0..MAX_DRAW_ATTEMPTS {
        let draw_seed = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, attempt as u64)
        };
        // X = L Z with Z the same N×S normals a Wishart draw would use.
        let mut rng = seeded(draw_seed);
        let z = DMatrix::<f64>::from_fn(n, s, |_, _| rng.sample(StandardNormal));
        let x = l * z;
        let c_hat = crate::linalg::symmetrize(&(&x * x.transpose() / s as f64));
        let Ok(l_hat) = cholesky(&c_hat) else { continue };
        let m = solve_lower(&l_hat, l);
        let pre = match SpdMatrix::new_symmetrized(&m * m.transpose()) {
            Ok(p) => p,
            Err(_) => continue,
        };
        match kappa_spd(&pre) {
            Ok(k) => return Ok(k),
            Err(_) => continue,
        }
    }
    Err(Error::SingularDraw {
        attempts: MAX_DRAW_ATTEMPTS,
    })
}

/// Preconditioned κ draws next to direct inverse-Wishart κ draws.
///
/// Trial `i` of the first set uses `derive_seed(seed, 2i)` and of the second
/// `derive_seed(seed, 2i + 1)`.
pub fn preconditioned_kappa_law_check(
    c_true: &SpdMatrix,
    s: usize,
    n_trials: usize,
    seed: u64,
) -> Result<KappaLawCheck> {
    let n = c_true.dim();
    if s <= n {
        return Err(Error::OmegaTooSmall(s as f64 / n as f64));
    }
    let mut preconditioned = Vec::with_capacity(n_trials);
    let mut inverse_wishart = Vec::with_capacity(n_trials);
    for i in 0..n_trials as u64 {
        preconditioned.push(preconditioned_kappa_draw(c_true, s, derive_seed(seed, 2 * i))?);
        inverse_wishart.push(inverse_wishart_kappa_draw(n, s, derive_seed(seed, 2 * i + 1))?);
    }
    Ok(KappaLawCheck {
        preconditioned,
        inverse_wishart,
    })
}
