//! Linear preconditioners: transforms of the covariance, KL-optimal
//! diagonals, correlated 2×2 blocks, random test ensembles and a
//! diagonal-plus-low-rank variational trainer.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    cholesky, haar_orthogonal, inverse_from_cholesky, log_det_from_cholesky, solve_lower,
    symmetrize, SpdMatrix,
};
use crate::rng::seeded;
use crate::spectra::{generator_values, kappa_from_variances, kappa_spd, GeneratorParams};

/// A linear map F; the target N(0, C) is replaced by N(0, F⁻¹CF⁻ᵀ).
///
/// Dense factors serialize as nested arrays (one inner array per row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PreconditionerSpec {
    Identity,
    Diagonal { d: Vec<f64> },
    /// Lower-triangular factor with positive diagonal.
    Cholesky { l: Vec<Vec<f64>> },
    /// F = diag(d) + UUᵀ with U of shape N×K.
    #[serde(rename = "diag_plus_lowrank")]
    DiagPlusLowRank { d: Vec<f64>, u: Vec<Vec<f64>> },
}

fn rows_to_matrix(rows: &[Vec<f64>], ncols: Option<usize>) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = ncols.unwrap_or_else(|| rows.first().map_or(0, Vec::len));
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Nested row arrays of a matrix.
pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn check_diagonal(d: &[f64]) -> Result<()> {
    if let Some(bad) = d.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::SingularPreconditioner(format!(
            "diagonal entries must be positive, got {bad}"
        )));
    }
    Ok(())
}

impl PreconditionerSpec {
    pub fn cholesky_of(c: &SpdMatrix) -> Self {
        PreconditionerSpec::Cholesky {
            l: matrix_to_rows(c.cholesky_factor()),
        }
    }

    pub fn diag_plus_lowrank(d: &[f64], u: &DMatrix<f64>) -> Self {
        PreconditionerSpec::DiagPlusLowRank {
            d: d.to_vec(),
            u: matrix_to_rows(u),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PreconditionerSpec::Identity => "identity",
            PreconditionerSpec::Diagonal { .. } => "diagonal",
            PreconditionerSpec::Cholesky { .. } => "cholesky",
            PreconditionerSpec::DiagPlusLowRank { .. } => "diag_plus_lowrank",
        }
    }

    /// Checks the structural invariants for dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mismatch = |found| Error::DimensionMismatch { expected: n, found };
        match self {
            PreconditionerSpec::Identity => Ok(()),
            PreconditionerSpec::Diagonal { d } => {
                if d.len() != n {
                    return Err(mismatch(d.len()));
                }
                check_diagonal(d)
            }
            PreconditionerSpec::Cholesky { l } => {
                if l.len() != n {
                    return Err(mismatch(l.len()));
                }
                let m = rows_to_matrix(l, Some(n))?;
                for i in 0..n {
                    if !(m[(i, i)].is_finite() && m[(i, i)] > 0.0) {
                        return Err(Error::SingularPreconditioner(format!(
                            "Cholesky diagonal entry {i} is {}",
                            m[(i, i)]
                        )));
                    }
                    if (i + 1..n).any(|j| m[(i, j)] != 0.0) {
                        return Err(Error::SingularPreconditioner(
                            "Cholesky factor must be lower triangular".into(),
                        ));
                    }
                }
                Ok(())
            }
            PreconditionerSpec::DiagPlusLowRank { d, u } => {
                if d.len() != n {
                    return Err(mismatch(d.len()));
                }
                if u.len() != n {
                    return Err(mismatch(u.len()));
                }
                rows_to_matrix(u, None)?;
                check_diagonal(d)
            }
        }
    }

    /// The dense matrix F.
    pub fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        self.validate(n)?;
        Ok(match self {
            PreconditionerSpec::Identity => DMatrix::identity(n, n),
            PreconditionerSpec::Diagonal { d } => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            PreconditionerSpec::Cholesky { l } => rows_to_matrix(l, Some(n))?,
            PreconditionerSpec::DiagPlusLowRank { d, u } => {
                let u = rows_to_matrix(u, None)?;
                DMatrix::from_diagonal(&DVector::from_column_slice(d)) + &u * u.transpose()
            }
        })
    }
}

/// F⁻¹ C F⁻ᵀ.
pub fn precondition_covariance(c: &SpdMatrix, f: &PreconditionerSpec) -> Result<SpdMatrix> {
    let n = c.dim();
    f.validate(n)?;
    let m = c.matrix();
    let out = match f {
        PreconditionerSpec::Identity => return Ok(c.clone()),
        PreconditionerSpec::Diagonal { d } => DMatrix::from_fn(n, n, |i, j| m[(i, j)] / (d[i] * d[j])),
        PreconditionerSpec::Cholesky { .. } => {
            let l = f.matrix(n)?;
            // (L⁻¹ A)(L⁻¹ A)ᵀ with A the Cholesky factor of C.
            let b = solve_lower(&l, c.cholesky_factor());
            &b * b.transpose()
        }
        PreconditionerSpec::DiagPlusLowRank { .. } => {
            let fm = f.matrix(n)?;
            // F is symmetric positive definite here, so F⁻ᵀ = F⁻¹.
            let lf = cholesky(&fm).map_err(|e| Error::SingularPreconditioner(e.to_string()))?;
            let finv = inverse_from_cholesky(&lf);
            &finv * m * &finv
        }
    };
    SpdMatrix::new_symmetrized(out)
}

/// Forward-KL optimal diagonal: Dᵢᵢ = √Cᵢᵢ.
pub fn forward_kl_diagonal(c: &SpdMatrix) -> Vec<f64> {
    c.matrix().diagonal().iter().map(|v| v.sqrt()).collect()
}

/// Reverse-KL optimal diagonal: Dᵢᵢ = 1/√(C⁻¹)ᵢᵢ.
pub fn reverse_kl_diagonal(c: &SpdMatrix) -> Result<Vec<f64>> {
    let p = c.inverse();
    p.diagonal()
        .iter()
        .map(|v| {
            if v.is_finite() && *v > 0.0 {
                Ok(1.0 / v.sqrt())
            } else {
                Err(Error::NotPositiveDefinite(format!("precision diagonal {v}")))
            }
        })
        .collect()
}

/// KL objectives in eigenvalue form for singular values λ of W = F⁻¹A.
///
/// Returns (Σ(λ² − log λ²), Σ(λ⁻² − log λ⁻²)).
pub fn kl_gaussian(lambdas: &[f64]) -> (f64, f64) {
    let mut fwd = 0.0;
    let mut rev = 0.0;
    for l in lambdas {
        let l2 = l * l;
        fwd += l2 - l2.ln();
        rev += 1.0 / l2 + l2.ln();
    }
    (fwd, rev)
}

/// The same two objectives from traces and log-determinants of W Wᵀ.
pub fn kl_direct(preconditioned: &SpdMatrix) -> (f64, f64) {
    let w = preconditioned.matrix();
    let ld = preconditioned.log_det();
    (w.trace() - ld, preconditioned.inverse().trace() + ld)
}

/// Independent 2×2 blocks γₙ² [[1, ρₙ], [ρₙ, 1]].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockModel {
    pub rhos: Vec<f64>,
    pub gammas: Vec<f64>,
}

impl BlockModel {
    pub fn new(rhos: Vec<f64>, gammas: Option<Vec<f64>>) -> Result<Self> {
        if rhos.is_empty() {
            return Err(Error::InvalidConfig("block model needs at least one block".into()));
        }
        if let Some(bad) = rhos.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::OutOfRange(format!("rho = {bad} must lie in (0, 1)")));
        }
        let gammas = gammas.unwrap_or_else(|| vec![1.0; rhos.len()]);
        if gammas.len() != rhos.len() {
            return Err(Error::DimensionMismatch {
                expected: rhos.len(),
                found: gammas.len(),
            });
        }
        if let Some(bad) = gammas.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::OutOfRange(format!("gamma = {bad} must be positive")));
        }
        Ok(Self { rhos, gammas })
    }

    pub fn blocks(&self) -> usize {
        self.rhos.len()
    }

    /// The 2B×2B block-diagonal covariance.
    pub fn covariance(&self) -> Result<SpdMatrix> {
        let n = 2 * self.blocks();
        let mut c = DMatrix::zeros(n, n);
        for (b, (r, g)) in self.rhos.iter().zip(&self.gammas).enumerate() {
            let g2 = g * g;
            let i = 2 * b;
            c[(i, i)] = g2;
            c[(i + 1, i + 1)] = g2;
            c[(i, i + 1)] = g2 * r;
            c[(i + 1, i)] = g2 * r;
        }
        SpdMatrix::new(c)
    }

    /// Eigenvalues {γₙ²(1 ± ρₙ)} of the raw covariance.
    pub fn raw_variances(&self) -> Vec<f64> {
        self.rhos
            .iter()
            .zip(&self.gammas)
            .flat_map(|(r, g)| [g * g * (1.0 + r), g * g * (1.0 - r)])
            .collect()
    }
}

/// κ of a block model under each diagonal preconditioner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockKappas {
    pub fwd: f64,
    pub rev: f64,
    pub opt: f64,
    pub nothing: f64,
}

/// Closed forms for κ after forward-KL (dₙ² = γₙ²), reverse-KL
/// (dₙ² = γₙ²(1 − ρₙ²)) and κ-optimal (dₙ² ∝ γₙ²(1 + ρₙ)) diagonals, and
/// without preconditioning.
pub fn block_kappas(model: &BlockModel) -> Result<BlockKappas> {
    let rho1 = model.rhos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut fwd, mut rev, mut opt) = (0.0, 0.0, 0.0);
    for &r in &model.rhos {
        let f = ((1.0 + rho1) / (1.0 + r)).powi(2) + ((1.0 + rho1) / (1.0 - r)).powi(2);
        fwd += f;
        rev += f * ((1.0 - r * r) / (1.0 - rho1 * rho1)).powi(2);
        opt += 1.0 + ((1.0 + r) / (1.0 - r)).powi(2);
    }
    Ok(BlockKappas {
        fwd: fwd.powf(0.25),
        rev: rev.powf(0.25),
        opt: opt.powf(0.25),
        nothing: kappa_from_variances(&model.raw_variances())?,
    })
}

/// Random SPD test ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ensemble", rename_all = "snake_case")]
pub enum Table1Ensemble {
    /// AAᵀ with A an N×2N standard normal matrix.
    Wishart,
    /// The inverse of a Wishart draw.
    InvWishart,
    /// UΛUᵀ with Haar U and about `pct` percent of scale lengths near 5.
    RotatedScale { pct: u32 },
}

impl Table1Ensemble {
    /// The five columns in table order.
    pub const ALL: [Table1Ensemble; 5] = [
        Table1Ensemble::Wishart,
        Table1Ensemble::InvWishart,
        Table1Ensemble::RotatedScale { pct: 5 },
        Table1Ensemble::RotatedScale { pct: 10 },
        Table1Ensemble::RotatedScale { pct: 20 },
    ];

    pub fn label(&self) -> String {
        match self {
            Table1Ensemble::Wishart => "wishart".into(),
            Table1Ensemble::InvWishart => "inv_wishart".into(),
            Table1Ensemble::RotatedScale { pct } => format!("rotated_scale_{pct}"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SpdMatrix> {
        if n < 2 {
            return Err(Error::InvalidConfig("ensembles need N >= 2".into()));
        }
        match *self {
            Table1Ensemble::Wishart | Table1Ensemble::InvWishart => {
                let a = DMatrix::<f64>::from_fn(n, 2 * n, |_, _| rng.sample(StandardNormal));
                let w = SpdMatrix::new_symmetrized(&a * a.transpose())?;
                if *self == Table1Ensemble::Wishart {
                    Ok(w)
                } else {
                    SpdMatrix::new_symmetrized(w.inverse())
                }
            }
            Table1Ensemble::RotatedScale { pct } => {
                if pct == 0 || pct >= 100 {
                    return Err(Error::OutOfRange(format!("pct = {pct} must lie in 1..100")));
                }
                let sigmas = rotated_scale_sigmas(n, pct)?;
                let u = haar_orthogonal(n, rng);
                let lambda = DMatrix::from_diagonal(&DVector::from_iterator(
                    n,
                    sigmas.iter().map(|s| s * s),
                ));
                SpdMatrix::new_symmetrized(&u * lambda * u.transpose())
            }
        }
    }
}

/// Scale lengths of the rotated-scale ensemble: the generator with m = 1,
/// M = 5, β = 4, c = pct/100 on the points i/N, i = 1..N.
pub fn rotated_scale_sigmas(n: usize, pct: u32) -> Result<Vec<f64>> {
    let params = GeneratorParams::new(1.0, 5.0, pct as f64 / 100.0, 4.0)?;
    let points: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    generator_values(&points, &params)
}

/// Preconditioning method compared in [`compare_preconditioners`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nothing,
    FwdKl,
    RevKl,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Nothing, Method::FwdKl, Method::RevKl];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Nothing => "nothing",
            Method::FwdKl => "fwd_kl",
            Method::RevKl => "rev_kl",
        }
    }
}

/// κ under no, forward-KL and reverse-KL diagonal preconditioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub kappa_nothing: f64,
    pub kappa_fwd: f64,
    pub kappa_rev: f64,
    pub winner: Method,
}

impl Comparison {
    pub fn kappa(&self, m: Method) -> f64 {
        match m {
            Method::Nothing => self.kappa_nothing,
            Method::FwdKl => self.kappa_fwd,
            Method::RevKl => self.kappa_rev,
        }
    }
}

/// Picks the method with the lowest κ; exact ties go to the earlier of
/// nothing, fwd_kl, rev_kl.
pub fn compare_preconditioners(c: &SpdMatrix) -> Result<Comparison> {
    let kappa_nothing = kappa_spd(c)?;
    let fwd = PreconditionerSpec::Diagonal {
        d: forward_kl_diagonal(c),
    };
    let rev = PreconditionerSpec::Diagonal {
        d: reverse_kl_diagonal(c)?,
    };
    let kappa_fwd = kappa_spd(&precondition_covariance(c, &fwd)?)?;
    let kappa_rev = kappa_spd(&precondition_covariance(c, &rev)?)?;
    let mut cmp = Comparison {
        kappa_nothing,
        kappa_fwd,
        kappa_rev,
        winner: Method::Nothing,
    };
    for m in Method::ALL {
        if cmp.kappa(m) < cmp.kappa(cmp.winner) {
            cmp.winner = m;
        }
    }
    Ok(cmp)
}

/// Symmetric circulant covariance with a low-pass spectrum.
#[derive(Debug, Clone)]
pub struct Circulant {
    pub covariance: SpdMatrix,
    /// Eigenvalue σₖ² attached to frequency k = 0..N−1.
    pub variances: Vec<f64>,
}

/// Circulant target whose scale length at frequency k is the generator value
/// at yₖ = min(k, N − k)/(N/2).
///
/// C_ij = (1/N) Σₖ σₖ² cos(2πk(i − j)/N), so σₖ² are its eigenvalues.
pub fn circulant_covariance(n: usize, params: &GeneratorParams) -> Result<Circulant> {
    if n < 2 {
        return Err(Error::InvalidConfig("circulant needs N >= 2".into()));
    }
    let half = n as f64 / 2.0;
    let points: Vec<f64> = (0..n).map(|k| k.min(n - k) as f64 / half).collect();
    let sigmas = generator_values(&points, params)?;
    let variances: Vec<f64> = sigmas.iter().map(|s| s * s).collect();
    let first: Vec<f64> = (0..n)
        .map(|d| {
            variances
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    v * (2.0 * std::f64::consts::PI * ((k * d) % n) as f64 / n as f64).cos()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let c = DMatrix::from_fn(n, n, |i, j| first[(i + n - j) % n]);
    Ok(Circulant {
        covariance: SpdMatrix::new_symmetrized(c)?,
        variances,
    })
}

/// Estimator used by [`train_diag_lowrank`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Exact Gaussian reverse KL via traces and log-determinants.
    ClosedForm,
    /// Monte Carlo average over a fixed set of standard normal draws.
    MonteCarlo { draws: usize },
}

/// Reverse KL(q‖p) for q = N(0, F²), F = diag(d) + UUᵀ, p = N(0, C).
#[derive(Debug, Clone)]
pub struct LowRankObjective {
    precision: DMatrix<f64>,
    log_det_c: f64,
    /// Second moment of the Monte Carlo draws; `None` for the closed form.
    draw_moment: Option<DMatrix<f64>>,
    n: usize,
}

/// Objective value and gradients with respect to (log d, U).
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub grad_log_d: Vec<f64>,
    pub grad_u: DMatrix<f64>,
}

impl LowRankObjective {
    pub fn new(target: &SpdMatrix, mode: LossMode, seed: u64) -> Result<Self> {
        let n = target.dim();
        let draw_moment = match mode {
            LossMode::ClosedForm => None,
            LossMode::MonteCarlo { draws } => {
                if draws == 0 {
                    return Err(Error::InvalidConfig("Monte Carlo mode needs draws".into()));
                }
                let mut rng = seeded(seed);
                let z = DMatrix::<f64>::from_fn(n, draws, |_, _| rng.sample(StandardNormal));
                Some(symmetrize(&(&z * z.transpose() / draws as f64)))
            }
        };
        Ok(Self {
            precision: target.inverse(),
            log_det_c: target.log_det(),
            draw_moment,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn f_matrix(log_d: &[f64], u: &DMatrix<f64>) -> DMatrix<f64> {
        let mut f = u * u.transpose();
        for (i, ld) in log_d.iter().enumerate() {
            f[(i, i)] += ld.exp();
        }
        f
    }

    /// ½[tr(P F Σ F) − N + log det C − 2 log det F] with Σ = I or the draw moment.
    pub fn value(&self, log_d: &[f64], u: &DMatrix<f64>) -> Result<f64> {
        let f = Self::f_matrix(log_d, u);
        let lf = cholesky(&f).map_err(|e| Error::SingularPreconditioner(e.to_string()))?;
        let pf = &self.precision * &f;
        let quad = match &self.draw_moment {
            None => pf.component_mul(&f).sum(),
            Some(s) => (pf * s).component_mul(&f).sum(),
        };
        Ok(0.5 * (quad - self.n as f64 + self.log_det_c) - log_det_from_cholesky(&lf))
    }

    /// Value and gradient. With G = ½(ΣFP + PFΣ) − F⁻¹, ∇U = 2GU and
    /// ∂/∂log dᵢ = Gᵢᵢ dᵢ.
    pub fn evaluate(&self, log_d: &[f64], u: &DMatrix<f64>) -> Result<Evaluation> {
        let f = Self::f_matrix(log_d, u);
        let lf = cholesky(&f).map_err(|e| Error::SingularPreconditioner(e.to_string()))?;
        let finv = inverse_from_cholesky(&lf);
        let pf = &self.precision * &f;
        let (quad, sym) = match &self.draw_moment {
            None => (pf.component_mul(&f).sum(), symmetrize(&pf)),
            Some(s) => {
                let pfs = &pf * s;
                (pfs.component_mul(&f).sum(), symmetrize(&pfs))
            }
        };
        let value = 0.5 * (quad - self.n as f64 + self.log_det_c) - log_det_from_cholesky(&lf);
        let g = sym - finv;
        let grad_u = &g * u * 2.0;
        let grad_log_d = log_d.iter().enumerate().map(|(i, ld)| g[(i, i)] * ld.exp()).collect();
        Ok(Evaluation {
            value,
            grad_log_d,
            grad_u,
        })
    }
}

/// Gradient-descent settings for [`train_diag_lowrank`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this
    /// fraction of max(|objective|, 1).
    pub rel_tolerance: f64,
    pub initial_step: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    pub max_halvings: usize,
    /// Scale of the random initial U.
    pub init_scale: f64,
    pub loss: LossMode,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            rel_tolerance: 1e-8,
            initial_step: 1e-2,
            armijo: 1e-4,
            max_halvings: 60,
            init_scale: 0.01,
            loss: LossMode::ClosedForm,
        }
    }
}

/// Outcome of a low-rank training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub spec: PreconditionerSpec,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
    pub kappa_before: f64,
    pub kappa_after: f64,
}

/// Fits F = D + UUᵀ with rank-`k` U by minimizing reverse KL(q‖p).
///
/// D starts at the reverse-KL diagonal and U at `init_scale` times standard
/// normals drawn from `seed` (U = 0 is a stationary point). Gradient descent
/// on (log d, U) with Armijo backtracking.
pub fn train_diag_lowrank(
    target: &SpdMatrix,
    k: usize,
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainResult> {
    let n = target.dim();
    if k > n {
        return Err(Error::InvalidConfig(format!("rank {k} exceeds dimension {n}")));
    }
    let objective = LowRankObjective::new(target, opts.loss, crate::rng::derive_seed(seed, 1))?;
    let mut log_d: Vec<f64> = reverse_kl_diagonal(target)?.iter().map(|d| d.ln()).collect();
    let mut rng = seeded(seed);
    let mut u = DMatrix::<f64>::from_fn(n, k, |_, _| opts.init_scale * rng.sample::<f64, _>(StandardNormal));

    let mut eval = objective.evaluate(&log_d, &u)?;
    let initial_objective = eval.value;
    let mut trace = vec![eval.value];
    if !eval.value.is_finite() {
        return Err(Error::NonFinite { iteration: 0, trace });
    }
    let mut step = opts.initial_step;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let gnorm2 = eval.grad_log_d.iter().map(|g| g * g).sum::<f64>()
            + eval.grad_u.iter().map(|g| g * g).sum::<f64>();
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand_d: Vec<f64> = log_d
                .iter()
                .zip(&eval.grad_log_d)
                .map(|(l, g)| l - step * g)
                .collect();
            let cand_u = &u - &eval.grad_u * step;
            if let Ok(v) = objective.value(&cand_d, &cand_u) {
                if v.is_finite() && v <= eval.value - opts.armijo * step * gnorm2 {
                    accepted = Some((cand_d, cand_u, v));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand_d, cand_u, v)) = accepted else {
            converged = true;
            break;
        };
        let decrease = eval.value - v;
        log_d = cand_d;
        u = cand_u;
        eval = objective.evaluate(&log_d, &u)?;
        trace.push(eval.value);
        if !eval.value.is_finite() || eval.grad_u.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                iteration: iterations,
                trace,
            });
        }
        step *= 2.0;
        if decrease < opts.rel_tolerance * eval.value.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let d: Vec<f64> = log_d.iter().map(|l| l.exp()).collect();
    let spec = PreconditionerSpec::diag_plus_lowrank(&d, &u);
    let kappa_before = kappa_spd(target)?;
    let kappa_after = kappa_spd(&precondition_covariance(target, &spec)?)?;
    Ok(TrainResult {
        spec,
        initial_objective,
        final_objective: eval.value,
        iterations,
        converged,
        trace,
        kappa_before,
        kappa_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::kappa;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn random_spd(n: usize, seed: u64) -> SpdMatrix {
        let mut rng = seeded(seed);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
        SpdMatrix::new_symmetrized(&a * a.transpose() + DMatrix::identity(n, n) * 0.5).unwrap()
    }

    #[test]
    fn precondition_examples() {
        let c = random_spd(5, 1);
        let same = precondition_covariance(&c, &PreconditionerSpec::Identity).unwrap();
        assert_eq!(same.matrix(), c.matrix());

        let flat = precondition_covariance(&c, &PreconditionerSpec::cholesky_of(&c)).unwrap();
        assert!((flat.matrix() - DMatrix::identity(5, 5)).amax() < 1e-10);
        assert!(rel(kappa_spd(&flat).unwrap(), 5f64.powf(0.25)) < 1e-10);

        let d = SpdMatrix::from_diagonal(&[4.0, 1.0]).unwrap();
        let out = precondition_covariance(&d, &PreconditionerSpec::Diagonal { d: vec![2.0, 1.0] }).unwrap();
        assert_eq!(out.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn preconditioned_kappa_matches_factor_norms() {
        // κ(F⁻¹CF⁻ᵀ) = ‖F⁻¹A‖₂ ‖(F⁻¹A)⁻¹‖_{S⁴} via singular values of F⁻¹A.
        let c = random_spd(6, 2);
        let f = PreconditionerSpec::DiagPlusLowRank {
            d: vec![1.0, 2.0, 0.5, 1.5, 1.0, 0.7],
            u: vec![vec![0.3], vec![-0.1], vec![0.2], vec![0.0], vec![0.5], vec![-0.4]],
        };
        let pre = precondition_covariance(&c, &f).unwrap();
        let fm = f.matrix(6).unwrap();
        let w = fm.clone().try_inverse().unwrap() * c.cholesky_factor();
        let sv = w.singular_values();
        let smax = sv.max();
        let direct = smax * sv.iter().map(|s| s.powi(-4)).sum::<f64>().powf(0.25);
        assert!(rel(kappa_spd(&pre).unwrap(), direct) < 1e-9);
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            PreconditionerSpec::Diagonal { d: vec![1.0, 0.0] }.validate(2),
            Err(Error::SingularPreconditioner(_))
        ));
        assert!(matches!(
            PreconditionerSpec::Diagonal { d: vec![1.0] }.validate(2),
            Err(Error::DimensionMismatch { .. })
        ));
        let upper = PreconditionerSpec::Cholesky {
            l: vec![vec![1.0, 1.0], vec![0.0, 1.0]],
        };
        assert!(upper.validate(2).is_err());
        let c = SpdMatrix::identity(2);
        assert!(precondition_covariance(&c, &upper).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let spec = PreconditionerSpec::diag_plus_lowrank(&[1.0, 2.0], &DMatrix::from_row_slice(2, 1, &[0.5, -0.5]));
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(json, r#"{"kind":"diag_plus_lowrank","d":[1.0,2.0],"u":[[0.5],[-0.5]]}"#);
        let back: PreconditionerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        assert_eq!(serde_json::to_string(&PreconditionerSpec::Identity).unwrap(), r#"{"kind":"identity"}"#);
    }

    #[test]
    fn kl_diagonals() {
        let id = SpdMatrix::identity(3);
        assert_eq!(forward_kl_diagonal(&id), vec![1.0; 3]);
        assert_eq!(reverse_kl_diagonal(&id).unwrap(), vec![1.0; 3]);

        let rho = 0.6;
        let block = BlockModel::new(vec![rho], None).unwrap().covariance().unwrap();
        assert_eq!(forward_kl_diagonal(&block), vec![1.0, 1.0]);
        for d in reverse_kl_diagonal(&block).unwrap() {
            assert!((d * d - (1.0 - rho * rho)).abs() < 1e-14);
        }

        let c = SpdMatrix::from_diagonal(&[4.0, 9.0]).unwrap();
        let d = forward_kl_diagonal(&c);
        assert_eq!(d, vec![2.0, 3.0]);
        let pre = precondition_covariance(&c, &PreconditionerSpec::Diagonal { d }).unwrap();
        assert!(rel(kappa_spd(&pre).unwrap(), 2f64.powf(0.25)) < 1e-14);
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_gaussian(&[1.0; 5]), (5.0, 5.0));
        let (f, r) = kl_gaussian(&[2.0]);
        assert!((f - (4.0 - 4f64.ln())).abs() < 1e-15);
        assert!((r - (0.25 + 4f64.ln())).abs() < 1e-15);
        let l = [0.3, 1.7, 2.2];
        let inv: Vec<f64> = l.iter().map(|x| 1.0 / x).collect();
        assert!((kl_gaussian(&l).0 - kl_gaussian(&inv).1).abs() < 1e-13);
    }

    #[test]
    fn kl_eigen_form_matches_direct() {
        for seed in 0..20 {
            let c = random_spd(5, seed);
            let lambdas: Vec<f64> = c.eigenvalues().unwrap().iter().map(|v| v.sqrt()).collect();
            let (f1, r1) = kl_gaussian(&lambdas);
            let (f2, r2) = kl_direct(&c);
            assert!((f1 - f2).abs() < 1e-10 * f1.abs().max(1.0));
            assert!((r1 - r2).abs() < 1e-10 * r1.abs().max(1.0));
        }
    }

    #[test]
    fn block_examples() {
        let k = block_kappas(&BlockModel::new(vec![0.9], None).unwrap()).unwrap();
        for v in [k.fwd, k.rev, k.opt] {
            assert!(rel(v.powi(4), 362.0) < 1e-12);
        }
        let k = block_kappas(&BlockModel::new(vec![0.9, 0.5], None).unwrap()).unwrap();
        assert!((k.fwd.powi(4) - 378.04).abs() < 0.01);
        // Exactly 25 + 225 + 362 = 612.
        assert!(rel(k.rev.powi(4), 612.0) < 1e-12);
        assert!(rel(k.opt.powi(4), 372.0) < 1e-12);

        let skewed = BlockModel::new(vec![0.5, 0.5, 0.5], Some(vec![30.0, 1.0, 1.0])).unwrap();
        let k = block_kappas(&skewed).unwrap();
        assert!(k.nothing > k.rev);
        assert!(BlockModel::new(vec![1.0], None).is_err());
        assert!(BlockModel::new(vec![0.5], Some(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn compare_examples() {
        let c = compare_preconditioners(&SpdMatrix::identity(4)).unwrap();
        assert_eq!(c.winner, Method::Nothing);
        // Unit-diagonal blocks: forward KL is the identity map, so it ties
        // with doing nothing and both beat reverse KL.
        let blocks = BlockModel::new(vec![0.9, 0.5], None).unwrap().covariance().unwrap();
        let c = compare_preconditioners(&blocks).unwrap();
        assert_eq!(c.kappa_fwd, c.kappa_nothing);
        assert!(c.kappa_fwd < c.kappa_rev);
        assert_eq!(c.winner, Method::Nothing);
        assert!((c.kappa_fwd.powi(4) - 378.04).abs() < 0.01);
    }

    #[test]
    fn ensembles() {
        let mut rng = seeded(10);
        let w = Table1Ensemble::Wishart.sample(100, &mut rng).unwrap();
        // Bulk of AAᵀ/(2N) inside the ω = 2 support, up to edge fluctuations.
        let (a, b) = crate::randmat::mp_support(2.0);
        let eig = w.eigenvalues().unwrap();
        let inside = eig.iter().filter(|e| {
            let x = *e / 200.0;
            x > 0.9 * a && x < 1.1 * b
        });
        assert_eq!(inside.count(), 100);

        let s = rotated_scale_sigmas(100, 20).unwrap();
        let near_top = s.iter().filter(|v| **v > 4.0).count();
        assert!((15..=25).contains(&near_top), "{near_top}");
        let rs = Table1Ensemble::RotatedScale { pct: 20 }.sample(50, &mut rng).unwrap();
        let sig = rotated_scale_sigmas(50, 20).unwrap();
        let want = kappa(&crate::spectra::Spectrum::new(sig).unwrap());
        assert!(rel(kappa_spd(&rs).unwrap(), want) < 1e-9);
        assert!(Table1Ensemble::RotatedScale { pct: 0 }.sample(10, &mut rng).is_err());
    }

    #[test]
    fn circulant_eigenvalues() {
        let p = GeneratorParams::new(1.0, 5.0, 0.2, 8.0).unwrap();
        let circ = circulant_covariance(32, &p).unwrap();
        let mut want = circ.variances.clone();
        want.sort_by(|a, b| b.total_cmp(a));
        for (g, w) in circ.covariance.eigenvalues().unwrap().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10 * want[0]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (seed, mode) in [(1, LossMode::ClosedForm), (2, LossMode::MonteCarlo { draws: 40 })] {
            let n = 6;
            let c = random_spd(n, seed);
            let obj = LowRankObjective::new(&c, mode, 9).unwrap();
            let mut rng = seeded(seed + 100);
            let log_d: Vec<f64> = (0..n).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
            let u = DMatrix::<f64>::from_fn(n, 2, |_, _| 0.4 * rng.sample::<f64, _>(StandardNormal));
            let e = obj.evaluate(&log_d, &u).unwrap();
            let eps = 1e-6;
            for i in 0..n {
                let (mut p, mut m) = (log_d.clone(), log_d.clone());
                p[i] += eps;
                m[i] -= eps;
                let fd = (obj.value(&p, &u).unwrap() - obj.value(&m, &u).unwrap()) / (2.0 * eps);
                assert!((fd - e.grad_log_d[i]).abs() <= 1e-5 * e.grad_log_d[i].abs().max(1e-3));
            }
            for i in 0..n {
                for j in 0..2 {
                    let (mut p, mut m) = (u.clone(), u.clone());
                    p[(i, j)] += eps;
                    m[(i, j)] -= eps;
                    let fd = (obj.value(&log_d, &p).unwrap() - obj.value(&log_d, &m).unwrap()) / (2.0 * eps);
                    assert!((fd - e.grad_u[(i, j)]).abs() <= 1e-5 * e.grad_u[(i, j)].abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn objective_matches_kl_gaussian() {
        // At U = 0 the reverse KL is half of kl_gaussian's reverse form minus N.
        let c = random_spd(4, 5);
        let obj = LowRankObjective::new(&c, LossMode::ClosedForm, 0).unwrap();
        let d = [1.1, 0.8, 1.3, 0.9];
        let log_d: Vec<f64> = d.iter().map(|v: &f64| v.ln()).collect();
        let u = DMatrix::zeros(4, 1);
        let pre = precondition_covariance(&c, &PreconditionerSpec::Diagonal { d: d.to_vec() }).unwrap();
        let lambdas: Vec<f64> = pre.eigenvalues().unwrap().iter().map(|v| v.sqrt()).collect();
        let want = 0.5 * (kl_gaussian(&lambdas).1 - 4.0);
        assert!((obj.value(&log_d, &u).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn training_on_identity() {
        let c = SpdMatrix::identity(8);
        let r = train_diag_lowrank(&c, 3, &TrainOptions::default(), 4).unwrap();
        assert!(r.final_objective <= r.initial_objective);
        assert!(rel(r.kappa_after, 8f64.powf(0.25)) < 0.05);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn training_reduces_objective() {
        let c = random_spd(10, 3);
        let r = train_diag_lowrank(&c, 2, &TrainOptions::default(), 1).unwrap();
        assert!(r.final_objective < r.initial_objective);
        assert!(r.kappa_after < r.kappa_before);
        let json = serde_json::to_string(&r.spec).unwrap();
        assert!(json.starts_with(r#"{"kind":"diag_plus_lowrank""#));
        assert!(train_diag_lowrank(&c, 11, &TrainOptions::default(), 1).is_err());
    }
}
