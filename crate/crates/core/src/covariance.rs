//! Centered Gaussian targets N(0, C).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::spectra::Spectrum;

/// Covariance of a centered Gaussian target.
#[derive(Debug, Clone)]
pub enum CovarianceModel {
    /// `C = diag(variances)`.
    Diagonal { variances: Vec<f64> },
    /// Dense SPD covariance with its precision matrix.
    Dense {
        cov: SpdMatrix,
        precision: DMatrix<f64>,
    },
}

impl CovarianceModel {
    /// Diagonal covariance with `σₙ²` on the diagonal, in spectrum order.
    pub fn from_spectrum(spectrum: &Spectrum) -> Self {
        CovarianceModel::Diagonal {
            variances: spectrum.variances(),
        }
    }

    pub fn diagonal(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() {
            return Err(Error::InvalidConfig("empty covariance".into()));
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::NotPositiveDefinite(
                "diagonal variances must be finite and positive".into(),
            ));
        }
        Ok(CovarianceModel::Diagonal { variances })
    }

    pub fn dense(cov: SpdMatrix) -> Self {
        let precision = cov.inverse();
        CovarianceModel::Dense { cov, precision }
    }

    /// `C = AAᵀ` for a scale factor `A`.
    pub fn from_scale_factor(a: &DMatrix<f64>) -> Result<Self> {
        Ok(Self::dense(SpdMatrix::new_symmetrized(a * a.transpose())?))
    }

    pub fn dim(&self) -> usize {
        match self {
            CovarianceModel::Diagonal { variances } => variances.len(),
            CovarianceModel::Dense { cov, .. } => cov.dim(),
        }
    }

    /// Dense SPD form of the covariance.
    pub fn to_spd(&self) -> Result<SpdMatrix> {
        match self {
            CovarianceModel::Diagonal { variances } => SpdMatrix::from_diagonal(variances),
            CovarianceModel::Dense { cov, .. } => Ok(cov.clone()),
        }
    }

    /// Scale lengths of the target (square roots of the covariance eigenvalues).
    pub fn spectrum(&self) -> Result<Spectrum> {
        match self {
            CovarianceModel::Diagonal { variances } => Spectrum::from_variances(variances),
            CovarianceModel::Dense { cov, .. } => Spectrum::from_variances(cov.eigenvalues()?),
        }
    }

    /// Draws x ~ N(0, C), consuming exactly `dim()` standard normals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.transform_standard(&z)
    }

    /// Maps a standard normal vector to N(0, C): `σ ⊙ z` or `L z`.
    pub fn transform_standard(&self, z: &[f64]) -> Vec<f64> {
        match self {
            CovarianceModel::Diagonal { variances } => {
                variances.iter().zip(z).map(|(v, zi)| v.sqrt() * zi).collect()
            }
            CovarianceModel::Dense { cov, .. } => {
                let l = cov.cholesky_factor();
                let n = z.len();
                let mut x = vec![0.0; n];
                for (j, zj) in z.iter().enumerate() {
                    let col = l.column(j);
                    for i in j..n {
                        x[i] += col[i] * zj;
                    }
                }
                x
            }
        }
    }

    /// Writes `C⁻¹ x` into `out`.
    pub fn precision_times(&self, x: &[f64], out: &mut [f64]) {
        match self {
            CovarianceModel::Diagonal { variances } => {
                for ((o, xi), v) in out.iter_mut().zip(x).zip(variances) {
                    *o = xi / v;
                }
            }
            CovarianceModel::Dense { precision, .. } => {
                // Symmetric, so row i equals column i (contiguous in storage).
                for (i, o) in out.iter_mut().enumerate() {
                    *o = precision
                        .column(i)
                        .iter()
                        .zip(x)
                        .map(|(p, xj)| p * xj)
                        .sum();
                }
            }
        }
    }

    /// ∇ log p(x) = −C⁻¹x, written into `out`.
    pub fn grad_log_density(&self, x: &[f64], out: &mut [f64]) {
        self.precision_times(x, out);
        for o in out.iter_mut() {
            *o = -*o;
        }
    }

    /// −log p(x) without the normalizing constant: xᵀC⁻¹x / 2.
    pub fn potential(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.precision_times(x, &mut px);
        0.5 * x.iter().zip(&px).map(|(a, b)| a * b).sum::<f64>()
    }
}
