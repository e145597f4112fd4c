//! Dense symmetric linear algebra: a cyclic Jacobi eigensolver, Cholesky
//! factorization, triangular solves, and an SPD matrix type with cached
//! factorizations.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Off-diagonal Frobenius norm, relative to `‖C‖_F`, at which Jacobi stops.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Sweep cap for the Jacobi eigensolver.
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Relative symmetry tolerance accepted by [`SpdMatrix::new`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Smallest admissible eigenvalue relative to the largest.
pub const SPD_TOLERANCE: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: DMatrix<f64>,
}

/// Eigen-decomposition by cyclic Jacobi rotations.
pub fn symmetric_eigen(matrix: &DMatrix<f64>) -> Result<SymmetricEigen> {
    let (values, vectors) = jacobi(matrix, true)?;
    Ok(SymmetricEigen {
        values,
        vectors: vectors.expect("vectors requested"),
    })
}

/// Eigenvalues only (descending).
///
/// Uses Householder tridiagonalization with implicit QR, which is far cheaper
/// than Jacobi for large matrices. [`jacobi_eigenvalues`] is the rotation route.
pub fn symmetric_eigenvalues(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_input(matrix)?;
    let sym = symmetrize(matrix);
    let mut values: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoConvergence {
            sweeps: 0,
            off_diagonal: f64::NAN,
        });
    }
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Eigenvalues only by cyclic Jacobi rotations (no vector accumulation).
pub fn jacobi_eigenvalues(matrix: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(jacobi(matrix, false)?.0)
}

fn check_input(matrix: &DMatrix<f64>) -> Result<usize> {
    let n = check_square(matrix)?;
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("matrix has non-finite entries".into()));
    }
    let (asym, scale) = max_asymmetry(matrix);
    if asym > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(n)
}

fn check_square(matrix: &DMatrix<f64>) -> Result<usize> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: matrix.ncols(),
        });
    }
    Ok(n)
}

fn max_asymmetry(matrix: &DMatrix<f64>) -> (f64, f64) {
    let n = matrix.nrows();
    let mut scale = 0.0f64;
    let mut asym = 0.0f64;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(matrix[(i, j)].abs());
            if i > j {
                asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
    }
    (asym, scale)
}

fn jacobi(matrix: &DMatrix<f64>, want_vectors: bool) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
    let n = check_input(matrix)?;

    // Row-major working copy of the symmetrized matrix.
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
        }
    }
    // Eigenvectors are accumulated row-major as rows of Vᵀ so that each
    // rotation touches two contiguous rows.
    let mut vt = if want_vectors {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Some(v)
    } else {
        None
    };

    let frob = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += a[i * n + j] * a[i * n + j];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = frob == 0.0 || n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        if off_norm(&a) < JACOBI_TOLERANCE * frob {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Rotation is numerically irrelevant below this level.
                if apq.abs() < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[r * n + p] = new_rp;
                    a[p * n + r] = new_rp;
                    a[r * n + q] = new_rq;
                    a[q * n + r] = new_rq;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                if let Some(v) = vt.as_mut() {
                    let (head, tail) = v.split_at_mut(q * n);
                    let row_p = &mut head[p * n..(p + 1) * n];
                    let row_q = &mut tail[..n];
                    for (vp, vq) in row_p.iter_mut().zip(row_q.iter_mut()) {
                        let (xp, xq) = (*vp, *vq);
                        *vp = c * xp - s * xq;
                        *vq = s * xp + c * xq;
                    }
                }
            }
        }
    }
    if !converged {
        let off = off_norm(&a);
        if off >= JACOBI_TOLERANCE * frob {
            return Err(Error::NoConvergence {
                sweeps: JACOBI_MAX_SWEEPS,
                off_diagonal: off,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = vt.map(|v| DMatrix::from_fn(n, n, |row, col| v[order[col] * n + row]));
    Ok((values, vectors))
}

/// Lower-triangular Cholesky factor `L` with `LLᵀ = C`.
///
/// Only the lower triangle of `matrix` is read.
pub fn cholesky(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(matrix)?;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = matrix[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "Cholesky pivot {j} is {diag:e}"
            )));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut v = matrix[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / ljj;
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut v = x[(i, col)];
            for k in 0..i {
                v -= l[(i, k)] * x[(k, col)];
            }
            x[(i, col)] = v / l[(i, i)];
        }
    }
    x
}

/// Solves `Lᵀ X = B` for lower-triangular `L`.
pub fn solve_lower_transpose(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for col in 0..x.ncols() {
        for i in (0..n).rev() {
            let mut v = x[(i, col)];
            for k in (i + 1)..n {
                v -= l[(k, i)] * x[(k, col)];
            }
            x[(i, col)] = v / l[(i, i)];
        }
    }
    x
}

/// `C⁻¹` from the Cholesky factor of `C`.
pub fn inverse_from_cholesky(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let linv = solve_lower(l, &DMatrix::identity(n, n));
    let inv = linv.transpose() * &linv;
    symmetrize(&inv)
}

/// `log det C` from the Cholesky factor of `C`.
pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Haar-distributed random orthogonal matrix.
///
/// QR of an i.i.d. standard normal matrix, with the signs of `R`'s diagonal
/// absorbed into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Symmetric positive definite matrix with lazily cached eigen-decomposition.
///
/// Construction checks symmetry (to [`SYMMETRY_TOLERANCE`] relative) and
/// positive definiteness through a successful Cholesky factorization, which
/// is kept. Eigen access additionally enforces the relative eigenvalue floor
/// [`SPD_TOLERANCE`].
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    cholesky: DMatrix<f64>,
    eigenvalues: OnceLock<Result<Vec<f64>>>,
    eigen: OnceLock<Result<SymmetricEigen>>,
}

impl SpdMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        check_square(&entries)?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entries".into()));
        }
        let (asym, scale) = max_asymmetry(&entries);
        if asym > SYMMETRY_TOLERANCE * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        Self::from_symmetric(symmetrize(&entries))
    }

    /// Symmetrizes `entries` before validation. For results of products
    /// such as `F⁻¹CF⁻ᵀ` whose rounding asymmetry is not meaningful.
    pub fn new_symmetrized(entries: DMatrix<f64>) -> Result<Self> {
        check_square(&entries)?;
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entries".into()));
        }
        Self::from_symmetric(symmetrize(&entries))
    }

    fn from_symmetric(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 {
            return Err(Error::InvalidConfig("empty matrix".into()));
        }
        let cholesky = cholesky(&entries)?;
        Ok(Self {
            entries,
            cholesky,
            eigenvalues: OnceLock::new(),
            eigen: OnceLock::new(),
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n]).expect("identity is SPD")
    }

    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.entries
    }

    /// Lower-triangular `L` with `LLᵀ = C`.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }

    /// Eigenvalues in descending order, checked against the SPD floor.
    pub fn eigenvalues(&self) -> Result<&[f64]> {
        if let Some(Ok(e)) = self.eigen.get() {
            return Ok(&e.values);
        }
        self.eigenvalues
            .get_or_init(|| symmetric_eigenvalues(&self.entries).and_then(check_floor))
            .as_ref()
            .map(Vec::as_slice)
            .map_err(Clone::clone)
    }

    pub fn eigen(&self) -> Result<&SymmetricEigen> {
        self.eigen
            .get_or_init(|| {
                let e = symmetric_eigen(&self.entries)?;
                check_floor(e.values.clone())?;
                Ok(e)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        inverse_from_cholesky(&self.cholesky)
    }

    pub fn log_det(&self) -> f64 {
        log_det_from_cholesky(&self.cholesky)
    }
}

fn check_floor(values: Vec<f64>) -> Result<Vec<f64>> {
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if !(max > 0.0) || min <= SPD_TOLERANCE * max {
        return Err(Error::NotPositiveDefinite(format!(
            "eigenvalue {min:e} below {SPD_TOLERANCE:e} x {max:e}"
        )));
    }
    Ok(values)
}
