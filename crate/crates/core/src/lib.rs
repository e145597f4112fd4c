//! Condition numbers, step-size theory and preconditioning for Hamiltonian
//! Monte Carlo on Gaussian targets.
//!
//! The central quantity is κ = (Σ (σ₁/σₙ)⁴)^{1/4} over the scale lengths σ of
//! a Gaussian target. It predicts the number of leapfrog steps HMC needs at
//! a fixed acceptance rate, and it is the figure of merit for preconditioners.
//!
//! Modules:
//! - [`spectra`]: spectra, κ and ν, Schatten norms, the random spectrum generator.
//! - [`linalg`]: Jacobi eigensolver, Cholesky, SPD matrices.
//! - [`covariance`]: Gaussian targets in diagonal or dense form.
//! - [`integrator`]: leapfrog and its per-mode closed form.
//! - [`sampler`]: HMC chains, step-size laws, tuning and κ inference.
//! - [`randmat`]: Wishart ensembles, Marčenko–Pastur, burn-in planning.
//! - [`precond`]: linear preconditioners and the low-rank trainer.

pub mod covariance;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod normal;
pub mod precond;
pub mod quadrature;
pub mod randmat;
pub mod rng;
pub mod sampler;
pub mod spectra;

pub use covariance::CovarianceModel;
pub use error::{Error, Result};
pub use integrator::{IntegrationTimeLaw, ModeDynamics, PhasePoint};
pub use linalg::SpdMatrix;
pub use precond::PreconditionerSpec;
pub use sampler::{ChainConfig, ChainResult, StepSizePlan};
pub use spectra::{GeneratorParams, Spectrum};

/// Crate version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
