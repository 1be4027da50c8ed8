//! Blind direction-of-arrival estimation for acoustic vector-sensor (AVS) arrays.
//!
//! Each AVS measures acoustic pressure plus two orthogonal particle-velocity
//! components, so an `M`-sensor array delivers `3M` channels whose covariance
//! matrix carries a low-rank 4-mode tensor structure. This crate estimates the
//! source azimuths without any knowledge of the array geometry, in two phases:
//!
//! 1. **Covariance-tensor CPD** — fit the denoised covariance tensor with a
//!    parametric canonical polyadic decomposition via an alternating-columns /
//!    modified diagonal-centers scheme ([`cpd`]), initialized from an exact
//!    joint diagonalization of two matrix "slabs".
//! 2. **KLD covariance fitting** — refine all parameters (steering matrix,
//!    azimuths, noise variance) by damped Fisher scoring of the complex-normal
//!    log-likelihood ([`ml`]), which minimizes the Kullback-Leibler divergence
//!    between the empirical and model covariances regardless of the true
//!    source distribution.
//!
//! The [`sim`] module builds synthetic scenarios (array geometries,
//! calibration errors, faulty sensors, several source/noise distributions),
//! [`covariance`] holds the second-order statistics machinery, [`metrics`]
//! scores estimates against ground truth, and [`pipeline`] chains the whole
//! thing end to end.

pub mod covariance;
pub mod cpd;
mod error;
pub mod linalg;
pub mod metrics;
pub mod ml;
pub mod pipeline;
pub mod sim;

pub use error::Error;

/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
/// Dynamically sized complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dynamically sized complex column vector.
pub type CVector = nalgebra::DVector<C64>;
/// Dynamically sized real matrix.
pub type RMatrix = nalgebra::DMatrix<f64>;
/// Dynamically sized real column vector.
pub type RVector = nalgebra::DVector<f64>;

/// Convenience result alias.
pub type Result<T> = std::result::Result<T, Error>;
