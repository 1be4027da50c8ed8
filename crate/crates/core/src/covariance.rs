//! Second-order statistics: empirical covariance, noise-variance estimation,
//! the denoised covariance with its 3×3×M×M tensor (block) view, and the
//! Gaussian-case error covariances of the covariance estimate itself.

use crate::linalg::{hermitian_part, hermitian_residual};
use crate::{CMatrix, Error, Result, C64};

const HERMITIAN_TOL: f64 = 1e-8;

/// Empirical covariance `(1/T) Σ_t y[t] y[t]^H`, Hermitian by construction.
pub fn empirical_covariance(y: &CMatrix) -> Result<CMatrix> {
    let t = y.ncols();
    if t == 0 {
        return Err(Error::Empty("measurement batch".into()));
    }
    let r = (y * y.adjoint()) / C64::new(t as f64, 0.0);
    Ok(hermitian_part(&r))
}

/// Model covariance `Ā Ā^H + σ² I` (unit-power sources).
pub fn model_covariance(bar_a: &CMatrix, sigma_sq: f64) -> CMatrix {
    let n = bar_a.nrows();
    let mut r = bar_a * bar_a.adjoint();
    for i in 0..n {
        r[(i, i)] += C64::new(sigma_sq, 0.0);
    }
    hermitian_part(&r)
}

/// Noise-variance MLE: the mean of the `3M - D` smallest eigenvalues of the
/// empirical covariance.
pub fn estimate_noise_variance(r_y: &CMatrix, d: usize) -> Result<f64> {
    let n = r_y.nrows();
    if n != r_y.ncols() {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    let residual = hermitian_residual(r_y);
    if residual > HERMITIAN_TOL {
        return Err(Error::NotHermitian {
            residual,
            tol: HERMITIAN_TOL,
        });
    }
    if d >= n {
        return Err(Error::InvalidParameter(format!(
            "source count {d} must be below the channel count {n}"
        )));
    }
    let mut eig: Vec<f64> = hermitian_part(r_y)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let noise_dim = n - d;
    Ok(eig[..noise_dim].iter().sum::<f64>() / noise_dim as f64)
}

/// Denoised second-order statistics of an AVS batch.
///
/// `r_x = r_y - σ̂² I` is stored exactly Hermitian, so the block (dorsal slab)
/// view satisfies `slab(i, j) = slab(j, i)^H` identically. Channel blocks are
/// indexed 0 = pressure, 1 = x-velocity, 2 = y-velocity.
#[derive(Debug, Clone)]
pub struct CovarianceStats {
    r_y: CMatrix,
    sigma_sq: f64,
    r_x: CMatrix,
    m: usize,
}

impl CovarianceStats {
    /// Subtract the estimated noise floor from an empirical covariance.
    pub fn denoise(r_y: &CMatrix, sigma_sq: f64) -> Result<Self> {
        let n = r_y.nrows();
        if n != r_y.ncols() || !n.is_multiple_of(3) || n == 0 {
            return Err(Error::Dimension(format!(
                "AVS covariance must be square with 3M rows, got {n}x{}",
                r_y.ncols()
            )));
        }
        let r_y = hermitian_part(r_y);
        let mut r_x = r_y.clone();
        for i in 0..n {
            r_x[(i, i)] -= C64::new(sigma_sq, 0.0);
        }
        Ok(Self {
            r_y,
            sigma_sq,
            r_x,
            m: n / 3,
        })
    }

    /// Exact (population) statistics of the model `R_y = Ā Ā^H + σ² I`.
    pub fn exact(bar_a: &CMatrix, sigma_sq: f64) -> Result<Self> {
        Self::denoise(&model_covariance(bar_a, sigma_sq), sigma_sq)
    }

    /// From a measurement batch: empirical covariance, noise MLE for `d`
    /// sources, then denoising.
    pub fn from_batch(y: &CMatrix, d: usize) -> Result<Self> {
        let r_y = empirical_covariance(y)?;
        let sigma_sq = estimate_noise_variance(&r_y, d)?;
        Self::denoise(&r_y, sigma_sq)
    }

    pub fn sensors(&self) -> usize {
        self.m
    }

    pub fn channels(&self) -> usize {
        3 * self.m
    }

    pub fn noise_variance(&self) -> f64 {
        self.sigma_sq
    }

    pub fn r_y(&self) -> &CMatrix {
        &self.r_y
    }

    pub fn r_x(&self) -> &CMatrix {
        &self.r_x
    }

    /// The (i, j) dorsal slab of the covariance tensor: the M×M cross-covariance
    /// between channel types `i` and `j`. At exact statistics it equals
    /// `Σ_d c_i(θ_d) c_j(θ_d) a_d a_d^H`.
    pub fn slab(&self, i: usize, j: usize) -> Result<CMatrix> {
        if i >= 3 || j >= 3 {
            return Err(Error::IndexOutOfRange(format!(
                "slab index ({i},{j}) outside 0..3"
            )));
        }
        Ok(self.slab_unchecked(i, j))
    }

    pub(crate) fn slab_unchecked(&self, i: usize, j: usize) -> CMatrix {
        self.r_x
            .view((i * self.m, j * self.m), (self.m, self.m))
            .into_owned()
    }

    /// Per-slab Hermitian symmetrization `(slab(i,j) + slab(i,j)^H) / 2`.
    ///
    /// At exact statistics every slab is already Hermitian (it is a real
    /// combination of the rank-one factors `a_d a_d^H`); empirical
    /// off-diagonal slabs are Hermitian only up to sampling error, and the
    /// fitting algorithms consume this symmetrized form.
    pub fn hermitian_slab(&self, i: usize, j: usize) -> Result<CMatrix> {
        let s = self.slab(i, j)?;
        Ok(hermitian_part(&s))
    }
}

/// Gaussian-case covariance and pseudo-covariance of the empirical-covariance
/// errors `ε = R̂_y − R_y`:
///
/// `E[ε_ij ε_kl^*] = R_y[i,k] R_y[j,l]^* / T` and
/// `E[ε_ij ε_kl]   = R_y[i,l] R_y[j,k]^* / T`.
pub fn gaussian_error_cov(
    r_y: &CMatrix,
    t: usize,
    i: usize,
    j: usize,
    k: usize,
    l: usize,
) -> Result<(C64, C64)> {
    if t == 0 {
        return Err(Error::InvalidParameter("sample size T must be > 0".into()));
    }
    let n = r_y.nrows();
    if [i, j, k, l].iter().any(|&idx| idx >= n) {
        return Err(Error::IndexOutOfRange(format!(
            "entry index among ({i},{j},{k},{l}) outside 0..{n}"
        )));
    }
    let tf = t as f64;
    let cov = r_y[(i, k)] * r_y[(j, l)].conj() / tf;
    let pseudo = r_y[(i, l)] * r_y[(j, k)].conj() / tf;
    Ok((cov, pseudo))
}
