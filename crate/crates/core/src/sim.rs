//! Scenario construction and synthetic measurement generation.
//!
//! Distances are expressed in wavelengths throughout, so the wavenumber is
//! `k = 2π` and a half-wavelength ULA has `spacing = 0.5`. Sources follow the
//! unit-variance convention `E|s_d[t]|^2 = 1`; the per-channel noise variance
//! `σ²` then fixes the SNR.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use crate::{CMatrix, CVector, Error, RMatrix, Result, C64};

/// Wrap an angle to the principal interval `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut t = (theta + PI).rem_euclid(two_pi) - PI;
    if t >= PI {
        t -= two_pi;
    }
    t
}

/// Source azimuths in radians: strictly ascending, pairwise distinct, each in `[-π, π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaVector(Vec<f64>);

impl DoaVector {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.is_empty() {
            return Err(Error::Empty("DOA vector".into()));
        }
        for &t in &angles {
            if !(-PI..PI).contains(&t) {
                return Err(Error::InvalidParameter(format!(
                    "DOA {t} outside [-pi, pi)"
                )));
            }
        }
        for w in angles.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidParameter(
                    "DOAs must be strictly ascending".into(),
                ));
            }
        }
        Ok(Self(angles))
    }

    pub fn from_degrees(deg: &[f64]) -> Result<Self> {
        Self::new(deg.iter().map(|d| d.to_radians()).collect())
    }

    pub fn angles(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Pressure-array geometry behind an AVS scenario.
#[derive(Debug, Clone)]
pub enum ArrayGeometry {
    /// Uniform linear array; `spacing` in wavelengths (λ/2 is `0.5`).
    Ula { spacing: f64 },
    /// Uniform circular array; `radius` in wavelengths.
    Uca { radius: f64 },
    /// Caller-supplied pressure steering matrix (M×D), bypassing any
    /// parametric model.
    Explicit(CMatrix),
}

/// Array geometry plus the calibration errors and faults that distort it.
///
/// `gains`, `position_offsets` and `faulty` default to the identity
/// perturbation. Faulty sensors receive no external signal: their steering
/// rows are zeroed, which propagates to all three AVS channels through the
/// manifold structure.
#[derive(Debug, Clone)]
pub struct ArrayScenario {
    pub geometry: ArrayGeometry,
    pub sensors: usize,
    pub gains: Vec<f64>,
    /// Per-sensor (x, y) position errors in wavelengths.
    pub position_offsets: Vec<[f64; 2]>,
    /// Zero-based indices of faulty sensors.
    pub faulty: BTreeSet<usize>,
    /// Wavenumber in radians per wavelength-normalized unit; `2π` unless a
    /// different length convention is wanted.
    pub wavenumber: f64,
}

impl ArrayScenario {
    pub fn new(geometry: ArrayGeometry, sensors: usize) -> Result<Self> {
        if sensors < 2 {
            return Err(Error::InvalidScenario(format!(
                "need at least 2 sensors, got {sensors}"
            )));
        }
        if let ArrayGeometry::Explicit(a) = &geometry {
            if a.nrows() != sensors {
                return Err(Error::InvalidScenario(format!(
                    "explicit steering matrix has {} rows for {} sensors",
                    a.nrows(),
                    sensors
                )));
            }
        }
        Ok(Self {
            geometry,
            sensors,
            gains: vec![1.0; sensors],
            position_offsets: vec![[0.0, 0.0]; sensors],
            faulty: BTreeSet::new(),
            wavenumber: 2.0 * PI,
        })
    }

    /// Half-wavelength ULA with `m` sensors and no perturbations.
    pub fn ula(m: usize) -> Result<Self> {
        Self::new(ArrayGeometry::Ula { spacing: 0.5 }, m)
    }

    /// λ/2-radius UCA with `m` equiangular sensors and no perturbations.
    pub fn uca(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::InvalidScenario(format!(
                "UCA needs at least 3 sensors, got {m}"
            )));
        }
        Self::new(ArrayGeometry::Uca { radius: 0.5 }, m)
    }

    pub fn with_gains(mut self, gains: Vec<f64>) -> Result<Self> {
        if gains.len() != self.sensors {
            return Err(Error::InvalidScenario("gain vector length != M".into()));
        }
        if gains.iter().any(|&g| g <= 0.0) {
            return Err(Error::InvalidScenario("gains must be positive".into()));
        }
        self.gains = gains;
        Ok(self)
    }

    pub fn with_position_offsets(mut self, offsets: Vec<[f64; 2]>) -> Result<Self> {
        if offsets.len() != self.sensors {
            return Err(Error::InvalidScenario("offset list length != M".into()));
        }
        self.position_offsets = offsets;
        Ok(self)
    }

    pub fn with_faulty(mut self, faulty: BTreeSet<usize>) -> Result<Self> {
        if faulty.iter().any(|&i| i >= self.sensors) {
            return Err(Error::InvalidScenario("faulty index out of range".into()));
        }
        self.faulty = faulty;
        Ok(self)
    }

    /// Draw gain offsets from `U(0.7, 1.3)` and position errors from
    /// `U(-1, 1)` wavelengths, once, as an uncalibrated-array scenario.
    pub fn with_random_perturbations<R: Rng + ?Sized>(mut self, rng: &mut R) -> Self {
        self.gains = (0..self.sensors)
            .map(|_| rng.random_range(0.7..1.3))
            .collect();
        self.position_offsets = (0..self.sensors)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        self
    }

    /// The pressure steering matrix this scenario induces for the given DOAs:
    /// nominal geometry, then gain/position perturbations, then faults.
    pub fn steering_matrix(&self, doas: &DoaVector) -> Result<CMatrix> {
        let m = self.sensors;
        let d = doas.len();
        let mut a = CMatrix::zeros(m, d);
        match &self.geometry {
            ArrayGeometry::Ula { spacing } => {
                for (j, &theta) in doas.angles().iter().enumerate() {
                    let col = pressure_steering_ula(m, *spacing, theta);
                    a.set_column(j, &col);
                }
            }
            ArrayGeometry::Uca { radius } => {
                for (j, &theta) in doas.angles().iter().enumerate() {
                    let col = pressure_steering_uca(m, *radius, theta)?;
                    a.set_column(j, &col);
                }
            }
            ArrayGeometry::Explicit(mat) => {
                if mat.ncols() != d {
                    return Err(Error::Dimension(format!(
                        "explicit steering matrix has {} columns for {} DOAs",
                        mat.ncols(),
                        d
                    )));
                }
                a = mat.clone();
            }
        }
        let a = apply_perturbations(&a, self, doas);
        Ok(apply_faults(&a, &self.faulty))
    }
}

fn pressure_steering_ula(m: usize, spacing: f64, theta: f64) -> CVector {
    CVector::from_fn(m, |i, _| {
        C64::from_polar(1.0, 2.0 * PI * spacing * i as f64 * theta.cos())
    })
}

fn pressure_steering_uca(m: usize, radius: f64, theta: f64) -> Result<CVector> {
    if m < 3 {
        return Err(Error::InvalidScenario(format!(
            "UCA needs at least 3 sensors, got {m}"
        )));
    }
    Ok(CVector::from_fn(m, |i, _| {
        let sensor_angle = 2.0 * PI * i as f64 / m as f64;
        C64::from_polar(1.0, 2.0 * PI * radius * (theta - sensor_angle).cos())
    }))
}

/// Half-wavelength ULA pressure steering vector: entry `m` (1-based) is
/// `exp(jπ(m-1)cos θ)`.
pub fn ula_pressure_steering(m: usize, theta: f64) -> CVector {
    pressure_steering_ula(m, 0.5, theta)
}

/// λ/2-radius UCA pressure steering vector: entry `m` (1-based) is
/// `exp(jπ cos(θ - 2π(m-1)/M))`.
pub fn uca_pressure_steering(m: usize, theta: f64) -> Result<CVector> {
    pressure_steering_uca(m, 0.5, theta)
}

/// Distort a steering matrix with the scenario's per-sensor gain offsets and
/// position errors: `A_md ← A_md · g_m · exp(jk(cosθ_d Δx_m + sinθ_d Δy_m))`.
pub fn apply_perturbations(a: &CMatrix, scenario: &ArrayScenario, doas: &DoaVector) -> CMatrix {
    let mut out = a.clone();
    let k = scenario.wavenumber;
    for (d, &theta) in doas.angles().iter().enumerate() {
        let (sin_t, cos_t) = theta.sin_cos();
        for m in 0..a.nrows() {
            let [dx, dy] = scenario.position_offsets[m];
            let phase = k * (cos_t * dx + sin_t * dy);
            out[(m, d)] *= C64::from_polar(scenario.gains[m], phase);
        }
    }
    out
}

/// Zero the rows of `a` at the (zero-based) faulty sensor indices.
pub fn apply_faults(a: &CMatrix, faulty: &BTreeSet<usize>) -> CMatrix {
    let mut out = a.clone();
    for &m in faulty {
        for d in 0..out.ncols() {
            out[(m, d)] = C64::new(0.0, 0.0);
        }
    }
    out
}

/// The AVS direction vector `c(θ) = (1, cos θ, sin θ)`.
pub fn c_vector(theta: f64) -> Vector3<f64> {
    Vector3::new(1.0, theta.cos(), theta.sin())
}

/// AVS array manifold: the Khatri-Rao extension `Ā = C(θ) ⋄ A` of a pressure
/// steering matrix, stacked as `[A; A·Diag(cos θ); A·Diag(sin θ)]`.
#[derive(Debug, Clone)]
pub struct AvsManifold {
    /// `3M × D` AVS steering matrix.
    pub bar_a: CMatrix,
    /// `3 × D` direction matrix with columns `c(θ_d)`.
    pub c: RMatrix,
}

/// Build the AVS manifold from a pressure steering matrix and its DOAs.
pub fn avs_manifold(a: &CMatrix, doas: &DoaVector) -> Result<AvsManifold> {
    if a.ncols() != doas.len() {
        return Err(Error::Dimension(format!(
            "steering matrix has {} columns for {} DOAs",
            a.ncols(),
            doas.len()
        )));
    }
    let bar_a = khatri_rao_manifold(a, doas.angles());
    let mut c = RMatrix::zeros(3, doas.len());
    for (j, &theta) in doas.angles().iter().enumerate() {
        c.set_column(j, &c_vector(theta));
    }
    Ok(AvsManifold { bar_a, c })
}

/// The Khatri-Rao stack `[A; A·Diag(cos θ); A·Diag(sin θ)]` for raw angles,
/// without the ordering checks of [`DoaVector`]; callers must supply one
/// angle per steering column.
pub(crate) fn khatri_rao_manifold(a: &CMatrix, theta: &[f64]) -> CMatrix {
    let (m, d) = a.shape();
    debug_assert_eq!(d, theta.len());
    let mut bar_a = CMatrix::zeros(3 * m, d);
    for (j, &th) in theta.iter().enumerate() {
        let (sin_t, cos_t) = th.sin_cos();
        for i in 0..m {
            let base = a[(i, j)];
            bar_a[(i, j)] = base;
            bar_a[(m + i, j)] = base * cos_t;
            bar_a[(2 * m + i, j)] = base * sin_t;
        }
    }
    bar_a
}

/// Rank-one AVS covariance factor `F(θ) = c(θ) c(θ)^T`.
pub fn f_matrix(theta: f64) -> Matrix3<f64> {
    let c = c_vector(theta);
    c * c.transpose()
}

/// Source sample distribution; all kinds honor `E|s|^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Zero-mean circular complex normal.
    CircularComplexNormal,
    /// Uniform QPSK symbols `(±1 ± j)/√2`.
    Qpsk,
    /// Real and imaginary parts i.i.d. two-component Gaussian mixtures with
    /// means `±1/√2` and component variance `1/2`, scaled by `1/√2` so the
    /// complex sample has unit second moment.
    GaussianMixture,
}

/// Noise sample distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Zero-mean circular complex normal.
    CircularComplexNormal,
    /// Independent Laplace real and imaginary parts, scale `σ/2` each, so the
    /// complex entry has variance `σ²`.
    ComplexLaplace,
}

/// Noise distribution plus its per-channel complex variance `E|v|^2 = σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub variance: f64,
}

/// Draw a `D × T` batch of mutually independent unit-variance source samples.
pub fn generate_sources<R: Rng + ?Sized>(
    kind: SourceKind,
    d: usize,
    t: usize,
    rng: &mut R,
) -> CMatrix {
    match kind {
        SourceKind::CircularComplexNormal => {
            let part = Normal::new(0.0, (0.5f64).sqrt()).unwrap();
            CMatrix::from_fn(d, t, |_, _| C64::new(part.sample(rng), part.sample(rng)))
        }
        SourceKind::Qpsk => {
            let half = std::f64::consts::FRAC_1_SQRT_2;
            CMatrix::from_fn(d, t, |_, _| {
                let re = if rng.random::<bool>() { half } else { -half };
                let im = if rng.random::<bool>() { half } else { -half };
                C64::new(re, im)
            })
        }
        SourceKind::GaussianMixture => {
            let half = std::f64::consts::FRAC_1_SQRT_2;
            let comp = Normal::new(0.0, (0.5f64).sqrt()).unwrap();
            let part = |rng: &mut R| {
                let mean = if rng.random::<bool>() { half } else { -half };
                mean + comp.sample(rng)
            };
            CMatrix::from_fn(d, t, |_, _| C64::new(part(rng) * half, part(rng) * half))
        }
    }
}

fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    // Inverse-CDF transform; the clamp keeps ln() finite when the uniform
    // draw lands exactly on 0.
    let u: f64 = rng.random_range(0.0..1.0) - 0.5;
    let t = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -scale * u.signum() * t.ln()
}

/// Draw an `N × T` noise batch with the requested distribution and variance.
pub fn generate_noise<R: Rng + ?Sized>(
    spec: NoiseSpec,
    n: usize,
    t: usize,
    rng: &mut R,
) -> CMatrix {
    match spec.kind {
        NoiseKind::CircularComplexNormal => {
            let part = Normal::new(0.0, (spec.variance / 2.0).sqrt()).unwrap();
            CMatrix::from_fn(n, t, |_, _| C64::new(part.sample(rng), part.sample(rng)))
        }
        NoiseKind::ComplexLaplace => {
            let scale = spec.variance.sqrt() / 2.0;
            CMatrix::from_fn(n, t, |_, _| {
                C64::new(laplace_sample(scale, rng), laplace_sample(scale, rng))
            })
        }
    }
}

/// Measurement synthesis `Y = Ā S + V`.
pub fn synthesize<R: Rng + ?Sized>(
    bar_a: &CMatrix,
    sources: &CMatrix,
    noise: NoiseSpec,
    rng: &mut R,
) -> Result<CMatrix> {
    if bar_a.ncols() != sources.nrows() {
        return Err(Error::Dimension(format!(
            "manifold has {} columns, sources {} rows",
            bar_a.ncols(),
            sources.nrows()
        )));
    }
    let mut y = bar_a * sources;
    if noise.variance > 0.0 {
        y += generate_noise(noise, y.nrows(), y.ncols(), rng);
    }
    Ok(y)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seedable generator used for every stochastic draw in this crate.
pub type TrialRng = ChaCha12Rng;

/// Derive an independent reproducible stream from a master seed and a chain
/// of stream identifiers (sweep-point index, trial index, ...).
pub fn derive_rng(master_seed: u64, ids: &[u64]) -> TrialRng {
    let mut state = splitmix64(master_seed);
    for &id in ids {
        state = splitmix64(state ^ splitmix64(id.wrapping_add(0x243f_6a88_85a3_08d3)));
    }
    TrialRng::seed_from_u64(state)
}
