//! Phase 1 — blind estimation via parametric CPD of the covariance tensor.
//!
//! The denoised covariance tensor is fit in the least-squares sense by the
//! rank-`D` model `Σ_d c(θ_d) ∘ c(θ_d) ∘ a_d ∘ a_d^*`, which is a
//! non-orthogonal approximate joint diagonalization of the six distinct
//! slabs. The solver alternates two exact coordinate minimizations:
//!
//! * **AC (alternating columns)** — each steering column `a_d` is replaced by
//!   the closed-form minimizer (a scaled dominant eigenvector of a weighted
//!   residual) with everything else fixed;
//! * **modified DC (diagonal centers)** — each azimuth `θ_d` is replaced by
//!   the global minimizer of the scalar cost section, found by rooting the
//!   quartic that the Weierstrass substitution `τ = tan(θ/2)` makes of the
//!   stationarity condition.
//!
//! Iteration starts from an exact joint diagonalization (EJD) of two matrices
//! assembled from the slabs, which is itself consistent and costs one
//! eigendecomposition.

use std::f64::consts::PI;

use crate::covariance::CovarianceStats;
use crate::linalg::{
    complex_eigenpairs, cond, hermitian_part, hermitian_residual, real_poly_roots,
};
use crate::sim::{f_matrix, wrap_angle};
use crate::{CMatrix, Error, RVector, Result, C64};

/// The six distinct (i ≤ j) slab index pairs; the weight 2 − δ_ij restores
/// the full nine-term Frobenius sum.
const SLAB_PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn pair_weight(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        2.0
    }
}

/// Iterate state of the alternating CPD fit.
#[derive(Debug, Clone)]
pub struct CpdState {
    /// Current pressure steering estimate, M×D.
    pub a_hat: CMatrix,
    /// Current azimuth estimates in radians (wrapped to `[-π, π)`).
    pub theta_hat: Vec<f64>,
    /// Current value of the least-squares cost.
    pub cost: f64,
    /// Interleaves (one AC sweep plus one DC phase) performed so far.
    pub interleaves: usize,
    /// Cost after the initial point and after every AC/DC phase since.
    pub cost_history: Vec<f64>,
}

impl CpdState {
    pub fn new(theta: Vec<f64>, a_hat: CMatrix, stats: &CovarianceStats) -> Result<Self> {
        let theta: Vec<f64> = theta.into_iter().map(wrap_angle).collect();
        let cost = cls_cost(&theta, &a_hat, stats)?;
        Ok(Self {
            a_hat,
            theta_hat: theta,
            cost,
            interleaves: 0,
            cost_history: vec![cost],
        })
    }

    pub fn num_sources(&self) -> usize {
        self.theta_hat.len()
    }
}

/// Least-squares CPD cost: the weighted Frobenius misfit between the model
/// slabs `A Diag(F_ij(θ)) A^H` and the observed slabs, summed over the six
/// distinct channel pairs.
pub fn cls_cost(theta: &[f64], a: &CMatrix, stats: &CovarianceStats) -> Result<f64> {
    let m = stats.sensors();
    if a.nrows() != m {
        return Err(Error::Dimension(format!(
            "steering estimate has {} rows for {m} sensors",
            a.nrows()
        )));
    }
    if a.ncols() != theta.len() {
        return Err(Error::Dimension(format!(
            "steering estimate has {} columns for {} DOAs",
            a.ncols(),
            theta.len()
        )));
    }
    let f_mats: Vec<_> = theta.iter().map(|&t| f_matrix(t)).collect();
    let a_adj = a.adjoint();
    let mut cost = 0.0;
    let mut scaled = a.clone();
    for (i, j) in SLAB_PAIRS {
        for (d, f) in f_mats.iter().enumerate() {
            let w = C64::new(f[(i, j)], 0.0);
            scaled.column_mut(d).copy_from(&(a.column(d) * w));
        }
        let model = &scaled * &a_adj;
        let diff = model - stats.slab_unchecked(i, j);
        cost += pair_weight(i, j) * diff.norm_squared();
    }
    Ok(cost)
}

/// Coefficients of the cost section derivative
/// `∂C̃/∂θ_d = α cos θ − β sin θ + γ cos 2θ − δ sin 2θ`,
/// closed forms over the current estimates with `θ_d` free.
///
/// The derivation reduces to two groups: cross terms between source `d` and
/// the fixed sources (`·₁` below) and the coupling of source `d` to the
/// observed slabs (`·₂`), combined as `α = α₁ − 2α₂` and likewise for the
/// rest. These coefficients are pinned by a finite-difference test against
/// [`cls_cost`] rather than trusted on faith.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcConstants {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl DcConstants {
    /// Total magnitude used to scale stationarity residual tolerances.
    pub fn scale(&self) -> f64 {
        self.alpha.abs() + self.beta.abs() + self.gamma.abs() + self.delta.abs()
    }

    /// The trigonometric derivative this set of constants represents.
    pub fn derivative(&self, theta: f64) -> f64 {
        self.alpha * theta.cos() - self.beta * theta.sin() + self.gamma * (2.0 * theta).cos()
            - self.delta * (2.0 * theta).sin()
    }
}

/// Closed-form derivative coefficients of the cost w.r.t. `θ_d`.
pub fn dc_constants(
    d: usize,
    theta: &[f64],
    a: &CMatrix,
    stats: &CovarianceStats,
) -> Result<DcConstants> {
    if d >= theta.len() {
        return Err(Error::IndexOutOfRange(format!(
            "source index {d} for {} sources",
            theta.len()
        )));
    }
    if a.ncols() != theta.len() || a.nrows() != stats.sensors() {
        return Err(Error::Dimension("steering/DOA dimensions disagree".into()));
    }
    let a_d = a.column(d);

    let (mut a1, mut b1, mut g1, mut d1) = (0.0, 0.0, 0.0, 0.0);
    for (k, &theta_k) in theta.iter().enumerate() {
        if k == d {
            continue;
        }
        let overlap = a_d.dotc(&a.column(k)).norm_sqr();
        a1 += 4.0 * overlap * theta_k.sin();
        b1 += 4.0 * overlap * theta_k.cos();
        g1 += 2.0 * overlap * (2.0 * theta_k).sin();
        d1 += 2.0 * overlap * (2.0 * theta_k).cos();
    }

    let quad = |i: usize, j: usize| -> f64 {
        let s = stats.slab_unchecked(i, j);
        (a_d.adjoint() * &s * a_d)[(0, 0)].re
    };
    let a2 = 2.0 * quad(0, 2);
    let b2 = 2.0 * quad(0, 1);
    let g2 = 2.0 * quad(1, 2);
    let d2 = quad(1, 1) - quad(2, 2);

    Ok(DcConstants {
        alpha: a1 - 2.0 * a2,
        beta: b1 - 2.0 * b2,
        gamma: g1 - 2.0 * g2,
        delta: d1 - 2.0 * d2,
    })
}

/// Stationary angles of the DC cost section.
///
/// The Weierstrass substitution `τ = tan(θ/2)` turns
/// `α cos θ − β sin θ + γ cos 2θ − δ sin 2θ = 0` into the quartic
/// `(γ−α)τ⁴ + (4δ−2β)τ³ − 6γτ² − (2β+4δ)τ + (α+γ) = 0`;
/// its real roots map back through `θ = 2 atan τ`, and `θ = −π` (the point
/// the substitution cannot reach) is screened as an extra candidate. Every
/// returned angle satisfies the stationarity residual bound
/// `|∂C̃/∂θ| < 1e-8 · (|α|+|β|+|γ|+|δ|)`. All-zero constants mean the
/// section is flat and the list is empty.
pub fn dc_stationary_angles(consts: &DcConstants) -> Vec<f64> {
    let scale = consts.scale();
    if scale == 0.0 {
        return Vec::new();
    }
    let coeffs = [
        consts.gamma - consts.alpha,
        4.0 * consts.delta - 2.0 * consts.beta,
        -6.0 * consts.gamma,
        -(2.0 * consts.beta + 4.0 * consts.delta),
        consts.alpha + consts.gamma,
    ];
    let mut candidates = Vec::with_capacity(5);
    if let Ok(roots) = real_poly_roots(&coeffs) {
        for r in roots {
            if r.im.abs() < 1e-8 * (1.0 + r.re.abs()) {
                candidates.push(2.0 * r.re.atan());
            }
        }
    }
    candidates.push(-PI);
    let tol = 1e-8 * (scale + f64::EPSILON);
    candidates.retain(|&t| consts.derivative(t).abs() < tol);
    candidates
}

fn circular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// One pass of the modified DC phase over all sources, in place.
fn dc_sweep_in_place(
    theta: &mut [f64],
    a: &CMatrix,
    stats: &CovarianceStats,
    sweeps: usize,
) -> Result<f64> {
    let mut cost = cls_cost(theta, a, stats)?;
    for _ in 0..sweeps {
        for d in 0..theta.len() {
            let consts = dc_constants(d, theta, a, stats)?;
            let current = theta[d];
            let tie_window = 1e-12 * cost.abs().max(1.0);
            // Best stationary candidate; equal-cost ties go to the one
            // closest to the current estimate for iterate stability.
            let mut best: Option<(f64, f64)> = None;
            let mut scratch = theta.to_vec();
            for cand in dc_stationary_angles(&consts) {
                scratch[d] = cand;
                let c = cls_cost(&scratch, a, stats)?;
                best = match best {
                    None => Some((cand, c)),
                    Some((bt, bc)) => {
                        if c < bc - tie_window {
                            Some((cand, c))
                        } else if (c - bc).abs() <= tie_window
                            && circular_distance(cand, current) < circular_distance(bt, current)
                        {
                            Some((cand, c.min(bc)))
                        } else {
                            Some((bt, bc))
                        }
                    }
                };
            }
            // The current value always competes, so the cost cannot rise by
            // more than the tie window; a stationary candidate that matches
            // the incumbent's cost is preferred because the root solve has
            // already polished it.
            if let Some((bt, bc)) = best {
                if bc <= cost + tie_window {
                    theta[d] = bt;
                    cost = bc;
                }
            }
        }
        cost = cls_cost(theta, a, stats)?;
    }
    Ok(cost)
}

/// Modified DC phase: each `θ_d` in turn is set to the global minimizer of
/// its cost section (stationary candidates plus the current value), for
/// `n_sweeps` passes. The cost never increases.
pub fn modified_dc_sweep(
    state: &CpdState,
    stats: &CovarianceStats,
    n_sweeps: usize,
) -> Result<CpdState> {
    if n_sweeps == 0 {
        return Err(Error::InvalidParameter("need at least one sweep".into()));
    }
    let mut next = state.clone();
    let cost = dc_sweep_in_place(&mut next.theta_hat, &next.a_hat, stats, n_sweeps)?;
    next.cost = cost;
    next.cost_history.push(cost);
    Ok(next)
}

/// Exact minimizer of the weighted cost w.r.t. steering column `d`, in place.
fn ac_update_in_place(
    theta: &[f64],
    a: &mut CMatrix,
    stats: &CovarianceStats,
    d: usize,
) -> Result<()> {
    if d >= theta.len() {
        return Err(Error::IndexOutOfRange(format!(
            "source index {d} for {} sources",
            theta.len()
        )));
    }
    let m = stats.sensors();
    let f_mats: Vec<_> = theta.iter().map(|&t| f_matrix(t)).collect();

    let mut p = CMatrix::zeros(m, m);
    let mut w_sum = 0.0;
    for (i, j) in SLAB_PAIRS {
        let w = pair_weight(i, j);
        let f_d = f_mats[d][(i, j)];
        w_sum += w * f_d * f_d;
        if f_d == 0.0 {
            continue;
        }
        // Residual target with every other source's contribution removed.
        let mut q = stats.slab_unchecked(i, j);
        for (l, f) in f_mats.iter().enumerate() {
            if l == d || f[(i, j)] == 0.0 {
                continue;
            }
            let al = a.column(l);
            let outer: CMatrix = al * al.adjoint();
            q -= outer * C64::new(f[(i, j)], 0.0);
        }
        p += q * C64::new(w * f_d, 0.0);
    }
    let p = hermitian_part(&p);

    let eig = p.symmetric_eigen();
    let mut top = 0;
    for k in 1..m {
        if eig.eigenvalues[k] > eig.eigenvalues[top] {
            top = k;
        }
    }
    let mu = eig.eigenvalues[top];
    if mu > 0.0 {
        let v = eig.eigenvectors.column(top);
        let scale = C64::new((mu / w_sum).sqrt(), 0.0);
        a.column_mut(d).copy_from(&(v * scale));
    } else {
        // The minimizer collapses to zero, which is an absorbing state for
        // the alternation; reseed from the pressure-slab residual when that
        // residual still carries energy.
        let mut q = stats.slab_unchecked(0, 0);
        for (l, f) in f_mats.iter().enumerate() {
            if l == d {
                continue;
            }
            let al = a.column(l);
            let outer: CMatrix = al * al.adjoint();
            q -= outer * C64::new(f[(0, 0)], 0.0);
        }
        let q = hermitian_part(&q);
        let eig = q.symmetric_eigen();
        let mut top = 0;
        for k in 1..m {
            if eig.eigenvalues[k] > eig.eigenvalues[top] {
                top = k;
            }
        }
        if eig.eigenvalues[top] > 0.0 {
            a.column_mut(d).copy_from(&eig.eigenvectors.column(top));
        } else {
            a.column_mut(d).fill(C64::new(0.0, 0.0));
        }
    }
    Ok(())
}

/// AC phase for a single column: replace `a_d` with the exact minimizer of
/// the weighted cost, all other columns and all DOAs fixed.
pub fn ac_column_update(state: &CpdState, stats: &CovarianceStats, d: usize) -> Result<CpdState> {
    let mut next = state.clone();
    ac_update_in_place(&next.theta_hat.clone(), &mut next.a_hat, stats, d)?;
    next.cost = cls_cost(&next.theta_hat, &next.a_hat, stats)?;
    next.cost_history.push(next.cost);
    Ok(next)
}

/// Pack a Hermitian matrix into the real vector
/// `(diag; √2·Re upper; √2·Im upper)`, which preserves inner products:
/// `svec(Q₁)·svec(Q₂) = Tr(Q₁Q₂)`.
pub fn svec(q: &CMatrix) -> Result<RVector> {
    let m = q.nrows();
    if m != q.ncols() {
        return Err(Error::Dimension("svec input must be square".into()));
    }
    let res = hermitian_residual(q);
    if res > 1e-8 {
        return Err(Error::NotHermitian {
            residual: res,
            tol: 1e-8,
        });
    }
    let sqrt2 = 2.0_f64.sqrt();
    let mut out = RVector::zeros(m * m);
    for i in 0..m {
        out[i] = q[(i, i)].re;
    }
    let mut idx = m;
    for i in 0..m {
        for j in (i + 1)..m {
            out[idx] = sqrt2 * q[(i, j)].re;
            out[idx + m * (m - 1) / 2] = sqrt2 * q[(i, j)].im;
            idx += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`svec`].
pub fn unsvec(v: &RVector) -> Result<CMatrix> {
    let len = v.len();
    let m = (len as f64).sqrt().round() as usize;
    if m * m != len {
        return Err(Error::Dimension(format!(
            "unsvec input length {len} is not a perfect square"
        )));
    }
    let sqrt2 = 2.0_f64.sqrt();
    let mut q = CMatrix::zeros(m, m);
    for i in 0..m {
        q[(i, i)] = C64::new(v[i], 0.0);
    }
    let mut idx = m;
    for i in 0..m {
        for j in (i + 1)..m {
            let re = v[idx] / sqrt2;
            let im = v[idx + m * (m - 1) / 2] / sqrt2;
            q[(i, j)] = C64::new(re, im);
            q[(j, i)] = C64::new(re, -im);
            idx += 1;
        }
    }
    Ok(q)
}

/// Principal-value azimuth from the second and third direction-vector
/// components. Errors on the all-zero pair, where the angle is undefined.
pub fn extract_doa(c2: f64, c3: f64) -> Result<f64> {
    if c2 == 0.0 && c3 == 0.0 {
        return Err(Error::InvalidParameter(
            "direction components are both zero".into(),
        ));
    }
    Ok(c3.atan2(c2))
}

/// Phase-rotate columns so the first row is real non-negative and sort the
/// estimate into ascending azimuth order. Idempotent.
pub fn normalize_estimate(theta: &mut Vec<f64>, a: &mut CMatrix) {
    for d in 0..a.ncols() {
        let z = a[(0, d)];
        let mag = z.norm();
        if mag > 0.0 {
            let rot = z.conj() / C64::new(mag, 0.0);
            for i in 0..a.nrows() {
                a[(i, d)] *= rot;
            }
            a[(0, d)] = C64::new(mag, 0.0);
        }
    }
    for t in theta.iter_mut() {
        *t = wrap_angle(*t);
    }
    let mut order: Vec<usize> = (0..theta.len()).collect();
    order.sort_by(|&x, &y| theta[x].partial_cmp(&theta[y]).unwrap());
    let sorted_theta: Vec<f64> = order.iter().map(|&k| theta[k]).collect();
    let mut sorted_a = a.clone();
    for (new_col, &old_col) in order.iter().enumerate() {
        sorted_a.set_column(new_col, &a.column(old_col));
    }
    *theta = sorted_theta;
    *a = sorted_a;
}

/// Joint-diagonalization initialization.
///
/// Builds the Gram matrix of the svec'd slabs, takes its two dominant
/// eigenvectors back to Hermitian matrices `P₁, P₂`, and reads the steering
/// columns off the eigendecomposition of `P₁P₂⁻¹` (the two matrices share
/// the steering congruence, so its eigenvectors are the steering directions).
/// Initial azimuths come from the diagonal of the back-projected pressure
/// cross-slabs. Returns ascending azimuths with the matching column order.
pub fn ejd_init(stats: &CovarianceStats, d: usize) -> Result<(Vec<f64>, CMatrix)> {
    let m = stats.sensors();
    if d == 0 {
        return Err(Error::InvalidParameter("need at least one source".into()));
    }
    if d >= m {
        return Err(Error::InvalidParameter(format!(
            "EJD needs D < M, got D = {d}, M = {m}"
        )));
    }

    let mut gram = nalgebra::DMatrix::<f64>::zeros(m * m, m * m);
    for (i, j) in SLAB_PAIRS {
        let v = svec(&stats.hermitian_slab(i, j)?)?;
        gram += &v * v.transpose();
    }
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..m * m).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].partial_cmp(&eig.eigenvalues[x]).unwrap());
    let p1 = unsvec(&eig.eigenvectors.column(order[0]).into_owned())?;
    let p2 = unsvec(&eig.eigenvectors.column(order[1]).into_owned())?;

    // Keep the inverted factor well conditioned: swap the pair if needed,
    // and as a last resort add a vanishing ridge.
    let (num, den) = if cond(&p2) <= 1e12 {
        (p1, p2)
    } else if cond(&p1) <= 1e12 {
        (p2, p1)
    } else {
        let ridge = 1e-10 * p2.clone().singular_values()[0];
        let mut reg = p2;
        for i in 0..m {
            reg[(i, i)] += C64::new(ridge, 0.0);
        }
        (p1, reg)
    };
    let den_inv = den
        .try_inverse()
        .ok_or_else(|| Error::Numerical("EJD pencil factor is singular".into()))?;
    let g = num * den_inv;

    let mut pairs = complex_eigenpairs(&g)?;
    pairs.sort_by(|a, b| b.0.norm().partial_cmp(&a.0.norm()).unwrap());
    if pairs.len() < d {
        return Err(Error::Numerical(format!(
            "EJD produced {} usable eigenvectors for {d} sources",
            pairs.len()
        )));
    }
    let mut a_hat = CMatrix::zeros(m, d);
    for (col, (_, v)) in pairs.iter().take(d).enumerate() {
        a_hat.set_column(col, v);
    }

    let mut theta = vec![0.0; d];
    normalize_first_row_phase(&mut a_hat);
    let svd = a_hat.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values[0].max(1.0);
    let pinv = svd
        .pseudo_inverse(eps)
        .map_err(|e| Error::Numerical(format!("EJD pseudo-inverse failed: {e}")))?;
    let d12 = &pinv * stats.hermitian_slab(0, 1)? * &a_hat;
    let d13 = &pinv * stats.hermitian_slab(0, 2)? * &a_hat;
    for k in 0..d {
        theta[k] = extract_doa(d12[(k, k)].re, d13[(k, k)].re)?;
    }

    let mut theta: Vec<f64> = theta.into_iter().map(wrap_angle).collect();
    normalize_estimate(&mut theta, &mut a_hat);
    Ok((theta, a_hat))
}

fn normalize_first_row_phase(a: &mut CMatrix) {
    for col in 0..a.ncols() {
        let z = a[(0, col)];
        let mag = z.norm();
        if mag > 0.0 {
            let rot = z.conj() / C64::new(mag, 0.0);
            for i in 0..a.nrows() {
                a[(i, col)] *= rot;
            }
            a[(0, col)] = C64::new(mag, 0.0);
        }
    }
}

/// Alternation schedule for [`acdc_run`]: one full AC sweep followed by one
/// DC phase of `dc_sweeps` passes counts as a single interleave.
#[derive(Debug, Clone, Copy)]
pub struct AcdcSchedule {
    pub max_interleaves: usize,
    /// Stop when the cost decrease over a full interleave drops below
    /// `rel_tol` times the cost at the start of the interleave.
    pub rel_tol: f64,
    pub dc_sweeps: usize,
}

impl Default for AcdcSchedule {
    fn default() -> Self {
        Self {
            max_interleaves: 500,
            rel_tol: 1e-10,
            dc_sweeps: 1,
        }
    }
}

/// Run the alternating fit to convergence from the supplied initial point
/// (typically [`ejd_init`]). Non-convergence is not an error: a state whose
/// `interleaves` equals the schedule cap did not meet the tolerance.
pub fn acdc_run(
    stats: &CovarianceStats,
    init: (Vec<f64>, CMatrix),
    schedule: AcdcSchedule,
) -> Result<CpdState> {
    let (theta0, a0) = init;
    let mut state = CpdState::new(theta0, a0, stats)?;
    let d = state.num_sources();

    for interleave in 1..=schedule.max_interleaves {
        let cost_at_start = state.cost;
        for col in 0..d {
            ac_update_in_place(&state.theta_hat.clone(), &mut state.a_hat, stats, col)?;
        }
        state.cost = cls_cost(&state.theta_hat, &state.a_hat, stats)?;
        state.cost_history.push(state.cost);

        state.cost = dc_sweep_in_place(
            &mut state.theta_hat,
            &state.a_hat,
            stats,
            schedule.dc_sweeps,
        )?;
        state.cost_history.push(state.cost);
        state.interleaves = interleave;

        if cost_at_start - state.cost <= schedule.rel_tol * cost_at_start {
            break;
        }
    }

    normalize_estimate(&mut state.theta_hat, &mut state.a_hat);
    state.cost = cls_cost(&state.theta_hat, &state.a_hat, stats)?;
    Ok(state)
}
