//! Scoring estimates against ground truth: permutation alignment, circular
//! RMSE with its sampling envelope, and the interference-to-source ratio of
//! the estimated mixing matrix.

use std::f64::consts::PI;
use std::time::Duration;

use crate::{CMatrix, Error, RMatrix, Result};

/// Signed circular error `estimate − truth`, wrapped to `(-π, π]`.
pub fn circ_error(estimate: f64, truth: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut e = (estimate - truth).rem_euclid(two_pi);
    if e > PI {
        e -= two_pi;
    }
    e
}

/// Circular distance `|circ_error|`, in `[0, π]`.
pub fn circ_dist(a: f64, b: f64) -> f64 {
    circ_error(a, b).abs()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm; n ≤ 6 so the full table is small.
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    fn heap(k: usize, idx: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(idx.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, idx, out);
            if k.is_multiple_of(2) {
                idx.swap(i, k - 1);
            } else {
                idx.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut idx, &mut out);
    out
}

/// Resolve the permutation ambiguity: reorder `(θ̂, Â)` by the permutation
/// minimizing the summed squared circular distance to the true azimuths
/// (exhaustive over `D! ≤ 720`). Returns the aligned pair and the
/// permutation applied (`aligned[k] = estimate[perm[k]]`).
pub fn align(
    theta_hat: &[f64],
    theta_true: &[f64],
    a_hat: &CMatrix,
) -> Result<(Vec<f64>, CMatrix, Vec<usize>)> {
    let d = theta_true.len();
    if theta_hat.len() != d || a_hat.ncols() != d {
        return Err(Error::Dimension(format!(
            "estimate has {} azimuths / {} columns for {d} true azimuths",
            theta_hat.len(),
            a_hat.ncols()
        )));
    }
    if d > 6 {
        return Err(Error::InvalidParameter(
            "exhaustive alignment supports at most 6 sources".into(),
        ));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(d) {
        let cost: f64 = (0..d)
            .map(|k| {
                let e = circ_error(theta_hat[perm[k]], theta_true[k]);
                e * e
            })
            .sum();
        if best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
            best = Some((cost, perm));
        }
    }
    let (_, perm) = best.expect("at least one permutation");
    let theta: Vec<f64> = perm.iter().map(|&k| theta_hat[k]).collect();
    let mut a = a_hat.clone();
    for (new_col, &old_col) in perm.iter().enumerate() {
        a.set_column(new_col, &a_hat.column(old_col));
    }
    Ok((theta, a, perm))
}

/// Which stage of the estimation pipeline a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Joint-diagonalization initializer.
    Ejd,
    /// Phase-1 CPD fit.
    Cpd,
    /// Phase-2 KLD/ML refinement.
    Kld,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::Ejd => "ejd",
            EstimatorKind::Cpd => "cpd",
            EstimatorKind::Kld => "kld",
        };
        f.write_str(s)
    }
}

/// One estimator output on one Monte-Carlo trial.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub scenario_id: String,
    pub estimator: EstimatorKind,
    pub sample_size: usize,
    pub snr_db: f64,
    /// Aligned signed azimuth errors, radians in `(-π, π]`; empty when the
    /// trial failed.
    pub errors: Vec<f64>,
    /// Single-trial interference-to-source ratios (off-diagonal), when the
    /// estimated mixing matrix admitted a pseudo-inverse.
    pub isr: Option<RMatrix>,
    pub converged: bool,
    pub elapsed: Duration,
}

/// Per-azimuth RMSE over a record set.
#[derive(Debug, Clone, Copy)]
pub struct RmseStats {
    pub rmse_rad: f64,
    pub rmse_deg: f64,
    /// Standard deviation of the mean squared error (rad² scale): the
    /// sampling envelope of `rmse_rad²`.
    pub std_env: f64,
    /// Converged records the statistic was computed from.
    pub used: usize,
    /// Records excluded as non-converged.
    pub failures: usize,
}

/// Circular RMSE of azimuth `d` over the converged records.
pub fn rmse(records: &[TrialRecord], d: usize) -> Result<RmseStats> {
    if records.is_empty() {
        return Err(Error::Empty("record set".into()));
    }
    let mut sq = Vec::with_capacity(records.len());
    let mut failures = 0;
    for r in records {
        if !r.converged {
            failures += 1;
            continue;
        }
        let e = *r.errors.get(d).ok_or_else(|| {
            Error::IndexOutOfRange(format!("azimuth index {d} for {} errors", r.errors.len()))
        })?;
        sq.push(e * e);
    }
    if sq.is_empty() {
        return Err(Error::Empty("no converged records".into()));
    }
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = if sq.len() > 1 {
        sq.iter().map(|&s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let rmse_rad = mean.sqrt();
    Ok(RmseStats {
        rmse_rad,
        rmse_deg: rmse_rad.to_degrees(),
        std_env: (var / n).sqrt(),
        used: sq.len(),
        failures,
    })
}

/// Interference-to-source ratios of a single trial:
/// `ISR_ij = |Â⁺A|²_ij / |Â⁺A|²_ii` for `i ≠ j` (diagonal left at zero).
/// Invariant to per-column rescaling of `Â`; errors when `Â` is not full
/// column rank.
pub fn isr(a_hat: &CMatrix, a_true: &CMatrix) -> Result<RMatrix> {
    let (m, d) = a_true.shape();
    if a_hat.shape() != (m, d) {
        return Err(Error::Dimension(format!(
            "estimated mixing matrix is {:?}, truth is {:?}",
            a_hat.shape(),
            a_true.shape()
        )));
    }
    let svd = a_hat.clone().svd(true, true);
    let smax = svd.singular_values[0];
    let smin = svd.singular_values[svd.singular_values.len() - 1];
    if smin <= 1e-12 * smax {
        return Err(Error::Numerical(
            "estimated mixing matrix is rank deficient".into(),
        ));
    }
    let pinv = svd
        .pseudo_inverse(1e-13 * smax)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
    let g: CMatrix = &pinv * a_true;
    let mut out = RMatrix::zeros(d, d);
    for i in 0..d {
        let denom = g[(i, i)].norm_sqr();
        if denom == 0.0 {
            return Err(Error::Numerical(format!(
                "zero direct-path gain for source {i}"
            )));
        }
        for j in 0..d {
            if i != j {
                out[(i, j)] = g[(i, j)].norm_sqr() / denom;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{sim, C64};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::RngExt;
    use rand_distr::{Distribution, Normal};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn record(errors: Vec<f64>, converged: bool) -> TrialRecord {
        TrialRecord {
            scenario_id: "test".into(),
            estimator: EstimatorKind::Cpd,
            sample_size: 100,
            snr_db: 10.0,
            errors,
            isr: None,
            converged,
            elapsed: Duration::ZERO,
        }
    }

    #[test]
    fn circ_error_wraps_into_half_open_interval() {
        assert_abs_diff_eq!(circ_error(0.1, -0.1), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(circ_error(-3.1, 3.1), 2.0 * PI - 6.2, epsilon = 1e-12);
        // Antipodal points map to +π, not -π.
        assert_abs_diff_eq!(circ_error(PI / 2.0, -PI / 2.0), PI, epsilon = 1e-15);
    }

    #[test]
    fn circ_dist_symmetry_and_triangle() {
        let mut rng = sim::derive_rng(7, &[]);
        for _ in 0..200 {
            let a = rng.random_range(-PI..PI);
            let b = rng.random_range(-PI..PI);
            let m = rng.random_range(-PI..PI);
            assert_abs_diff_eq!(circ_dist(a, b), circ_dist(b, a), epsilon = 1e-15);
            assert!(circ_dist(a, b) <= circ_dist(a, m) + circ_dist(m, b) + 1e-12);
        }
    }

    #[test]
    fn align_identity_and_swap() {
        let a = CMatrix::from_fn(3, 2, |i, j| c((i + 1) as f64, j as f64));
        let (t, _, perm) = align(&[0.1, 0.5], &[0.1, 0.5], &a).unwrap();
        assert_eq!(perm, vec![0, 1]);
        assert_eq!(t, vec![0.1, 0.5]);

        let (t, a2, perm) = align(&[0.8, -1.0], &[-1.0, 0.8], &a).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert_eq!(t, vec![-1.0, 0.8]);
        assert_eq!(a2.column(0), a.column(1));
    }

    #[test]
    fn align_matches_nearest_neighbor_for_small_perturbations() {
        let truth = [-1.2, 0.3, 2.0];
        let mut rng = sim::derive_rng(8, &[]);
        for _ in 0..50 {
            // Random small perturbations and a random shuffle.
            let noise: Vec<f64> = (0..3).map(|_| rng.random_range(-0.05..0.05)).collect();
            let mut shuffled: Vec<(usize, f64)> = truth
                .iter()
                .zip(&noise)
                .map(|(t, n)| t + n)
                .enumerate()
                .collect();
            // Fisher-Yates on 3 elements.
            for i in (1..3usize).rev() {
                let j = rng.random_range(0..=i);
                shuffled.swap(i, j);
            }
            let theta_hat: Vec<f64> = shuffled.iter().map(|&(_, t)| t).collect();
            let a = CMatrix::identity(3, 3);
            let (aligned, _, _) = align(&theta_hat, &truth, &a).unwrap();
            for (got, want) in aligned.iter().zip(truth) {
                assert!(circ_dist(*got, want) < 0.06);
            }
        }
    }

    #[test]
    fn align_is_idempotent() {
        let a = CMatrix::identity(3, 3);
        let truth = [-0.5, 0.2, 1.4];
        let theta = [1.45, -0.52, 0.18];
        let (t1, a1, _) = align(&theta, &truth, &a).unwrap();
        let (t2, a2, perm) = align(&t1, &truth, &a1).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert_eq!(t1, t2);
        assert_eq!(a1, a2);
    }

    #[test]
    fn rmse_closed_cases() {
        let records = vec![record(vec![0.0], true), record(vec![0.0], true)];
        let s = rmse(&records, 0).unwrap();
        assert_eq!(s.rmse_rad, 0.0);

        let x = 0.3;
        let records = vec![record(vec![x], true), record(vec![-x], true)];
        let s = rmse(&records, 0).unwrap();
        assert_relative_eq!(s.rmse_rad, x, epsilon = 1e-15);
        assert_relative_eq!(s.rmse_deg, x.to_degrees(), epsilon = 1e-12);

        assert!(rmse(&[], 0).is_err());
        assert!(rmse(&[record(vec![], false)], 0).is_err());
    }

    #[test]
    fn rmse_recovers_sampling_std() {
        let mut rng = sim::derive_rng(9, &[]);
        let s_true = 0.05;
        let normal = Normal::new(0.0, s_true).unwrap();
        let records: Vec<TrialRecord> = (0..10_000)
            .map(|_| record(vec![normal.sample(&mut rng)], true))
            .collect();
        let s = rmse(&records, 0).unwrap();
        assert_relative_eq!(s.rmse_rad, s_true, max_relative = 0.02);
        assert_eq!(s.used, 10_000);
        assert_eq!(s.failures, 0);
    }

    #[test]
    fn rmse_is_order_invariant_and_skips_failures() {
        let mut records = vec![
            record(vec![0.1], true),
            record(vec![], false),
            record(vec![-0.2], true),
        ];
        let s1 = rmse(&records, 0).unwrap();
        records.reverse();
        let s2 = rmse(&records, 0).unwrap();
        assert_eq!(s1.rmse_rad, s2.rmse_rad);
        assert_eq!(s1.failures, 1);
        assert_eq!(s1.used, 2);
    }

    #[test]
    fn isr_perfect_and_scale_invariant() {
        let mut rng = sim::derive_rng(10, &[]);
        let a = CMatrix::from_fn(5, 2, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let out = isr(&a, &a).unwrap();
        assert!(out.norm() < 1e-20);

        let mut scaled = a.clone();
        scaled.column_mut(0).scale_mut(3.0);
        scaled.column_mut(1).scale_mut(0.2);
        let out = isr(&scaled, &a).unwrap();
        assert!(out.norm() < 1e-20, "column scaling must not matter");

        let rank_def = CMatrix::from_fn(5, 2, |i, _| c(i as f64, 0.0));
        assert!(isr(&rank_def, &a).is_err());
    }

    #[test]
    fn isr_matches_independent_pseudo_inverse() {
        // Oracle: pinv via the normal equations (A^H A)^{-1} A^H computed
        // with a hand-rolled Gauss-Jordan inverse, fully independent of the
        // SVD route in the implementation.
        let mut rng = sim::derive_rng(11, &[]);
        let a_true = CMatrix::from_fn(5, 2, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let mut a_hat = a_true.clone();
        for v in a_hat.iter_mut() {
            *v += c(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
        }

        let gram: CMatrix = a_hat.adjoint() * &a_hat;
        let gram_inv = gauss_jordan_inverse(&gram);
        let pinv: CMatrix = gram_inv * a_hat.adjoint();
        let g: CMatrix = &pinv * &a_true;
        let mut expect = RMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                if i != j {
                    expect[(i, j)] = g[(i, j)].norm_sqr() / g[(i, i)].norm_sqr();
                }
            }
        }
        let got = isr(&a_hat, &a_true).unwrap();
        assert!(
            (got - expect).norm() < 1e-10,
            "ISR disagrees with the normal-equation oracle"
        );
    }

    fn gauss_jordan_inverse(a: &CMatrix) -> CMatrix {
        let n = a.nrows();
        let mut aug = CMatrix::zeros(n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(a);
        for i in 0..n {
            aug[(i, n + i)] = c(1.0, 0.0);
        }
        for col in 0..n {
            let mut pivot = col;
            for row in col + 1..n {
                if aug[(row, col)].norm() > aug[(pivot, col)].norm() {
                    pivot = row;
                }
            }
            aug.swap_rows(col, pivot);
            let p = aug[(col, col)];
            for j in 0..2 * n {
                aug[(col, j)] /= p;
            }
            for row in 0..n {
                if row != col {
                    let f = aug[(row, col)];
                    for j in 0..2 * n {
                        let sub = aug[(col, j)] * f;
                        aug[(row, j)] -= sub;
                    }
                }
            }
        }
        aug.view((0, n), (n, n)).into_owned()
    }
}
