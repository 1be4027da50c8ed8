//! Small dense linear-algebra helpers shared across the estimators.
//!
//! Everything here works on dynamically sized `nalgebra` matrices at the
//! modest dimensions of this problem (a few tens of rows), so clarity wins
//! over blocking/performance tricks.

use nalgebra::Matrix3;

use crate::{CMatrix, CVector, Error, Result, C64};

/// Hermitian part `(X + X^H) / 2`.
pub fn hermitian_part(x: &CMatrix) -> CMatrix {
    (x + x.adjoint()) * C64::new(0.5, 0.0)
}

/// Relative deviation of `x` from Hermitian symmetry, `‖X − X^H‖_F / max(‖X‖_F, 1)`.
pub fn hermitian_residual(x: &CMatrix) -> f64 {
    (x - x.adjoint()).norm() / x.norm().max(1.0)
}

/// Kronecker product of a real 3×3 matrix with a complex M×N block,
/// yielding the 3M×3N block matrix with (i,j) block `f[(i,j)] * x`.
pub fn kron3(f: &Matrix3<f64>, x: &CMatrix) -> CMatrix {
    let (m, n) = x.shape();
    let mut out = CMatrix::zeros(3 * m, 3 * n);
    for i in 0..3 {
        for j in 0..3 {
            let w = f[(i, j)];
            if w == 0.0 {
                continue;
            }
            for r in 0..m {
                for c in 0..n {
                    out[(i * m + r, j * n + c)] = x[(r, c)] * w;
                }
            }
        }
    }
    out
}

/// Condition number from singular values, `σ_max / σ_min` (`f64::INFINITY`
/// when the smallest singular value underflows to zero).
pub fn cond(x: &CMatrix) -> f64 {
    let sv = x.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `log det` of a Hermitian positive-definite matrix via Cholesky.
pub fn logdet_hermitian_pd(x: &CMatrix) -> Result<f64> {
    let chol = x
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("Cholesky factorization failed".into()))?;
    let l = chol.l();
    // The complex Cholesky happily takes sqrt of a negative pivot; a valid
    // factor of a Hermitian PD matrix has a strictly positive real diagonal.
    for i in 0..x.nrows() {
        let d = l[(i, i)];
        if d.re <= 0.0 || d.im.abs() > 1e-12 * d.re.abs().max(1.0) || !d.re.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "Cholesky pivot {i} is {d}"
            )));
        }
    }
    Ok(2.0 * (0..x.nrows()).map(|i| l[(i, i)].re.ln()).sum::<f64>())
}

/// Taylor shift of polynomial coefficients: returns the coefficients of
/// `q(x) = p(x + s)`, with `coeffs` highest degree first.
fn shift_poly(coeffs: &[f64], s: f64) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    let n = c.len();
    for k in 0..n.saturating_sub(1) {
        for i in 1..n - k {
            c[i] += s * c[i - 1];
        }
    }
    c
}

fn companion_eigenvalues(monic_tail: &[f64]) -> Option<Vec<C64>> {
    let n = monic_tail.len();
    let mut comp = CMatrix::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for (i, &c) in monic_tail.iter().enumerate() {
        comp[(0, i)] = C64::new(-c, 0.0);
    }
    let schur = comp.try_schur(1e-13, 400 * n)?;
    let t = schur.unpack().1;
    Some((0..n).map(|i| t[(i, i)]).collect())
}

/// All complex roots of a real polynomial (`coeffs` highest degree first),
/// computed as companion-matrix eigenvalues.
///
/// Leading coefficients smaller than `1e-12` times the largest coefficient
/// magnitude are deflated first, so a numerically degenerate quartic falls
/// back to the cubic/quadratic it actually is. The QR iteration behind the
/// Schur form can stall on root sets that are symmetric about the origin;
/// when that happens the polynomial argument is Taylor-shifted to break the
/// symmetry and the roots are shifted back.
pub fn real_poly_roots(coeffs: &[f64]) -> Result<Vec<C64>> {
    let max_mag = coeffs.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    if max_mag == 0.0 {
        return Ok(Vec::new());
    }
    let mut start = 0;
    while start < coeffs.len() && coeffs[start].abs() < 1e-12 * max_mag {
        start += 1;
    }
    let deflated = &coeffs[start..];
    if deflated.len() <= 1 {
        return Ok(Vec::new());
    }
    if deflated.len() == 2 {
        return Ok(vec![C64::new(-deflated[1] / deflated[0], 0.0)]);
    }
    for &s in &[0.0, 0.5, -0.8, 1.3] {
        let shifted = shift_poly(deflated, s);
        let lead = shifted[0];
        let tail: Vec<f64> = shifted[1..].iter().map(|c| c / lead).collect();
        if let Some(roots) = companion_eigenvalues(&tail) {
            return Ok(roots.into_iter().map(|r| r + C64::new(s, 0.0)).collect());
        }
    }
    Err(Error::Numerical(
        "companion-matrix eigenvalue iteration did not converge".into(),
    ))
}

/// All eigenpairs of a general complex square matrix, via the complex Schur
/// form followed by back-substitution on the triangular factor. Eigenvectors
/// are unit norm; pairs are returned in no particular order.
pub fn complex_eigenpairs(g: &CMatrix) -> Result<Vec<(C64, CVector)>> {
    let n = g.nrows();
    if n != g.ncols() {
        return Err(Error::Dimension(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            g.ncols()
        )));
    }
    let schur = g
        .clone()
        .try_schur(1e-13, 400 * n.max(4))
        .ok_or_else(|| Error::Numerical("Schur iteration did not converge".into()))?;
    let (q, t) = schur.unpack();
    let mut pairs = Vec::with_capacity(n);
    for k in 0..n {
        let mu = t[(k, k)];
        let mut y = CVector::zeros(n);
        y[k] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                s += t[(i, j)] * y[j];
            }
            let mut den = t[(i, i)] - mu;
            // Guard repeated eigenvalues: perturb the tiny denominator instead
            // of dividing by zero; the resulting vector still spans the
            // invariant subspace to working precision.
            let floor = 1e-14 * (t[(i, i)].norm() + mu.norm()).max(1.0);
            if den.norm() < floor {
                den = C64::new(floor, 0.0);
            }
            y[i] = -s / den;
        }
        let v = &q * y;
        let norm = v.norm();
        pairs.push((mu, v / C64::new(norm, 0.0)));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kron3_places_blocks() {
        let f = Matrix3::new(1.0, 0.0, 2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.5);
        let x = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(1.0, 1.0),
                C64::new(0.0, 2.0),
                C64::new(3.0, 0.0),
                C64::new(-1.0, -1.0),
            ],
        );
        let k = kron3(&f, &x);
        assert_eq!(k.shape(), (6, 6));
        assert_eq!(k[(0, 0)], C64::new(1.0, 1.0));
        assert_eq!(k[(0, 4)], C64::new(2.0, 2.0));
        assert_eq!(k[(0, 5)], C64::new(0.0, 4.0));
        assert_eq!(k[(4, 0)], C64::new(-1.0, -1.0));
        assert_eq!(k[(5, 5)], C64::new(-0.5, -0.5));
        assert_eq!(k[(2, 2)], C64::new(0.0, 0.0));
    }

    #[test]
    fn quartic_roots_symmetric_spectrum() {
        // 1 - t^4 and t^4 + 1 both have roots in a cross pattern that the
        // unshifted QR iteration may cycle on.
        let roots = real_poly_roots(&[-1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(roots.len(), 4);
        let mut reals: Vec<f64> = roots
            .iter()
            .filter(|r| r.im.abs() < 1e-8)
            .map(|r| r.re)
            .collect();
        reals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(reals[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(reals[1], 1.0, epsilon = 1e-10);

        let roots = real_poly_roots(&[1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        for r in &roots {
            assert_relative_eq!(r.norm(), 1.0, epsilon = 1e-10);
            assert_relative_eq!(r.re.abs(), (0.5f64).sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_leading_coefficient_deflates() {
        // 1e-15 t^4 + t^2 - 1 is numerically the quadratic t^2 - 1.
        let roots = real_poly_roots(&[1e-15, 0.0, 1.0, 0.0, -1.0]).unwrap();
        assert_eq!(roots.len(), 2);
        let mut reals: Vec<f64> = roots.iter().map(|r| r.re).collect();
        reals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(reals[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(reals[1], 1.0, epsilon = 1e-10);
        assert!(real_poly_roots(&[0.0; 5]).unwrap().is_empty());
        // Linear deflation.
        let roots = real_poly_roots(&[0.0, 0.0, 0.0, 2.0, -3.0]).unwrap();
        assert_eq!(roots.len(), 1);
        assert_relative_eq!(roots[0].re, 1.5, epsilon = 1e-12);
    }

    #[test]
    fn eigenpairs_reconstruct() {
        let mut seed = 0x1234_5678_u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n = 6;
        let g = CMatrix::from_fn(n, n, |_, _| C64::new(next(), next()));
        let pairs = complex_eigenpairs(&g).unwrap();
        assert_eq!(pairs.len(), n);
        for (mu, v) in &pairs {
            let res = (&g * v - v * *mu).norm();
            assert!(res < 1e-10, "eigenpair residual {res:.3e}");
        }
    }

    #[test]
    fn logdet_matches_determinant() {
        let a = CMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(4.0, 0.0),
                C64::new(1.0, 1.0),
                C64::new(1.0, -1.0),
                C64::new(3.0, 0.0),
            ],
        );
        let ld = logdet_hermitian_pd(&a).unwrap();
        assert_relative_eq!(ld, (4.0f64 * 3.0 - 2.0).ln(), epsilon = 1e-12);
        let not_pd = CMatrix::from_row_slice(1, 1, &[C64::new(-1.0, 0.0)]);
        assert!(logdet_hermitian_pd(&not_pd).is_err());
    }
}
