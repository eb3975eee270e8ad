//! Thin dense linear-algebra layer over LAPACK (via `ndarray-linalg`).
//!
//! Everything downstream works with `ndarray` arrays of `Complex<f64>`; this
//! module centralizes solves, eigenvalue problems, and the truncated-SVD
//! least-squares used by the ill-conditioned ABC constructions, so condition
//! logging and error conversion happen in one place.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{Eig, EigValsh, FactorizeInto, Inverse, LUFactorized, Solve, SVD, UPLO};
use num_complex::Complex;

use crate::error::{Error, Result};

/// Double-precision complex scalar used throughout the crate.
pub type C64 = Complex<f64>;
/// Dense complex matrix.
pub type CMat = Array2<C64>;
/// Dense complex vector.
pub type CVec = Array1<C64>;

/// Shorthand constructor.
#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// 1-norm (maximum absolute column sum).
pub fn norm_1(a: &CMat) -> f64 {
    a.axis_iter(Axis(1))
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Frobenius norm.
pub fn norm_fro(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Inverse together with the exact 1-norm condition number `‖A‖₁‖A⁻¹‖₁`.
pub fn inv_with_cond(a: &CMat, context: &str) -> Result<(CMat, f64)> {
    let inv = a.inv().map_err(|e| Error::Singular {
        context: context.to_string(),
        detail: format!("LU inversion failed: {e}"),
    })?;
    let cond = norm_1(a) * norm_1(&inv);
    log::debug!("{context}: n = {}, cond_1 = {cond:.3e}", a.nrows());
    Ok((inv, cond))
}

/// Solve `A X = B` for a matrix right-hand side, returning the solution and
/// the 1-norm condition number of `A`.
pub fn solve_multi(a: &CMat, b: &CMat, context: &str) -> Result<(CMat, f64)> {
    let (inv, cond) = inv_with_cond(a, context)?;
    Ok((inv.dot(b), cond))
}

/// Solve `X A = B` (right division), returning the solution and cond₁(A).
pub fn solve_right(a: &CMat, b: &CMat, context: &str) -> Result<(CMat, f64)> {
    let (inv, cond) = inv_with_cond(a, context)?;
    Ok((b.dot(&inv), cond))
}

/// Reusable dense LU factorization for repeated solves against one matrix.
pub struct DenseLu {
    lu: LUFactorized<ndarray::OwnedRepr<C64>>,
}

impl DenseLu {
    /// Factor `A` once.
    pub fn factor(a: &CMat, context: &str) -> Result<DenseLu> {
        let lu = a.clone().factorize_into().map_err(|e| Error::Singular {
            context: context.to_string(),
            detail: format!("LU factorization failed: {e}"),
        })?;
        Ok(DenseLu { lu })
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut CVec) -> Result<()> {
        self.lu.solve_inplace(b).map_err(|e| Error::Singular {
            context: "dense LU solve".to_string(),
            detail: e.to_string(),
        })?;
        Ok(())
    }
}

/// Result of a truncated-SVD least-squares solve.
pub struct TsvdSolution {
    /// Minimum-norm solution of `A X ≈ B` with singular values below
    /// `rtol·σ_max` discarded.
    pub x: CMat,
    /// Retained rank.
    pub rank: usize,
    /// Ratio σ_max/σ_min over all singular values (conditioning of the full
    /// system, before truncation).
    pub cond: f64,
}

/// Minimum-norm least-squares solve of `A X = B` by SVD truncation.
///
/// Singular values `σ_i ≤ rtol·σ_max` are treated as zero; the returned
/// solution is the minimum-norm solution of the truncated problem.
pub fn tsvd_solve(a: &CMat, b: &CMat, rtol: f64, context: &str) -> Result<TsvdSolution> {
    let (u, s, vt) = a.svd(true, true).map_err(|e| Error::Singular {
        context: context.to_string(),
        detail: format!("SVD failed: {e}"),
    })?;
    let u = u.expect("svd requested u");
    let vt = vt.expect("svd requested vt");
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Err(Error::Singular {
            context: context.to_string(),
            detail: "matrix is identically zero".to_string(),
        });
    }
    let smin = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = smax / smin.max(f64::MIN_POSITIVE);
    let rank = s.iter().filter(|&&sv| sv > rtol * smax).count();
    log::debug!(
        "{context}: size {}x{}, cond_2 = {cond:.3e}, tsvd rank {rank}/{}",
        a.nrows(),
        a.ncols(),
        s.len()
    );
    // X = V Σ⁺ Uᴴ B restricted to the retained subspace.
    let uh_b = u.slice(ndarray::s![.., ..rank]).t().mapv(|z| z.conj()).dot(b);
    let mut scaled = uh_b;
    for (i, mut row) in scaled.axis_iter_mut(Axis(0)).enumerate() {
        let inv_s = C64::new(1.0 / s[i], 0.0);
        row.mapv_inplace(|z| z * inv_s);
    }
    let x = vt.slice(ndarray::s![..rank, ..]).t().mapv(|z| z.conj()).dot(&scaled);
    Ok(TsvdSolution { x, rank, cond })
}

/// Eigenvalues of a general complex matrix.
pub fn eigvals(a: &CMat, context: &str) -> Result<CVec> {
    let (vals, _) = a.eig().map_err(|e| Error::Runtime(format!(
        "{context}: eigendecomposition failed: {e}"
    )))?;
    Ok(vals)
}

/// Eigenvalues of a Hermitian complex matrix (ascending).
pub fn eigvalsh(a: &CMat, context: &str) -> Result<Array1<f64>> {
    a.eigvalsh(UPLO::Lower).map_err(|e| Error::Runtime(format!(
        "{context}: Hermitian eigendecomposition failed: {e}"
    )))
}

/// Largest eigenvalue of the Hermitian part `(A + Aᴴ)/2`.
pub fn max_eig_hermitian_part(a: &CMat, context: &str) -> Result<f64> {
    let herm = (a + &a.t().mapv(|z| z.conj())).mapv(|z| z * 0.5);
    let vals = eigvalsh(&herm, context)?;
    Ok(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Largest eigenvalue of the (Hermitian) imaginary part `(A − Aᴴ)/2i`.
pub fn max_eig_imag_part(a: &CMat, context: &str) -> Result<f64> {
    let im = (a - &a.t().mapv(|z| z.conj())).mapv(|z| z / c(0.0, 2.0));
    let vals = eigvalsh(&im, context)?;
    Ok(vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
}

/// Relative deviation from complex symmetry, `‖A − Aᵀ‖_F / ‖A‖_F`.
pub fn symmetry_defect(a: &CMat) -> f64 {
    let diff = a - &a.t();
    norm_fro(&diff) / norm_fro(a).max(f64::MIN_POSITIVE)
}

/// `exp(−i H t)` for Hermitian `H`, via eigendecomposition.  Used as the
/// propagator oracle in integrator-order tests.
pub fn expm_minus_i_hermitian(h: &CMat, t: f64) -> Result<CMat> {
    let (vals, vecs) = h
        .eig()
        .map_err(|e| Error::Runtime(format!("expm oracle: eig failed: {e}")))?;
    // H Hermitian: eigenvalues are real up to rounding.
    let phases: CVec = vals.iter().map(|l| (c(0.0, -1.0) * l.re * t).exp()).collect();
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.axis_iter_mut(Axis(1)).enumerate() {
        let p = phases[j];
        col.mapv_inplace(|z| z * p);
    }
    // For Hermitian H the eigenvector matrix is unitary: inverse = conjugate transpose.
    Ok(scaled.dot(&vecs.t().mapv(|z| z.conj())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn solve_roundtrip() {
        let a = array![[c(2.0, 1.0), c(0.0, -1.0)], [c(1.0, 0.0), c(3.0, 0.5)]];
        let b = array![[c(1.0, 0.0)], [c(0.0, 1.0)]];
        let (x, cond) = solve_multi(&a, &b, "test").unwrap();
        let r = a.dot(&x) - &b;
        assert!(norm_fro(&r) < 1e-12);
        assert!(cond >= 1.0);
    }

    #[test]
    fn tsvd_recovers_full_rank() {
        let a = array![[c(1.0, 0.0), c(2.0, 0.0)], [c(0.0, 1.0), c(1.0, 1.0)]];
        let b = array![[c(3.0, 0.0)], [c(1.0, 2.0)]];
        let sol = tsvd_solve(&a, &b, 1e-13, "test").unwrap();
        assert_eq!(sol.rank, 2);
        let r = a.dot(&sol.x) - &b;
        assert!(norm_fro(&r) < 1e-10);
    }

    #[test]
    fn hermitian_part_extremes() {
        let a = array![[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(-2.0, 0.0)]];
        assert_abs_diff_eq!(max_eig_hermitian_part(&a, "t").unwrap(), 1.0, epsilon = 1e-12);
        let b = array![[c(0.0, -3.0)]];
        assert_abs_diff_eq!(max_eig_imag_part(&b, "t").unwrap(), -3.0, epsilon = 1e-12);
    }

    #[test]
    fn expm_oracle_is_unitary() {
        let h = array![[c(1.0, 0.0), c(0.3, 0.1)], [c(0.3, -0.1), c(-0.5, 0.0)]];
        let u = expm_minus_i_hermitian(&h, 0.7).unwrap();
        let id = u.dot(&u.t().mapv(|z| z.conj()));
        assert_abs_diff_eq!(id[(0, 0)].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(id[(1, 0)].norm(), 0.0, epsilon = 1e-12);
    }
}
