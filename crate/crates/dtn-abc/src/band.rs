//! Banded complex LU with partial pivoting, plus a bordered-system solver.
//!
//! The 1D Hamiltonian is banded with bandwidth `p` in lexicographic order;
//! absorbing boundary conditions add a low-dimensional border (Γ rows/columns
//! and auxiliary variables).  Factoring the banded core once and solving the
//! small border through a Schur complement makes the Crank–Nicolson step
//! `O(n·p²)` instead of `O(n²)`.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{inv_with_cond, CMat, CVec, C64};

/// LU factorization of a banded complex matrix with partial pivoting
/// (LAPACK `gbtrf`-style storage: `2·kl + ku + 1` rows by `n` columns).
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// Band storage after factorization: entry `(i, j)` lives at
    /// `ab[(kl + ku + i - j) * n + j]`.
    ab: Vec<C64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// Factor a banded matrix given by an entry oracle `entry(i, j)` valid for
    /// `|i − j| ≤ max(kl, ku)`.
    pub fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        entry: &dyn Fn(usize, usize) -> C64,
    ) -> Result<BandedLu> {
        let rows = 2 * kl + ku + 1;
        let mut ab = vec![C64::new(0.0, 0.0); rows * n];
        let z = kl + ku;
        for j in 0..n {
            let lo = j.saturating_sub(ku);
            let hi = (j + kl).min(n - 1);
            for i in lo..=hi {
                ab[(z + i - j) * n + j] = entry(i, j);
            }
        }
        let mut ipiv = vec![0usize; n];
        for j in 0..n {
            // pivot among rows j..=j+kl
            let tmax = kl.min(n - 1 - j);
            let mut best = 0usize;
            let mut best_mag = ab[z * n + j].norm();
            for t in 1..=tmax {
                let mag = ab[(z + t) * n + j].norm();
                if mag > best_mag {
                    best_mag = mag;
                    best = t;
                }
            }
            if best_mag == 0.0 {
                return Err(Error::Singular {
                    context: "banded LU".to_string(),
                    detail: format!("exact zero pivot at column {j}"),
                });
            }
            ipiv[j] = j + best;
            if best != 0 {
                // swap rows j and j+best over columns j..=j+kl+ku
                let jhi = (j + kl + ku).min(n - 1);
                for jj in j..=jhi {
                    let a = (z + j - jj) * n + jj;
                    let b = (z + j + best - jj) * n + jj;
                    ab.swap(a, b);
                }
            }
            let piv = ab[z * n + j];
            for t in 1..=tmax {
                let l = ab[(z + t) * n + j] / piv;
                ab[(z + t) * n + j] = l;
                let jhi = (j + kl + ku).min(n - 1);
                for jj in (j + 1)..=jhi {
                    let u = ab[(z + j - jj) * n + jj];
                    ab[(z + j + t - jj) * n + jj] -= l * u;
                }
            }
        }
        Ok(BandedLu { n, kl, ku, ab, ipiv })
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [C64]) {
        debug_assert_eq!(b.len(), self.n);
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let z = kl + ku;
        for j in 0..n {
            if self.ipiv[j] != j {
                b.swap(j, self.ipiv[j]);
            }
            let bj = b[j];
            let tmax = kl.min(n - 1 - j);
            for t in 1..=tmax {
                let l = self.ab[(z + t) * n + j];
                b[j + t] -= l * bj;
            }
        }
        for j in (0..n).rev() {
            let x = b[j] / self.ab[z * n + j];
            b[j] = x;
            let tmax = (kl + ku).min(j);
            for t in 1..=tmax {
                let u = self.ab[(z - t) * n + j];
                b[j - t] -= u * x;
            }
        }
    }
}

/// Bordered system `[[P, U], [W, S]]` with banded `P` and a small dense
/// border; solves by Schur complement on the border block.
pub struct BandedBordered {
    p_lu: BandedLu,
    /// `P⁻¹ U`, dense `n × q`.
    y: CMat,
    /// Border rows `W` (dense `q × n`).
    w: CMat,
    /// LU-inverted Schur complement `(S − W P⁻¹ U)⁻¹`.
    cap_inv: CMat,
    n: usize,
    q: usize,
}

impl BandedBordered {
    /// Factor from the banded core and dense border blocks.
    pub fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        p_entry: &dyn Fn(usize, usize) -> C64,
        u: &CMat,
        w: &CMat,
        s: &CMat,
    ) -> Result<BandedBordered> {
        let q = s.nrows();
        debug_assert_eq!(u.nrows(), n);
        debug_assert_eq!(u.ncols(), q);
        debug_assert_eq!(w.nrows(), q);
        debug_assert_eq!(w.ncols(), n);
        let p_lu = BandedLu::factor(n, kl, ku, p_entry)?;
        let mut y = Array2::zeros((n, q));
        for c in 0..q {
            let mut col: Vec<C64> = u.column(c).to_vec();
            p_lu.solve_in_place(&mut col);
            for r in 0..n {
                y[(r, c)] = col[r];
            }
        }
        let cap = s - &w.dot(&y);
        let (cap_inv, cond) = inv_with_cond(&cap, "bordered Schur complement")?;
        log::debug!("bordered solver: n = {n}, border = {q}, Schur cond = {cond:.3e}");
        Ok(BandedBordered { p_lu, y, w: w.clone(), cap_inv, n, q })
    }

    /// Solve `[[P, U], [W, S]] [x1; x2] = [r1; r2]`; `r` holds `r1` then `r2`.
    pub fn solve_in_place(&self, r: &mut [C64]) {
        debug_assert_eq!(r.len(), self.n + self.q);
        let (r1, r2) = r.split_at_mut(self.n);
        self.p_lu.solve_in_place(r1);
        // x2 = Cap⁻¹ (r2 − W y1)
        let y1 = ndarray::ArrayView1::from(&r1[..]);
        let wy = self.w.dot(&y1);
        let mut rhs2: CVec = Array1::zeros(self.q);
        for i in 0..self.q {
            rhs2[i] = r2[i] - wy[i];
        }
        let x2 = self.cap_inv.dot(&rhs2);
        // x1 = y1 − Y x2
        let corr = self.y.dot(&x2);
        for i in 0..self.n {
            r1[i] -= corr[i];
        }
        for i in 0..self.q {
            r2[i] = x2[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, norm_fro, solve_multi};
    use ndarray::Array2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_banded(n: usize, kl: usize, ku: usize, rng: &mut StdRng) -> Array2<C64> {
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if j + kl >= i && i + ku >= j {
                    a[(i, j)] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
                }
            }
            a[(i, i)] += c(2.0, 0.0); // keep comfortably nonsingular
        }
        a
    }

    #[test]
    fn banded_lu_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(7);
        for &(n, kl, ku) in &[(12usize, 2usize, 2usize), (40, 3, 1), (25, 1, 4)] {
            let a = random_banded(n, kl, ku, &mut rng);
            let lu = BandedLu::factor(n, kl, ku, &|i, j| a[(i, j)]).unwrap();
            let b: Vec<C64> = (0..n).map(|i| c(i as f64, -(i as f64) * 0.3)).collect();
            let mut x = b.clone();
            lu.solve_in_place(&mut x);
            let bm = Array2::from_shape_vec((n, 1), b).unwrap();
            let (want, _) = solve_multi(&a, &bm, "test").unwrap();
            let got = Array2::from_shape_vec((n, 1), x).unwrap();
            assert!(norm_fro(&(&got - &want)) < 1e-10 * norm_fro(&want).max(1.0));
        }
    }

    #[test]
    fn bordered_matches_dense_solve() {
        let mut rng = StdRng::seed_from_u64(11);
        let (n, q, kl, ku) = (30usize, 5usize, 2usize, 2usize);
        let p = random_banded(n, kl, ku, &mut rng);
        let mut u = Array2::zeros((n, q));
        let mut w = Array2::zeros((q, n));
        let mut s = Array2::zeros((q, q));
        for i in 0..n {
            for j in 0..q {
                if rng.gen::<f64>() < 0.3 {
                    u[(i, j)] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>());
                }
                if rng.gen::<f64>() < 0.3 {
                    w[(j, i)] = c(rng.gen::<f64>(), rng.gen::<f64>() - 0.5);
                }
            }
        }
        for i in 0..q {
            for j in 0..q {
                s[(i, j)] = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            }
            s[(i, i)] += c(3.0, 0.0);
        }
        // assemble the full dense system
        let m = q + n;
        let mut full = Array2::zeros((m, m));
        for i in 0..n {
            for j in 0..n {
                full[(i, j)] = p[(i, j)];
            }
            for j in 0..q {
                full[(i, n + j)] = u[(i, j)];
            }
        }
        for i in 0..q {
            for j in 0..n {
                full[(n + i, j)] = w[(i, j)];
            }
            for j in 0..q {
                full[(n + i, n + j)] = s[(i, j)];
            }
        }
        let solver = BandedBordered::factor(n, kl, ku, &|i, j| p[(i, j)], &u, &w, &s).unwrap();
        let b: Vec<C64> = (0..m).map(|i| c((i as f64).cos(), (i as f64).sin())).collect();
        let mut x = b.clone();
        solver.solve_in_place(&mut x);
        let bm = Array2::from_shape_vec((m, 1), b).unwrap();
        let (want, _) = solve_multi(&full, &bm, "test").unwrap();
        let got = Array2::from_shape_vec((m, 1), x).unwrap();
        assert!(norm_fro(&(&got - &want)) < 1e-9 * norm_fro(&want).max(1.0));
    }
}
