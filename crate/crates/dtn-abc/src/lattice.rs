//! Grids, index partitions, and Hamiltonian block assembly.
//!
//! The semi-discrete model lives on a uniform grid truncated to a box.  The
//! interior carries the wave function; the exterior is potential-free and is
//! eliminated through the Dirichlet-to-Neumann map.  This module builds the
//! geometry, splits indices into interior / Γ (interior points coupled to the
//! exterior) / Σ (exterior points coupled to the interior), and assembles the
//! sparse Hamiltonian blocks `H_II`, `H_ΓΣ`, `H_ΣΓ`.
//!
//! Index ordering convention: interior vectors store the Γ entries first (in
//! lexicographic scan order), then the remaining interior points in
//! lexicographic order.  The restriction operator `E` is therefore a prefix
//! selector: `E v = v[..n_gamma]`.

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};

/// Finite-difference second-derivative stencil together with the kinetic
/// prefactor it is applied with (`kinetic_prefactor · Σ_k c_k ψ_{j+k} / h²`).
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    /// Half width `p`; the stencil spans offsets `−p..=p`.
    pub half_width: usize,
    /// Weights `c_{−p}..c_{p}` (second-derivative weights before the `1/h²`).
    pub coeffs: Vec<f64>,
    /// Physical prefactor multiplying the discrete Laplacian, e.g. `−1/2` for
    /// the dimensionless Schrödinger kinetic term or `−ħ²/2m / ħc` for the
    /// nuclear dynamics generator.
    pub kinetic_prefactor: f64,
    /// Registry identifier recorded in cache files.
    pub id: u32,
}

/// Central second-derivative weights of order `2p` for `p = 1..=4`.
fn classic_coeffs(p: usize) -> Option<Vec<f64>> {
    match p {
        1 => Some(vec![1.0, -2.0, 1.0]),
        2 => Some(vec![-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0]),
        3 => Some(vec![
            1.0 / 90.0,
            -3.0 / 20.0,
            3.0 / 2.0,
            -49.0 / 18.0,
            3.0 / 2.0,
            -3.0 / 20.0,
            1.0 / 90.0,
        ]),
        4 => Some(vec![
            -1.0 / 560.0,
            8.0 / 315.0,
            -1.0 / 5.0,
            8.0 / 5.0,
            -205.0 / 72.0,
            8.0 / 5.0,
            -1.0 / 5.0,
            8.0 / 315.0,
            -1.0 / 560.0,
        ]),
        _ => None,
    }
}

impl Stencil {
    /// Classic central stencil of half width `p` with the dimensionless
    /// Schrödinger prefactor `−1/2`.  Registry ids `1..=4`.
    pub fn classic(p: usize) -> Result<Stencil> {
        let coeffs = classic_coeffs(p).ok_or_else(|| {
            Error::Validation(format!("no classic stencil of half width {p} (supported: 1..=4)"))
        })?;
        let s = Stencil { half_width: p, coeffs, kinetic_prefactor: -0.5, id: p as u32 };
        s.validate()?;
        Ok(s)
    }

    /// Classic weights with a caller-supplied kinetic prefactor.  Registry ids
    /// `100 + p` are reserved for the nuclear-dynamics prefactor
    /// `−(ħ²/2m)/ħc`; other prefactors get id `200 + p` and are not cached.
    pub fn with_prefactor(p: usize, kinetic_prefactor: f64, id: u32) -> Result<Stencil> {
        let coeffs = classic_coeffs(p).ok_or_else(|| {
            Error::Validation(format!("no classic stencil of half width {p} (supported: 1..=4)"))
        })?;
        let s = Stencil { half_width: p, coeffs, kinetic_prefactor, id };
        s.validate()?;
        Ok(s)
    }

    /// Reconstruct a stencil from its registry id (used when reading caches).
    pub fn from_registry(id: u32) -> Result<Stencil> {
        match id {
            1..=4 => Stencil::classic(id as usize),
            101..=104 => Stencil::with_prefactor(
                (id - 100) as usize,
                -crate::tdhf::H2M / crate::tdhf::HBARC,
                id,
            ),
            _ => Err(Error::Validation(format!("unknown stencil registry id {id}"))),
        }
    }

    /// Check symmetry, zero row sum, and the second-derivative consistency
    /// `Σ c_k k² = 2` (the stencil applied to `x²` yields `2`).
    fn validate(&self) -> Result<()> {
        let p = self.half_width;
        if self.coeffs.len() != 2 * p + 1 {
            return Err(Error::Validation(format!(
                "stencil of half width {p} needs {} coefficients, got {}",
                2 * p + 1,
                self.coeffs.len()
            )));
        }
        let scale = self.coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max);
        for k in 1..=p {
            if (self.coeffs[p + k] - self.coeffs[p - k]).abs() > 1e-12 * scale {
                return Err(Error::Validation(format!(
                    "stencil not symmetric at offset ±{k}"
                )));
            }
        }
        let sum: f64 = self.coeffs.iter().sum();
        if sum.abs() > 1e-12 * scale {
            return Err(Error::Validation(format!("stencil row sum {sum:.3e} ≠ 0")));
        }
        let curv: f64 = (1..=p)
            .map(|k| 2.0 * self.coeffs[p + k] * (k * k) as f64)
            .sum();
        if (curv - 2.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "stencil applied to x² yields {curv:.12} instead of 2"
            )));
        }
        Ok(())
    }

    /// Weight at offset `k ∈ −p..=p`.
    #[inline]
    pub fn coeff(&self, k: i64) -> f64 {
        self.coeffs[(k + self.half_width as i64) as usize]
    }
}

/// Uniform grid over a box; nodes include both box endpoints per axis.
///
/// The Dirichlet wall / exterior region starts one spacing outside the box, so
/// every node is strictly inside the computational domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// Spatial dimension, 1 or 3.
    pub dim: usize,
    /// Lower box corner per axis (length `dim`).
    pub box_lo: Vec<f64>,
    /// Upper box corner per axis.
    pub box_hi: Vec<f64>,
    /// Grid spacing, identical on all axes.
    pub h: f64,
    /// Interior node count per axis.
    pub n_per_axis: Vec<usize>,
}

impl Grid {
    /// Total interior point count.
    pub fn n_interior(&self) -> usize {
        self.n_per_axis.iter().product()
    }

    /// Physical coordinate of a (possibly exterior) multi-index.
    pub fn coord(&self, mi: &[i64; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for d in 0..self.dim {
            x[d] = self.box_lo[d] + self.h * mi[d] as f64;
        }
        x
    }

    /// Lexicographic linear index of an in-range multi-index.
    pub fn lex_index(&self, mi: &[i64; 3]) -> usize {
        let mut idx = 0usize;
        for d in 0..self.dim {
            idx = idx * self.n_per_axis[d] + mi[d] as usize;
        }
        idx
    }

    /// Multi-index of a lexicographic linear index.
    pub fn multi_index(&self, mut lex: usize) -> [i64; 3] {
        let mut mi = [0i64; 3];
        for d in (0..self.dim).rev() {
            mi[d] = (lex % self.n_per_axis[d]) as i64;
            lex /= self.n_per_axis[d];
        }
        mi
    }

    /// True if the multi-index lies inside the interior box.
    #[inline]
    pub fn contains(&self, mi: &[i64; 3]) -> bool {
        (0..self.dim).all(|d| mi[d] >= 0 && (mi[d] as usize) < self.n_per_axis[d])
    }
}

/// Build a grid, validating that the box is commensurate with `h`.
pub fn build_grid(dim: usize, box_lo: &[f64], box_hi: &[f64], h: f64, stencil: &Stencil) -> Result<Grid> {
    let mut problems = Vec::new();
    if dim != 1 && dim != 3 {
        problems.push(format!("dim must be 1 or 3, got {dim}"));
    }
    if h <= 0.0 {
        problems.push(format!("h must be positive, got {h}"));
    }
    if box_lo.len() < dim || box_hi.len() < dim {
        problems.push(format!(
            "box corners need {dim} components, got {} and {}",
            box_lo.len(),
            box_hi.len()
        ));
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("; ")));
    }
    let mut n_per_axis = Vec::with_capacity(dim);
    for d in 0..dim {
        if box_hi[d] <= box_lo[d] {
            problems.push(format!("axis {d}: box_hi ≤ box_lo"));
            continue;
        }
        let steps = (box_hi[d] - box_lo[d]) / h;
        let rounded = steps.round();
        let residual = (steps - rounded).abs() / steps.max(1.0);
        if residual > 1e-9 {
            problems.push(format!(
                "axis {d}: box extent {} is not a multiple of h = {h} (relative residual {residual:.3e})",
                box_hi[d] - box_lo[d]
            ));
            continue;
        }
        let n = rounded as usize + 1;
        if n < 2 * stencil.half_width {
            problems.push(format!(
                "axis {d}: {n} interior points is thinner than the stencil width {}",
                2 * stencil.half_width
            ));
        }
        n_per_axis.push(n);
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("; ")));
    }
    Ok(Grid {
        dim,
        box_lo: box_lo[..dim].to_vec(),
        box_hi: box_hi[..dim].to_vec(),
        h,
        n_per_axis,
    })
}

/// Interior/Γ/Σ index sets and the canonical (Γ-first) interior ordering.
#[derive(Debug, Clone)]
pub struct IndexPartition {
    /// Lexicographic linear ids in canonical order (Γ block first).
    pub interior_ids: Vec<usize>,
    /// Canonical position of each lexicographic id (inverse permutation).
    pub canon_of_lex: Vec<usize>,
    /// Γ multi-indices, in the same order as the canonical Γ prefix.
    pub gamma_multi: Vec<[i64; 3]>,
    /// Σ multi-indices (coordinates outside `[0, n)` on exactly one axis).
    pub sigma_multi: Vec<[i64; 3]>,
    /// Which sides are open (exterior present): `open[d] = [low, high]`.
    pub open_sides: Vec<[bool; 2]>,
    /// Γ count.
    pub n_gamma: usize,
    /// Σ count.
    pub n_sigma: usize,
}

impl IndexPartition {
    /// Restriction `E v`: the Γ prefix of a canonical interior vector.
    pub fn restrict_gamma<'a, T>(&self, v: &'a [T]) -> &'a [T] {
        &v[..self.n_gamma]
    }
}

/// Partition with every side open (exterior on all faces).
pub fn partition(grid: &Grid, stencil: &Stencil) -> Result<IndexPartition> {
    partition_sides(grid, stencil, &vec![[true, true]; grid.dim])
}

/// Partition with per-side control: a closed side is a hard Dirichlet wall
/// with no exterior (contributing no Γ or Σ points).
pub fn partition_sides(
    grid: &Grid,
    stencil: &Stencil,
    open_sides: &[[bool; 2]],
) -> Result<IndexPartition> {
    let p = stencil.half_width as i64;
    if p < 1 {
        return Err(Error::Validation("stencil half width must be ≥ 1".into()));
    }
    if open_sides.len() != grid.dim {
        return Err(Error::Validation(format!(
            "open_sides needs {} entries, got {}",
            grid.dim,
            open_sides.len()
        )));
    }
    for d in 0..grid.dim {
        let n = grid.n_per_axis[d] as i64;
        let open = (open_sides[d][0] as i64 + open_sides[d][1] as i64) * p;
        if open > 0 && n < 2 * p {
            return Err(Error::Validation(format!(
                "axis {d}: interior of {n} points is thinner than 2p = {}; Γ layers would overlap",
                2 * p
            )));
        }
    }
    let n_int = grid.n_interior();
    let is_gamma = |mi: &[i64; 3]| -> bool {
        (0..grid.dim).any(|d| {
            let n = grid.n_per_axis[d] as i64;
            (open_sides[d][0] && mi[d] < p) || (open_sides[d][1] && mi[d] >= n - p)
        })
    };
    let mut gamma_ids = Vec::new();
    let mut rest_ids = Vec::new();
    let mut gamma_multi = Vec::new();
    for lex in 0..n_int {
        let mi = grid.multi_index(lex);
        if is_gamma(&mi) {
            gamma_ids.push(lex);
            gamma_multi.push(mi);
        } else {
            rest_ids.push(lex);
        }
    }
    // Σ: exterior points one axis out of range by ≤ p, other axes in range,
    // on open sides only; lexicographic order over (axis-extended) tuples.
    let mut sigma_multi = Vec::new();
    let mut push_sigma = |mi: [i64; 3]| sigma_multi.push(mi);
    collect_sigma(grid, p, open_sides, &mut push_sigma);
    sigma_multi.sort();
    let n_gamma = gamma_ids.len();
    let mut interior_ids = gamma_ids;
    interior_ids.extend_from_slice(&rest_ids);
    let mut canon_of_lex = vec![0usize; n_int];
    for (canon, &lex) in interior_ids.iter().enumerate() {
        canon_of_lex[lex] = canon;
    }
    let n_sigma = sigma_multi.len();
    Ok(IndexPartition {
        interior_ids,
        canon_of_lex,
        gamma_multi,
        sigma_multi,
        open_sides: open_sides.to_vec(),
        n_gamma,
        n_sigma,
    })
}

fn collect_sigma(grid: &Grid, p: i64, open_sides: &[[bool; 2]], push: &mut dyn FnMut([i64; 3])) {
    for d in 0..grid.dim {
        let n = grid.n_per_axis[d] as i64;
        let others: Vec<usize> = (0..grid.dim).filter(|&dd| dd != d).collect();
        for side in 0..2 {
            if !open_sides[d][side] {
                continue;
            }
            for layer in 1..=p {
                let coord = if side == 0 { -layer } else { n - 1 + layer };
                match others.len() {
                    0 => {
                        let mut mi = [0i64; 3];
                        mi[d] = coord;
                        push(mi);
                    }
                    2 => {
                        for a in 0..grid.n_per_axis[others[0]] as i64 {
                            for b in 0..grid.n_per_axis[others[1]] as i64 {
                                let mut mi = [0i64; 3];
                                mi[d] = coord;
                                mi[others[0]] = a;
                                mi[others[1]] = b;
                                push(mi);
                            }
                        }
                    }
                    _ => unreachable!("dim is 1 or 3"),
                }
            }
        }
    }
}

/// Minimal compressed-sparse-row matrix with real entries.
#[derive(Debug, Clone)]
pub struct CsMat {
    /// Row count.
    pub nrows: usize,
    /// Column count.
    pub ncols: usize,
    /// Row pointers (`len = nrows + 1`).
    pub indptr: Vec<usize>,
    /// Column indices.
    pub indices: Vec<usize>,
    /// Values.
    pub data: Vec<f64>,
}

impl CsMat {
    /// Build from triplets (duplicates summed).
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &mut Vec<(usize, usize, f64)>,
    ) -> CsMat {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut data: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut row = 0usize;
        for &(r, c, v) in triplets.iter() {
            debug_assert!(r < nrows && c < ncols);
            while row < r {
                row += 1;
                indptr[row] = indices.len();
            }
            if indices.len() > indptr[row] && *indices.last().unwrap() == c {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
            }
        }
        while row < nrows {
            row += 1;
            indptr[row] = indices.len();
        }
        CsMat { nrows, ncols, indptr, indices, data }
    }

    /// `y = A x` for complex vectors.
    pub fn apply_c(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for r in 0..self.nrows {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += x[self.indices[k]] * self.data[k];
            }
            y[r] = acc;
        }
    }

    /// `y += scale · A x` for complex vectors.
    pub fn apply_add_scaled(&self, x: &[C64], scale: C64, y: &mut [C64]) {
        for r in 0..self.nrows {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += x[self.indices[k]] * self.data[k];
            }
            y[r] += scale * acc;
        }
    }

    /// `y = A x` for real vectors.
    pub fn apply_f(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += x[self.indices[k]] * self.data[k];
            }
            y[r] = acc;
        }
    }

    /// Dense complex copy.
    pub fn to_dense_c(&self) -> CMat {
        let mut out = CMat::zeros((self.nrows, self.ncols));
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out[(r, self.indices[k])] += C64::new(self.data[k], 0.0);
            }
        }
        out
    }

    /// Entry lookup (zero when absent); linear scan within the row.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let mut v = 0.0;
        for k in self.indptr[r]..self.indptr[r + 1] {
            if self.indices[k] == c {
                v += self.data[k];
            }
        }
        v
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    /// Dense product `A · M` (sparse rows against dense rows of `M`).
    pub fn mul_dense(&self, m: &CMat) -> CMat {
        debug_assert_eq!(self.ncols, m.nrows());
        let mut out = CMat::zeros((self.nrows, m.ncols()));
        for r in 0..self.nrows {
            let mut dst = out.row_mut(r);
            for k in self.indptr[r]..self.indptr[r + 1] {
                dst.scaled_add(C64::new(self.data[k], 0.0), &m.row(self.indices[k]));
            }
        }
        out
    }
}

/// Sparse Hamiltonian blocks of the partitioned semi-discrete model.
///
/// `H_II` is split into its constant kinetic part and a mutable potential
/// diagonal so nonlinear models can update `V` per step without reassembly.
/// The coupling blocks contain kinetic taps only (the exterior is
/// potential-free by assumption).
#[derive(Debug, Clone)]
pub struct HamiltonianBlocks {
    /// Kinetic part of `H_II` in canonical (Γ-first) ordering.
    pub kinetic_ii: CsMat,
    /// Potential diagonal in canonical ordering.
    pub v_diag: Vec<f64>,
    /// `H_ΓΣ` (rows: canonical Γ order, cols: Σ order).
    pub h_gs: CsMat,
    /// `H_ΣΓ = H_ΓΣᵀ`.
    pub h_sg: CsMat,
    /// Stencil the blocks were built with.
    pub stencil: Stencil,
}

impl HamiltonianBlocks {
    /// `y = H_II x` (kinetic + potential diagonal).
    pub fn apply_h_ii(&self, x: &[C64], y: &mut [C64]) {
        self.kinetic_ii.apply_c(x, y);
        for i in 0..x.len() {
            y[i] += x[i] * self.v_diag[i];
        }
    }

    /// Dense complex `H_II` (small problems only: CN factorization, spectra).
    pub fn h_ii_dense(&self) -> CMat {
        let mut m = self.kinetic_ii.to_dense_c();
        for i in 0..self.v_diag.len() {
            m[(i, i)] += C64::new(self.v_diag[i], 0.0);
        }
        m
    }

    /// Dense `H_ΓΣ H_ΣΓ` (the Γ-local product used by the Theorem-2 limit
    /// construction and its Lyapunov certificate).
    pub fn gamma_sigma_product(&self) -> CMat {
        let hgs = self.h_gs.to_dense_c();
        let hsg = self.h_sg.to_dense_c();
        hgs.dot(&hsg)
    }
}

/// Assemble all Hamiltonian blocks.
///
/// `v` is the potential sampled on interior nodes in canonical order;
/// `exterior_v` must be zero (the DtN derivation assumes a potential-free
/// exterior and nonzero values are rejected).
pub fn assemble_blocks(
    grid: &Grid,
    part: &IndexPartition,
    stencil: &Stencil,
    v: Vec<f64>,
    exterior_v: f64,
) -> Result<HamiltonianBlocks> {
    if exterior_v != 0.0 {
        return Err(Error::Validation(format!(
            "nonzero exterior potential ({exterior_v}) violates the DtN derivation's assumption"
        )));
    }
    let n_int = grid.n_interior();
    if v.len() != n_int {
        return Err(Error::Validation(format!(
            "potential has {} entries, interior has {n_int}",
            v.len()
        )));
    }
    let p = stencil.half_width as i64;
    let kp = stencil.kinetic_prefactor;
    let h2 = grid.h * grid.h;
    let diag = grid.dim as f64 * kp * stencil.coeff(0) / h2;
    let mut trip_ii = Vec::new();
    for lex in 0..n_int {
        let mi = grid.multi_index(lex);
        let row = part.canon_of_lex[lex];
        trip_ii.push((row, row, diag));
        for d in 0..grid.dim {
            for k in -p..=p {
                if k == 0 {
                    continue;
                }
                let mut mj = mi;
                mj[d] += k;
                if grid.contains(&mj) {
                    let col = part.canon_of_lex[grid.lex_index(&mj)];
                    trip_ii.push((row, col, kp * stencil.coeff(k) / h2));
                }
            }
        }
    }
    let kinetic_ii = CsMat::from_triplets(n_int, n_int, &mut trip_ii);
    // coupling blocks Γ ↔ Σ
    let mut sigma_pos = std::collections::HashMap::new();
    for (j, mi) in part.sigma_multi.iter().enumerate() {
        sigma_pos.insert(*mi, j);
    }
    let mut trip_gs = Vec::new();
    for (gi, mi) in part.gamma_multi.iter().enumerate() {
        for d in 0..grid.dim {
            for k in -p..=p {
                if k == 0 {
                    continue;
                }
                let mut mj = *mi;
                mj[d] += k;
                if !grid.contains(&mj) {
                    if let Some(&sj) = sigma_pos.get(&mj) {
                        trip_gs.push((gi, sj, kp * stencil.coeff(k) / h2));
                    }
                }
            }
        }
    }
    let mut trip_sg: Vec<(usize, usize, f64)> =
        trip_gs.iter().map(|&(r, c, v)| (c, r, v)).collect();
    let h_gs = CsMat::from_triplets(part.n_gamma, part.n_sigma, &mut trip_gs);
    let h_sg = CsMat::from_triplets(part.n_sigma, part.n_gamma, &mut trip_sg);
    Ok(HamiltonianBlocks { kinetic_ii, v_diag: v, h_gs, h_sg, stencil: stencil.clone() })
}
