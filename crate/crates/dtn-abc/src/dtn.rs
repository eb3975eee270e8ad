//! Discrete Dirichlet-to-Neumann kernel `K(s)` on the coupling layer Γ.
//!
//! Two independent routes produce the same kernel:
//!
//! * **Boundary element** ([`dtn_boundary_element`]) — the exterior is
//!   eliminated analytically through the translation-invariant Green's
//!   kernel: `K = −(I − H_ΓΣ G̃_ΣΓ)⁻¹ H_ΓΣ G̃_ΣΣ H_ΣΓ`.  Cost is dominated
//!   by one dense `n_Γ × n_Γ` factorization.
//! * **Dense truncated-exterior oracle** ([`dtn_dense_oracle`]) — the
//!   exterior lattice is truncated after `L` layers with a hard zero wall and
//!   `K = −H_{Γ,II}(H_{II,II} − isI)⁻¹H_{II,Γ}` is evaluated by a banded
//!   factorization.  Slower and truncation-limited, but independent of the
//!   Green's-function machinery; the two routes cross-validate each other.
//!
//! The derivative `K′(s)` comes either from a second resolvent solve on the
//! oracle route or from a central finite difference of boundary-element
//! kernels ([`dtn_derivative`]).

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::band::BandedLu;
use crate::error::{Error, Result};
use crate::greens::{greens3d_up_to, greens_table_1d, GreensTable};
use crate::lattice::{Grid, HamiltonianBlocks, IndexPartition, Stencil};
use crate::linalg::{c, max_eig_imag_part, solve_multi, symmetry_defect, C64, CMat};

/// How a kernel sample was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Green's-function boundary-element elimination.
    BoundaryElement,
    /// Truncated-exterior dense (banded) resolvent solve.
    DenseOracle,
}

/// One evaluated kernel sample `K(s)` (optionally with `K′(s)`).
#[derive(Debug, Clone)]
pub struct DtnSample {
    /// Laplace node.
    pub s: C64,
    /// Dense `n_Γ × n_Γ` kernel.
    pub k: CMat,
    /// Optional derivative kernel.
    pub k_prime: Option<CMat>,
    /// Production route.
    pub provenance: Provenance,
    /// Hash of the grid/stencil/partition the sample belongs to.
    pub meta_hash: [u8; 32],
}

impl DtnSample {
    /// Structural invariants of any kernel sample: complex symmetry (relative
    /// defect) and the largest eigenvalue of `Im K = (K − K*)/2i`, which must
    /// be ≤ 0 up to roundoff for `s > 0`.
    pub fn structure_check(&self) -> Result<(f64, f64)> {
        let defect = symmetry_defect(&self.k);
        let max_im = max_eig_imag_part(&self.k, "DtN kernel Im-part spectrum")?;
        Ok((defect, max_im))
    }
}

/// SHA-256 fingerprint of the lattice geometry a kernel belongs to: grid box,
/// spacing, open sides, and the full stencil.  Kernel caches refuse to load
/// under a different fingerprint.
pub fn grid_stencil_hash(grid: &Grid, part: &IndexPartition, stencil: &Stencil) -> [u8; 32] {
    let mut hasher = Sha256::new();
    let push_f64 = |h: &mut Sha256, x: f64| h.update(x.to_le_bytes());
    hasher.update((grid.dim as u32).to_le_bytes());
    push_f64(&mut hasher, grid.h);
    for d in 0..grid.dim {
        push_f64(&mut hasher, grid.box_lo[d]);
        push_f64(&mut hasher, grid.box_hi[d]);
        hasher.update((grid.n_per_axis[d] as u32).to_le_bytes());
        hasher.update([part.open_sides[d][0] as u8, part.open_sides[d][1] as u8]);
    }
    hasher.update(stencil.id.to_le_bytes());
    hasher.update((stencil.half_width as u32).to_le_bytes());
    for &w in &stencil.coeffs {
        push_f64(&mut hasher, w);
    }
    push_f64(&mut hasher, stencil.kinetic_prefactor);
    hasher.finalize().into()
}

/// Largest Green's-table offset component needed for this partition's
/// `Σ × (Γ ∪ Σ)` pairs.
pub fn required_nmax(part: &IndexPartition) -> i64 {
    let mut nmax = 0i64;
    for d in 0..3 {
        let (mut slo, mut shi) = (i64::MAX, i64::MIN);
        for m in &part.sigma_multi {
            slo = slo.min(m[d]);
            shi = shi.max(m[d]);
        }
        let (mut glo, mut ghi) = (i64::MAX, i64::MIN);
        for m in &part.gamma_multi {
            glo = glo.min(m[d]);
            ghi = ghi.max(m[d]);
        }
        if slo == i64::MAX {
            continue;
        }
        nmax = nmax.max(shi - slo);
        if glo != i64::MAX {
            nmax = nmax.max(shi - glo).max(ghi - slo);
        }
    }
    nmax
}

/// Build the Green's table this partition needs at Laplace node `s`
/// (closed-form route in 1D, Fourier synthesis in 3D).
pub fn build_greens_for(
    grid: &Grid,
    part: &IndexPartition,
    stencil: &Stencil,
    s: C64,
    quad_n: usize,
) -> Result<GreensTable> {
    let nmax = required_nmax(part);
    match grid.dim {
        1 => greens_table_1d(stencil, grid.h, s, nmax),
        3 => greens3d_up_to(stencil, grid.h, s, nmax, quad_n),
        d => Err(Error::Validation(format!("DtN kernels support dim 1 or 3, got {d}"))),
    }
}

/// Fill the dense `n_Σ × n` matrix `G[i][j] = G̃(σ_i − t_j)` for a target
/// multi-index list, in parallel over rows.
fn fill_greens_block(table: &GreensTable, sigma: &[[i64; 3]], targets: &[[i64; 3]]) -> CMat {
    let n = targets.len();
    let mut data = vec![c(0.0, 0.0); sigma.len() * n];
    data.par_chunks_mut(n).zip(sigma.par_iter()).for_each(|(row, si)| {
        for (cell, tj) in row.iter_mut().zip(targets) {
            *cell = table.get([si[0] - tj[0], si[1] - tj[1], si[2] - tj[2]]);
        }
    });
    Array2::from_shape_vec((sigma.len(), n), data).expect("rectangular fill")
}

/// Boundary-element kernel: eliminate the exterior through the Green's table.
///
/// `K(s) = −(I − H_ΓΣ G̃_ΣΓ)⁻¹ H_ΓΣ G̃_ΣΣ H_ΣΓ`.  The `G̃_ΣΣ H_ΣΓ` product
/// is accumulated row-wise without materializing the `n_Σ × n_Σ` block.
pub fn dtn_boundary_element(
    s: C64,
    grid: &Grid,
    part: &IndexPartition,
    blocks: &HamiltonianBlocks,
    greens: &GreensTable,
) -> Result<DtnSample> {
    let mut problems = Vec::new();
    if (greens.s - s).norm() > 1e-12 * s.norm().max(1.0) {
        problems.push(format!("Green's table is at s = {}, kernel requested at s = {s}", greens.s));
    }
    if greens.stencil_id != blocks.stencil.id {
        problems.push(format!(
            "Green's table stencil id {} does not match assembly stencil id {}",
            greens.stencil_id, blocks.stencil.id
        ));
    }
    if greens.dim != grid.dim {
        problems.push(format!("Green's table dim {} vs grid dim {}", greens.dim, grid.dim));
    }
    if greens.nmax < required_nmax(part) {
        problems.push(format!(
            "Green's table covers offsets up to {}, partition needs {}",
            greens.nmax,
            required_nmax(part)
        ));
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems.join("; ")));
    }
    let n_gamma = part.n_gamma;
    let n_sigma = part.n_sigma;
    // G̃_ΣΓ and W = G̃_ΣΣ H_ΣΓ, both n_Σ × n_Γ.
    let g_sg = fill_greens_block(greens, &part.sigma_multi, &part.gamma_multi);
    let hsg = &blocks.h_sg;
    let mut w_data = vec![c(0.0, 0.0); n_sigma * n_gamma];
    w_data
        .par_chunks_mut(n_gamma)
        .enumerate()
        .for_each(|(i, row)| {
            let si = part.sigma_multi[i];
            for k in 0..n_sigma {
                let sk = part.sigma_multi[k];
                let g = greens.get([si[0] - sk[0], si[1] - sk[1], si[2] - sk[2]]);
                for t in hsg.indptr[k]..hsg.indptr[k + 1] {
                    row[hsg.indices[t]] += g * hsg.data[t];
                }
            }
        });
    let w = Array2::from_shape_vec((n_sigma, n_gamma), w_data).expect("rectangular fill");
    // M = I − H_ΓΣ G̃_ΣΓ,  R = H_ΓΣ W.
    let mut m = blocks.h_gs.mul_dense(&g_sg);
    m.mapv_inplace(|z| -z);
    for i in 0..n_gamma {
        m[(i, i)] += c(1.0, 0.0);
    }
    let r = blocks.h_gs.mul_dense(&w);
    let (mut k, cond) = solve_multi(&m, &r, "boundary-element DtN elimination")?;
    if !k.iter().all(|z| z.is_finite()) {
        return Err(Error::Singular {
            context: "boundary-element DtN elimination".to_string(),
            detail: format!("non-finite kernel entries; cond₁(I − H_ΓΣ G̃_ΣΓ) = {cond:.3e}"),
        });
    }
    k.mapv_inplace(|z| -z);
    Ok(DtnSample {
        s,
        k,
        k_prime: None,
        provenance: Provenance::BoundaryElement,
        meta_hash: grid_stencil_hash(grid, part, &blocks.stencil),
    })
}

/// Truncated exterior lattice: lexicographically ordered exterior points of
/// the expanded box, plus the coupling taps into Γ.
struct TruncatedExterior {
    points: Vec<[i64; 3]>,
    /// Taps `(exterior row, Γ column, weight)`.
    into_gamma: Vec<(usize, usize, f64)>,
    /// Off-diagonal exterior-exterior taps `(row, col, weight)`.
    coupling: Vec<(usize, usize, f64)>,
    diag: f64,
    bandwidth: usize,
}

fn truncated_exterior(
    grid: &Grid,
    part: &IndexPartition,
    stencil: &Stencil,
    layers: usize,
) -> Result<TruncatedExterior> {
    let p = stencil.half_width as i64;
    let l = layers as i64;
    if l < p {
        return Err(Error::Validation(format!(
            "truncation needs at least p = {p} layers, got {layers}"
        )));
    }
    let dim = grid.dim;
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for d in 0..dim {
        lo[d] = if part.open_sides[d][0] { -l } else { 0 };
        hi[d] = grid.n_per_axis[d] as i64 - 1 + if part.open_sides[d][1] { l } else { 0 };
    }
    let mut extent = [1i64; 3];
    for d in 0..dim {
        extent[d] = hi[d] - lo[d] + 1;
    }
    let total: i64 = extent[..dim].iter().product();
    let mut points = Vec::new();
    for lin in 0..total {
        let mut rem = lin;
        let mut mi = [0i64; 3];
        for d in (0..dim).rev() {
            mi[d] = lo[d] + rem % extent[d];
            rem /= extent[d];
        }
        if !grid.contains(&mi) {
            points.push(mi);
        }
    }
    let index: HashMap<[i64; 3], usize> =
        points.iter().enumerate().map(|(i, &m)| (m, i)).collect();
    let mut gamma_pos = HashMap::new();
    for (i, &m) in part.gamma_multi.iter().enumerate() {
        gamma_pos.insert(m, i);
    }
    let w = |k: i64| stencil.kinetic_prefactor * stencil.coeff(k) / (grid.h * grid.h);
    let mut into_gamma = Vec::new();
    let mut coupling = Vec::new();
    let mut bandwidth = 0usize;
    for (i, &mi) in points.iter().enumerate() {
        for d in 0..dim {
            for k in -p..=p {
                if k == 0 {
                    continue;
                }
                let mut mj = mi;
                mj[d] += k;
                if grid.contains(&mj) {
                    let g = *gamma_pos.get(&mj).ok_or_else(|| {
                        Error::Runtime(format!(
                            "exterior point {mi:?} couples to non-Γ interior point {mj:?}"
                        ))
                    })?;
                    into_gamma.push((i, g, w(k)));
                } else if let Some(&j) = index.get(&mj) {
                    coupling.push((i, j, w(k)));
                    bandwidth = bandwidth.max(i.abs_diff(j));
                }
                // outside the expanded box: hard zero wall, tap dropped
            }
        }
    }
    Ok(TruncatedExterior {
        points,
        into_gamma,
        coupling,
        diag: dim as f64 * w(0),
        bandwidth,
    })
}

/// Dense truncated-exterior kernel oracle.
///
/// Factors `H_{II,II} − isI` over `layers` exterior layers (hard zero wall
/// beyond) as a banded system and solves the `n_Γ` right-hand sides of
/// `K = −H_{Γ,II}(H_{II,II} − isI)⁻¹H_{II,Γ}`.  With `with_prime`, a second
/// resolvent pass yields `K′ = −i·H_{Γ,II}(H_{II,II} − isI)⁻²H_{II,Γ}`.
pub fn dtn_dense_oracle(
    s: C64,
    grid: &Grid,
    part: &IndexPartition,
    blocks: &HamiltonianBlocks,
    layers: usize,
    with_prime: bool,
    cap_bytes: usize,
) -> Result<DtnSample> {
    let ext = truncated_exterior(grid, part, &blocks.stencil, layers)?;
    let n_ext = ext.points.len();
    let bw = ext.bandwidth;
    let need = (3 * bw + 2) * n_ext * std::mem::size_of::<C64>();
    if need > cap_bytes {
        return Err(Error::Validation(format!(
            "truncated exterior needs ~{need} bytes of band storage \
             ({n_ext} points, bandwidth {bw}), exceeding the cap of {cap_bytes}"
        )));
    }
    let mut entries: HashMap<(usize, usize), C64> = HashMap::with_capacity(ext.coupling.len() + n_ext);
    let diag = c(ext.diag, 0.0) - c(0.0, 1.0) * s;
    for i in 0..n_ext {
        entries.insert((i, i), diag);
    }
    for &(i, j, wij) in &ext.coupling {
        *entries.entry((i, j)).or_insert(c(0.0, 0.0)) += c(wij, 0.0);
    }
    let lu = BandedLu::factor(n_ext, bw, bw, &|i, j| {
        entries.get(&(i, j)).copied().unwrap_or(c(0.0, 0.0))
    })?;
    let n_gamma = part.n_gamma;
    // Right-hand sides H_{II,Γ}, solved column by column.
    let mut x = vec![vec![c(0.0, 0.0); n_ext]; n_gamma];
    for &(i, g, wig) in &ext.into_gamma {
        x[g][i] += c(wig, 0.0);
    }
    x.par_iter_mut().for_each(|col| lu.solve_in_place(col));
    let project = |cols: &[Vec<C64>]| {
        let mut k = CMat::zeros((n_gamma, n_gamma));
        for (j, col) in cols.iter().enumerate() {
            for &(i, g, wig) in &ext.into_gamma {
                k[(g, j)] -= c(wig, 0.0) * col[i];
            }
        }
        k
    };
    let k = project(&x);
    let k_prime = if with_prime {
        x.par_iter_mut().for_each(|col| lu.solve_in_place(col));
        let mut kp = project(&x);
        kp.mapv_inplace(|z| c(0.0, 1.0) * z);
        Some(kp)
    } else {
        None
    };
    Ok(DtnSample {
        s,
        k,
        k_prime,
        provenance: Provenance::DenseOracle,
        meta_hash: grid_stencil_hash(grid, part, &blocks.stencil),
    })
}

/// Route selector for [`dtn_derivative`].
#[derive(Debug, Clone, Copy)]
pub enum DerivativeRoute {
    /// Central difference of boundary-element kernels at `s ± δ`,
    /// `δ = max(1e−4, 1e−6·|s|)`.
    CentralDifference {
        /// Quadrature points per axis for the Green's tables (3D route).
        quad_n: usize,
    },
    /// Two successive truncated-exterior resolvent solves.
    OracleResolventSquared {
        /// Exterior truncation layers.
        layers: usize,
        /// Band-storage memory cap in bytes.
        cap_bytes: usize,
    },
}

/// Evaluate `K′(s)` by the selected route.
pub fn dtn_derivative(
    s: C64,
    grid: &Grid,
    part: &IndexPartition,
    blocks: &HamiltonianBlocks,
    route: DerivativeRoute,
) -> Result<CMat> {
    match route {
        DerivativeRoute::CentralDifference { quad_n } => {
            let delta = (1e-6 * s.norm()).max(1e-4);
            let sp = s + c(delta, 0.0);
            let sm = s - c(delta, 0.0);
            let gp = build_greens_for(grid, part, &blocks.stencil, sp, quad_n)?;
            let gm = build_greens_for(grid, part, &blocks.stencil, sm, quad_n)?;
            let kp = dtn_boundary_element(sp, grid, part, blocks, &gp)?.k;
            let km = dtn_boundary_element(sm, grid, part, blocks, &gm)?.k;
            Ok((kp - km) / c(2.0 * delta, 0.0))
        }
        DerivativeRoute::OracleResolventSquared { layers, cap_bytes } => {
            let sample = dtn_dense_oracle(s, grid, part, blocks, layers, true, cap_bytes)?;
            Ok(sample.k_prime.expect("oracle route requested the derivative"))
        }
    }
}

/// One-call kernel build: Green's table, boundary-element elimination, and an
/// optional central-difference derivative.
pub fn dtn_kernel(
    grid: &Grid,
    part: &IndexPartition,
    blocks: &HamiltonianBlocks,
    s: C64,
    quad_n: usize,
    with_prime: bool,
) -> Result<DtnSample> {
    let table = build_greens_for(grid, part, &blocks.stencil, s, quad_n)?;
    let mut sample = dtn_boundary_element(s, grid, part, blocks, &table)?;
    if with_prime {
        sample.k_prime = Some(dtn_derivative(
            s,
            grid,
            part,
            blocks,
            DerivativeRoute::CentralDifference { quad_n },
        )?);
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{assemble_blocks, build_grid, partition};
    use crate::linalg::norm_fro;

    const CAP: usize = 1 << 31;

    fn setup_1d(n: usize, h: f64, p: usize) -> (Grid, IndexPartition, HamiltonianBlocks) {
        let st = Stencil::classic(p).unwrap();
        let grid = build_grid(1, &[h], &[h * n as f64], h, &st).unwrap();
        assert_eq!(grid.n_interior(), n);
        let part = partition(&grid, &st).unwrap();
        let blocks = assemble_blocks(&grid, &part, &st, vec![0.0; n], 0.0).unwrap();
        (grid, part, blocks)
    }

    fn setup_3d(n: usize, h: f64, p: usize) -> (Grid, IndexPartition, HamiltonianBlocks) {
        let st = Stencil::classic(p).unwrap();
        let side = h * n as f64;
        let grid = build_grid(3, &[h; 3], &[side; 3], h, &st).unwrap();
        assert_eq!(grid.n_interior(), n * n * n);
        let part = partition(&grid, &st).unwrap();
        let blocks =
            assemble_blocks(&grid, &part, &st, vec![0.0; grid.n_interior()], 0.0).unwrap();
        (grid, part, blocks)
    }

    /// Layers needed for a truncation tail `e^{−Re κ · h · L} ≤ 1e−10`.
    fn layers_for(s: f64, h: f64) -> usize {
        let re_kappa = crate::greens::kappa(c(s, 0.0)).re;
        ((10.0 * std::f64::consts::LN_10) / (re_kappa * h)).ceil() as usize + 10
    }

    #[test]
    fn one_point_exterior_matches_closed_form() {
        // p = 1 chain: each side's exterior reduces to a 1-point chain under
        // L = 1 truncation, so K = −w²/(d − is) per Γ point exactly.
        let (grid, part, blocks) = setup_1d(3, 1.0, 1);
        let s = c(2.0, 0.0);
        let sample = dtn_dense_oracle(s, &grid, &part, &blocks, 1, true, CAP).unwrap();
        let w = -0.5; // kp·c₁/h² = (−1/2)·1
        let d = 1.0; // kp·c₀/h² = (−1/2)(−2)
        let expect = -c(w * w, 0.0) / (c(d, 0.0) - c(0.0, 1.0) * s);
        assert_eq!(sample.k.nrows(), 2);
        assert!((sample.k[(0, 0)] - expect).norm() < 1e-14);
        assert!((sample.k[(1, 1)] - expect).norm() < 1e-14);
        assert!(sample.k[(0, 1)].norm() < 1e-14);
        // K′ = −i·w²/(d − is)² on the same chain.
        let expect_p = -c(0.0, 1.0) * c(w * w, 0.0) / ((c(d, 0.0) - c(0.0, 1.0) * s) * (c(d, 0.0) - c(0.0, 1.0) * s));
        let kp = sample.k_prime.unwrap();
        assert!((kp[(0, 0)] - expect_p).norm() < 1e-14);
    }

    #[test]
    fn routes_agree_1d() {
        // Boundary-element vs dense oracle, five-point stencil.
        let (grid, part, blocks) = setup_1d(12, 0.1, 2);
        for s in [1.0, 10.0, 20.0] {
            let sc = c(s, 0.0);
            let table = build_greens_for(&grid, &part, &blocks.stencil, sc, 128).unwrap();
            let bem = dtn_boundary_element(sc, &grid, &part, &blocks, &table).unwrap();
            let oracle =
                dtn_dense_oracle(sc, &grid, &part, &blocks, layers_for(s, 0.1), false, CAP)
                    .unwrap();
            let gap = norm_fro(&(&bem.k - &oracle.k)) / norm_fro(&oracle.k);
            assert!(gap <= 1e-6, "s = {s}: relative Frobenius gap {gap:.3e}");
            assert_eq!(bem.k.nrows(), 4);
            let (defect, max_im) = bem.structure_check().unwrap();
            assert!(defect <= 1e-10, "s = {s}: symmetry defect {defect:.3e}");
            assert!(max_im <= 1e-10, "s = {s}: max Im eigenvalue {max_im:.3e}");
        }
    }

    #[test]
    fn routes_agree_3d_small() {
        // 5³ box, 7-point stencil: oracle truncation at s = 20 decays fast
        // enough for a 1e−4 cross-check of the full 3D pipeline.
        let (grid, part, blocks) = setup_3d(5, 0.5, 1);
        let s = c(20.0, 0.0);
        let table = build_greens_for(&grid, &part, &blocks.stencil, s, 64).unwrap();
        let bem = dtn_boundary_element(s, &grid, &part, &blocks, &table).unwrap();
        assert_eq!(bem.k.nrows(), 5 * 5 * 5 - 3 * 3 * 3);
        let oracle = dtn_dense_oracle(s, &grid, &part, &blocks, 8, false, CAP).unwrap();
        let gap = norm_fro(&(&bem.k - &oracle.k)) / norm_fro(&oracle.k);
        assert!(gap < 1e-4, "3D route gap {gap:.3e}");
        let (defect, max_im) = bem.structure_check().unwrap();
        assert!(defect <= 1e-10);
        assert!(max_im <= 1e-10);
    }

    #[test]
    fn oracle_truncation_converges() {
        let (grid, part, blocks) = setup_1d(10, 0.1, 2);
        let s = c(5.0, 0.0);
        let k = |l: usize| dtn_dense_oracle(s, &grid, &part, &blocks, l, false, CAP).unwrap().k;
        let (k1, k2, k3) = (k(40), k(80), k(160));
        let g1 = norm_fro(&(&k2 - &k1));
        let g2 = norm_fro(&(&k3 - &k2));
        assert!(g2 < g1, "truncation gaps must decrease: {g1:.3e} vs {g2:.3e}");
    }

    #[test]
    fn derivative_routes_agree() {
        let (grid, part, blocks) = setup_1d(10, 0.1, 2);
        let s = c(10.0, 0.0);
        let layers = layers_for(10.0, 0.1);
        let fd = dtn_derivative(
            s,
            &grid,
            &part,
            &blocks,
            DerivativeRoute::CentralDifference { quad_n: 64 },
        )
        .unwrap();
        let oracle = dtn_derivative(
            s,
            &grid,
            &part,
            &blocks,
            DerivativeRoute::OracleResolventSquared { layers, cap_bytes: CAP },
        )
        .unwrap();
        let gap = norm_fro(&(&fd - &oracle)) / norm_fro(&oracle);
        assert!(gap < 1e-6, "derivative route gap {gap:.3e}");
    }

    #[test]
    fn memory_guard_refuses_oversized_exterior() {
        let (grid, part, blocks) = setup_3d(5, 0.5, 1);
        let err =
            dtn_dense_oracle(c(1.0, 0.0), &grid, &part, &blocks, 8, false, 1024).unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("cap"));
    }

    #[test]
    fn hash_tracks_geometry() {
        let (grid, part, blocks) = setup_1d(12, 0.1, 2);
        let (grid2, part2, _) = setup_1d(12, 0.1, 2);
        assert_eq!(
            grid_stencil_hash(&grid, &part, &blocks.stencil),
            grid_stencil_hash(&grid2, &part2, &blocks.stencil)
        );
        let (grid3, part3, _) = setup_1d(13, 0.1, 2);
        assert_ne!(
            grid_stencil_hash(&grid, &part, &blocks.stencil),
            grid_stencil_hash(&grid3, &part3, &blocks.stencil)
        );
    }

    #[test]
    fn greens_table_mismatch_rejected() {
        let (grid, part, blocks) = setup_1d(12, 0.1, 2);
        let table = build_greens_for(&grid, &part, &blocks.stencil, c(2.0, 0.0), 64).unwrap();
        let err = dtn_boundary_element(c(3.0, 0.0), &grid, &part, &blocks, &table).unwrap_err();
        assert!(err.is_validation());
    }
}
