//! Time integration of the reduced interior dynamics with absorbing
//! boundary conditions.
//!
//! The eliminated exterior appears as a rational boundary kernel realized by
//! auxiliary ODEs on Γ; interior wavefunction and auxiliary variables are
//! advanced together as one linear system (no operator splitting):
//!
//! * order 0 — `φ̇ = −i(H_II + EᵀME)φ`;
//! * order 1 — `φ̇ = −i(H_IIφ + Eᵀf)`, `ḟ = A·Eφ + B·f`;
//! * order 2 — additionally `g = ḟ`, with
//!   `ġ = B1·g + B0·f + A1·(Eφ̇) + A0·Eφ` and `Eφ̇` substituted by the φ
//!   equation so the generator stays explicit.
//!
//! Integrators: Crank–Nicolson (a banded solve plus a small bordered Schur
//! complement in 1D, dense factorization for small systems) and the
//! four-term Taylor expansion of the exponential.  The module also provides
//! the closed-form free-packet reference solutions and the complex
//! absorbing potential (CAP) baseline.

use std::collections::BTreeSet;

use ndarray::ArrayView1;

use crate::abc::{AbcCoefficients, RationalAbc};
use crate::band::{BandedBordered, BandedLu};
use crate::error::{Error, Result};
use crate::lattice::{Grid, HamiltonianBlocks, IndexPartition};
use crate::linalg::{c, inv_with_cond, C64, CMat, CVec, DenseLu};

/// Interior state plus boundary auxiliary variables at one time.
#[derive(Debug, Clone)]
pub struct SimState {
    /// Current time.
    pub t: f64,
    data: CVec,
    n_int: usize,
    n_gamma: usize,
    order: usize,
}

impl SimState {
    /// Initial state with zero auxiliary variables (valid for initial packets
    /// that vanish on Γ and outside the box).
    pub fn new(phi0: &CVec, n_gamma: usize, order: usize) -> SimState {
        let n_int = phi0.len();
        let mut data = CVec::zeros(n_int + order * n_gamma);
        data.slice_mut(ndarray::s![..n_int]).assign(phi0);
        SimState { t: 0.0, data, n_int, n_gamma, order }
    }

    /// Interior wavefunction (canonical ordering).
    pub fn phi(&self) -> ArrayView1<'_, C64> {
        self.data.slice(ndarray::s![..self.n_int])
    }

    /// Auxiliary variable `f_Γ` (orders ≥ 1).
    pub fn f_gamma(&self) -> ArrayView1<'_, C64> {
        self.data.slice(ndarray::s![self.n_int..self.n_int + self.order.min(1) * self.n_gamma])
    }

    /// Auxiliary variable `g_Γ = ḟ_Γ` (order 2).
    pub fn g_gamma(&self) -> ArrayView1<'_, C64> {
        let lo = self.n_int + if self.order == 2 { self.n_gamma } else { 0 };
        self.data.slice(ndarray::s![lo..])
    }

    /// Full flattened state.
    pub fn data(&self) -> &CVec {
        &self.data
    }

    /// Interior particle number `h^d·Σ|φ|²`.
    pub fn number(&self, grid: &Grid) -> f64 {
        let w = grid.h.powi(grid.dim as i32);
        w * self.phi().iter().map(|z| z.norm_sqr()).sum::<f64>()
    }
}

/// The augmented linear generator `ẋ = L x` over `(φ, f_Γ, g_Γ)`.
pub struct AugmentedGenerator<'a> {
    /// Grid geometry (for norms, snapshots and the banded solver).
    pub grid: &'a Grid,
    /// Interior/boundary partition.
    pub part: &'a IndexPartition,
    /// Hamiltonian blocks in canonical ordering.
    pub blocks: &'a HamiltonianBlocks,
    abc: Option<&'a RationalAbc>,
    cap: Option<Vec<f64>>,
}

/// Couple the interior blocks with a rational boundary condition (or none,
/// giving the plain Dirichlet generator).
pub fn assemble_augmented_generator<'a>(
    grid: &'a Grid,
    part: &'a IndexPartition,
    blocks: &'a HamiltonianBlocks,
    abc: Option<&'a RationalAbc>,
) -> Result<AugmentedGenerator<'a>> {
    if let Some(abc) = abc {
        if abc.n_gamma() != part.n_gamma {
            return Err(Error::Validation(format!(
                "boundary condition is sized for n_Γ = {}, partition has {}",
                abc.n_gamma(),
                part.n_gamma
            )));
        }
    }
    if blocks.v_diag.len() != grid.n_interior() {
        return Err(Error::Validation(
            "Hamiltonian blocks do not match the grid interior".to_string(),
        ));
    }
    Ok(AugmentedGenerator { grid, part, blocks, abc, cap: None })
}

/// Dirichlet generator on an extended domain with a complex absorbing
/// potential: quadratic ramps `η(x − edge)²` rising from the interior edges
/// `inner = (lo, hi)` to the walls.
pub fn cap_baseline<'a>(
    grid: &'a Grid,
    part: &'a IndexPartition,
    blocks: &'a HamiltonianBlocks,
    eta: f64,
    inner: (f64, f64),
) -> Result<AugmentedGenerator<'a>> {
    let mut gen = assemble_augmented_generator(grid, part, blocks, None)?;
    gen.cap = Some(cap_weights(grid, part, eta, inner)?);
    Ok(gen)
}

/// CAP weights `ηW(x)` in canonical ordering (1D).
pub fn cap_weights(
    grid: &Grid,
    part: &IndexPartition,
    eta: f64,
    inner: (f64, f64),
) -> Result<Vec<f64>> {
    if grid.dim != 1 {
        return Err(Error::Validation("the CAP baseline is one-dimensional".to_string()));
    }
    if eta <= 0.0 {
        return Err(Error::Validation(format!("CAP strength must be positive, got {eta}")));
    }
    let (lo, hi) = inner;
    if lo >= hi {
        return Err(Error::Validation(format!(
            "CAP interior window is empty: ({lo}, {hi})"
        )));
    }
    let n = grid.n_interior();
    let mut w = vec![0.0; n];
    for lex in 0..n {
        let x = grid.coord(&grid.multi_index(lex))[0];
        let ramp = if x < lo {
            (x - lo) * (x - lo)
        } else if x > hi {
            (x - hi) * (x - hi)
        } else {
            0.0
        };
        w[part.canon_of_lex[lex]] = eta * ramp;
    }
    Ok(w)
}

/// Maximum absolute row sum.
fn norm_inf(m: &CMat) -> f64 {
    (0..m.nrows())
        .map(|r| m.row(r).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl<'a> AugmentedGenerator<'a> {
    /// Interior dimension.
    pub fn n_interior(&self) -> usize {
        self.blocks.v_diag.len()
    }

    /// Γ dimension (0 for Dirichlet/CAP).
    pub fn n_gamma(&self) -> usize {
        self.abc.map_or(0, |a| a.n_gamma())
    }

    /// Rational order of the attached boundary condition (0 when none).
    pub fn order(&self) -> usize {
        self.abc.map_or(0, |a| a.order)
    }

    /// Attached boundary condition, if any.
    pub fn abc(&self) -> Option<&'a RationalAbc> {
        self.abc
    }

    /// Flattened state length `n_int + m·n_Γ`.
    pub fn state_len(&self) -> usize {
        self.n_interior() + self.order() * self.n_gamma()
    }

    /// `out = L x`.
    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        let n = self.n_interior();
        let ng = self.n_gamma();
        debug_assert_eq!(x.len(), self.state_len());
        debug_assert_eq!(out.len(), self.state_len());
        let minus_i = c(0.0, -1.0);
        let (xphi, xaux) = x.split_at(n);
        let mut hphi = vec![c(0.0, 0.0); n];
        self.blocks.apply_h_ii(xphi, &mut hphi);
        let (ophi, oaux) = out.split_at_mut(n);
        for i in 0..n {
            ophi[i] = minus_i * hphi[i];
        }
        if let Some(cw) = &self.cap {
            for i in 0..n {
                ophi[i] -= c(cw[i], 0.0) * xphi[i];
            }
        }
        match self.abc.map(|a| &a.coeffs) {
            None => {}
            Some(AbcCoefficients::Zeroth { m }) => {
                let xg = ArrayView1::from(&xphi[..ng]);
                let mg = m.dot(&xg);
                for a in 0..ng {
                    ophi[a] += minus_i * mg[a];
                }
            }
            Some(AbcCoefficients::First { a, b }) => {
                for i in 0..ng {
                    ophi[i] += minus_i * xaux[i];
                }
                let xg = ArrayView1::from(&xphi[..ng]);
                let xf = ArrayView1::from(xaux);
                let df = a.dot(&xg) + b.dot(&xf);
                oaux.copy_from_slice(df.as_slice().expect("contiguous"));
            }
            Some(AbcCoefficients::Second { a1, a0, b1, b0 }) => {
                let (xf, xg) = xaux.split_at(ng);
                for i in 0..ng {
                    ophi[i] += minus_i * xf[i];
                }
                let (of, og) = oaux.split_at_mut(ng);
                of.copy_from_slice(xg);
                // Eφ̇ = −i((Hφ)_Γ + f)
                let phidot: CVec = (0..ng).map(|i| minus_i * (hphi[i] + xf[i])).collect();
                let dg = b1.dot(&ArrayView1::from(xg))
                    + b0.dot(&ArrayView1::from(xf))
                    + a0.dot(&ArrayView1::from(&xphi[..ng]))
                    + a1.dot(&phidot);
                og.copy_from_slice(dg.as_slice().expect("contiguous"));
            }
        }
    }

    /// Dense generator matrix by basis application (desk-scale diagnostics).
    pub fn dense(&self) -> CMat {
        let nt = self.state_len();
        let mut m = CMat::zeros((nt, nt));
        let mut e = vec![c(0.0, 0.0); nt];
        let mut col = vec![c(0.0, 0.0); nt];
        for j in 0..nt {
            e[j] = c(1.0, 0.0);
            self.apply(&e, &mut col);
            for i in 0..nt {
                m[(i, j)] = col[i];
            }
            e[j] = c(0.0, 0.0);
        }
        m
    }

    /// Cheap upper bound on the generator spectral radius (block-row sums),
    /// used for the Taylor-4 stability warning.
    pub fn spectral_radius_bound(&self) -> f64 {
        let st = &self.blocks.stencil;
        let h2 = self.grid.h * self.grid.h;
        let abs_c: f64 = (-(st.half_width as i64)..=st.half_width as i64)
            .map(|k| st.coeff(k).abs())
            .sum();
        let kin = self.grid.dim as f64 * st.kinetic_prefactor.abs() * abs_c / h2;
        let vmax = self.blocks.v_diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let capmax = self
            .cap
            .as_ref()
            .map_or(0.0, |cw| cw.iter().fold(0.0f64, |m, w| m.max(*w)));
        let phi_row = kin + vmax + capmax;
        match self.abc.map(|a| &a.coeffs) {
            None => phi_row,
            Some(AbcCoefficients::Zeroth { m }) => phi_row + norm_inf(m),
            Some(AbcCoefficients::First { a, b }) => {
                (phi_row + 1.0).max(norm_inf(a) + norm_inf(b))
            }
            Some(AbcCoefficients::Second { a1, a0, b1, b0 }) => {
                let g_row =
                    norm_inf(a0) + norm_inf(a1) * (phi_row + 1.0) + norm_inf(b0) + norm_inf(b1);
                (phi_row + 1.0).max(g_row).max(1.0)
            }
        }
    }
}

/// One Taylor-4 step: `x ← Σ_{k=0}^{4} (Δt·L)^k/k! · x` via four successive
/// applications of the generator.
pub fn step_taylor4(gen: &AugmentedGenerator, state: &mut SimState, dt: f64) {
    let nt = gen.state_len();
    let mut term: Vec<C64> = state.data.as_slice().expect("contiguous").to_vec();
    let mut next = vec![c(0.0, 0.0); nt];
    for k in 1..=4u32 {
        gen.apply(&term, &mut next);
        let scale = c(dt / k as f64, 0.0);
        for i in 0..nt {
            next[i] *= scale;
            state.data[i] += next[i];
        }
        std::mem::swap(&mut term, &mut next);
    }
    state.t += dt;
}

enum CnSolver {
    Banded { lu: BandedLu },
    Bordered { solver: BandedBordered, border_in_state: bool },
    Dense { lu: DenseLu },
}

/// Prepared Crank–Nicolson stepper: `(I − Δt/2·L) x_{n+1} = (I + Δt/2·L) x_n`.
pub struct CrankNicolson {
    dt: f64,
    solver: CnSolver,
}

/// Largest state dimension accepted by the dense Crank–Nicolson fallback.
const CN_DENSE_CAP: usize = 4096;

/// Factor the Crank–Nicolson system for the generator at step `Δt`.
///
/// One-dimensional grids use a banded core in lexicographic ordering with the
/// boundary coupling in a small Schur border; other geometries fall back to a
/// dense factorization (desk scale only — large 3D runs use Taylor-4).
pub fn prepare_crank_nicolson(gen: &AugmentedGenerator, dt: f64) -> Result<CrankNicolson> {
    if dt <= 0.0 {
        return Err(Error::Validation(format!("Δt must be positive, got {dt}")));
    }
    if gen.grid.dim == 1 {
        prepare_cn_banded(gen, dt)
    } else {
        prepare_cn_dense(gen, dt)
    }
}

fn prepare_cn_dense(gen: &AugmentedGenerator, dt: f64) -> Result<CrankNicolson> {
    let nt = gen.state_len();
    if nt > CN_DENSE_CAP {
        return Err(Error::Validation(format!(
            "Crank–Nicolson needs a dense factorization for this geometry and the state \
             dimension {nt} exceeds {CN_DENSE_CAP}; use the Taylor-4 integrator"
        )));
    }
    let mut m = gen.dense();
    m.mapv_inplace(|z| z * c(-dt / 2.0, 0.0));
    for i in 0..nt {
        m[(i, i)] += c(1.0, 0.0);
    }
    let lu = DenseLu::factor(&m, "Crank–Nicolson system")?;
    Ok(CrankNicolson { dt, solver: CnSolver::Dense { lu } })
}

fn prepare_cn_banded(gen: &AugmentedGenerator, dt: f64) -> Result<CrankNicolson> {
    let n = gen.n_interior();
    let ng = gen.n_gamma();
    let st = &gen.blocks.stencil;
    let p = st.half_width;
    let h2 = gen.grid.h * gen.grid.h;
    let kp = st.kinetic_prefactor;
    let canon_of_lex = &gen.part.canon_of_lex;
    let mut lex_of_canon = vec![0usize; n];
    for (lex, &cidx) in canon_of_lex.iter().enumerate() {
        lex_of_canon[cidx] = lex;
    }
    let idt2 = c(0.0, dt / 2.0);
    let half = dt / 2.0;
    let cap = gen.cap.as_ref();
    // Banded core: I − Δt/2·(−iH − ηW) in lexicographic ordering.
    let p_entry = |i: usize, j: usize| -> C64 {
        let k = j as i64 - i as i64;
        let mut val = c(0.0, 0.0);
        if k.unsigned_abs() as usize <= p {
            val += idt2 * c(kp * st.coeff(k) / h2, 0.0);
        }
        if i == j {
            let cn = canon_of_lex[i];
            val += c(1.0, 0.0) + idt2 * c(gen.blocks.v_diag[cn], 0.0);
            if let Some(cw) = cap {
                val += c(half * cw[cn], 0.0);
            }
        }
        val
    };
    let solver = match gen.abc.map(|a| &a.coeffs) {
        None => CnSolver::Banded { lu: BandedLu::factor(n, p, p, &p_entry)? },
        Some(AbcCoefficients::Zeroth { m }) => {
            // Rank-n_Γ correction i·Δt/2·EᵀME via a Woodbury border with
            // S = −I (the border carries no state).
            let mut u = CMat::zeros((n, ng));
            let mut w = CMat::zeros((ng, n));
            for a in 0..ng {
                u[(lex_of_canon[a], a)] = c(1.0, 0.0);
                for b in 0..ng {
                    w[(a, lex_of_canon[b])] = idt2 * m[(a, b)];
                }
            }
            let mut s = CMat::zeros((ng, ng));
            for a in 0..ng {
                s[(a, a)] = c(-1.0, 0.0);
            }
            CnSolver::Bordered {
                solver: BandedBordered::factor(n, p, p, &p_entry, &u, &w, &s)?,
                border_in_state: false,
            }
        }
        Some(AbcCoefficients::First { a, b }) => {
            let mut u = CMat::zeros((n, ng));
            let mut w = CMat::zeros((ng, n));
            let mut s = CMat::zeros((ng, ng));
            for r in 0..ng {
                u[(lex_of_canon[r], r)] = idt2;
                for q in 0..ng {
                    w[(r, lex_of_canon[q])] = c(-half, 0.0) * a[(r, q)];
                    s[(r, q)] = c(-half, 0.0) * b[(r, q)];
                }
                s[(r, r)] += c(1.0, 0.0);
            }
            CnSolver::Bordered {
                solver: BandedBordered::factor(n, p, p, &p_entry, &u, &w, &s)?,
                border_in_state: true,
            }
        }
        Some(AbcCoefficients::Second { a1, a0, b1, b0 }) => {
            let q = 2 * ng;
            let mut u = CMat::zeros((n, q));
            let mut w = CMat::zeros((q, n));
            let mut s = CMat::zeros((q, q));
            let minus_i = c(0.0, -1.0);
            for r in 0..ng {
                u[(lex_of_canon[r], r)] = idt2;
                // f rows: f − Δt/2·g = rhs
                s[(r, r)] = c(1.0, 0.0);
                s[(r, ng + r)] = c(-half, 0.0);
                // g rows: g − Δt/2·(B0f + B1g + A0·Eφ − iA1((Hφ)_Γ + f))
                for q2 in 0..ng {
                    w[(ng + r, lex_of_canon[q2])] += c(-half, 0.0) * a0[(r, q2)];
                    s[(ng + r, q2)] = c(-half, 0.0) * (b0[(r, q2)] + minus_i * a1[(r, q2)]);
                    s[(ng + r, ng + q2)] = c(-half, 0.0) * b1[(r, q2)];
                    // −Δt/2·(−i)·A1[r,q2]·H_lex[γ_q2, j]
                    let glex = lex_of_canon[q2] as i64;
                    for k in -(p as i64)..=p as i64 {
                        let j = glex + k;
                        if j < 0 || j >= n as i64 {
                            continue;
                        }
                        let mut hval = kp * st.coeff(k) / h2;
                        if k == 0 {
                            hval += gen.blocks.v_diag[canon_of_lex[j as usize]];
                        }
                        w[(ng + r, j as usize)] +=
                            c(-half, 0.0) * minus_i * a1[(r, q2)] * c(hval, 0.0);
                    }
                }
                s[(ng + r, ng + r)] += c(1.0, 0.0);
            }
            CnSolver::Bordered {
                solver: BandedBordered::factor(n, p, p, &p_entry, &u, &w, &s)?,
                border_in_state: true,
            }
        }
    };
    Ok(CrankNicolson { dt, solver })
}

impl CrankNicolson {
    /// Advance one step.
    pub fn step(&self, gen: &AugmentedGenerator, state: &mut SimState) -> Result<()> {
        let nt = gen.state_len();
        let n = gen.n_interior();
        let x = state.data.as_slice().expect("contiguous");
        let mut rhs = vec![c(0.0, 0.0); nt];
        gen.apply(x, &mut rhs);
        for i in 0..nt {
            rhs[i] = x[i] + c(self.dt / 2.0, 0.0) * rhs[i];
        }
        match &self.solver {
            CnSolver::Dense { lu } => {
                let mut v = CVec::from(rhs);
                lu.solve_in_place(&mut v)?;
                state.data.assign(&v);
            }
            CnSolver::Banded { lu } => {
                let mut buf = vec![c(0.0, 0.0); n];
                for lex in 0..n {
                    buf[lex] = rhs[gen.part.canon_of_lex[lex]];
                }
                lu.solve_in_place(&mut buf);
                for lex in 0..n {
                    state.data[gen.part.canon_of_lex[lex]] = buf[lex];
                }
            }
            CnSolver::Bordered { solver, border_in_state } => {
                let q = nt - n + if *border_in_state { 0 } else { gen.n_gamma() };
                let mut buf = vec![c(0.0, 0.0); n + q];
                for lex in 0..n {
                    buf[lex] = rhs[gen.part.canon_of_lex[lex]];
                }
                if *border_in_state {
                    buf[n..].copy_from_slice(&rhs[n..]);
                }
                solver.solve_in_place(&mut buf);
                for lex in 0..n {
                    state.data[gen.part.canon_of_lex[lex]] = buf[lex];
                }
                if *border_in_state {
                    for i in n..nt {
                        state.data[i] = buf[i];
                    }
                }
            }
        }
        state.t += self.dt;
        Ok(())
    }
}

/// Closed-form free-packet solution of `iψ_t = −½ψ_xx` with initial data
/// `exp(ik₀(x−x_c) − (x−x_c)²)`.
pub fn exact_solution_1d(x: f64, t: f64, k0: f64, xc: f64) -> C64 {
    let dx = x - xc;
    let den = c(-2.0 * t, 1.0); // i − 2t
    let pref = (c(0.0, 1.0) / den).sqrt();
    let num = c(-k0 * dx + 0.5 * k0 * k0 * t, -dx * dx);
    pref * (num / den).exp()
}

/// Closed-form free-packet solution of `iψ_t = −½Δψ` with initial data
/// `exp(−|x⃗|² + ik₀x₁)` (a product of three 1D packets; the boost is along
/// the first axis).
pub fn exact_solution_3d(x: [f64; 3], t: f64, k0: f64) -> C64 {
    exact_solution_1d(x[0], t, k0, 0.0)
        * exact_solution_1d(x[1], t, 0.0, 0.0)
        * exact_solution_1d(x[2], t, 0.0, 0.0)
}

/// Precomputed weights of the Lyapunov functional.
pub struct LyapunovWeights {
    /// `Q = (H_ΓΣH_ΣΓ)⁻¹` for the first-order functional; `None` uses the
    /// plain interior norm.
    pub q: Option<CMat>,
}

/// Build the Lyapunov weights for the attached boundary condition.
///
/// Orders 0 and none use `W = φᴴφ`; order 1 adds `f_Γᴴ Q f_Γ`.  Order 2 has
/// no algebraic functional — the interior norm is reported instead.
pub fn lyapunov_weights(
    abc: Option<&RationalAbc>,
    blocks: &HamiltonianBlocks,
) -> Result<LyapunovWeights> {
    match abc.map(|a| a.order) {
        Some(1) => {
            let product = blocks.gamma_sigma_product();
            let (q, _cond) = inv_with_cond(&product, "Lyapunov weights: (H_ΓΣH_ΣΓ)⁻¹")?;
            Ok(LyapunovWeights { q: Some(q) })
        }
        _ => Ok(LyapunovWeights { q: None }),
    }
}

/// Evaluate the Lyapunov functional `W = φᴴφ (+ f_Γᴴ Q f_Γ)`.
pub fn lyapunov(state: &SimState, weights: &LyapunovWeights) -> f64 {
    let mut w = state.phi().iter().map(|z| z.norm_sqr()).sum::<f64>();
    if let Some(q) = &weights.q {
        let f = state.f_gamma();
        if f.len() == q.nrows() {
            let qf = q.dot(&f);
            w += f
                .iter()
                .zip(qf.iter())
                .map(|(fi, qi)| (fi.conj() * qi).re)
                .sum::<f64>();
        }
    }
    w
}

/// Time integrator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    /// Implicit trapezoidal (Cayley) scheme; A-stable.
    CrankNicolson,
    /// Explicit four-term exponential expansion.
    Taylor4,
}

/// Run controls for [`propagate`].
#[derive(Debug, Clone)]
pub struct PropagateOptions {
    /// Integrator.
    pub integrator: Integrator,
    /// Step size.
    pub dt: f64,
    /// Number of steps.
    pub steps: usize,
    /// Observable sampling stride (1 = every step).
    pub sample_stride: usize,
    /// Steps at which to record interior snapshots.
    pub snapshot_steps: Vec<usize>,
    /// Restrict the reported particle number to these canonical indices
    /// (e.g. the physical window of a CAP run); `None` sums the whole
    /// interior.
    pub number_window: Option<Vec<usize>>,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            integrator: Integrator::CrankNicolson,
            dt: 1e-3,
            steps: 0,
            sample_stride: 1,
            snapshot_steps: Vec::new(),
            number_window: None,
        }
    }
}

/// Observable time series of one run.
#[derive(Debug, Clone, Default)]
pub struct ObservableSeries {
    /// Sample times.
    pub times: Vec<f64>,
    /// Interior particle number `N(t)`.
    pub number: Vec<f64>,
    /// Lyapunov functional `W(t)`.
    pub lyapunov: Vec<f64>,
    /// Reference particle number (NaN when no reference is attached).
    pub reference_number: Vec<f64>,
    /// `|N − N_ref|` (NaN when no reference is attached).
    pub error: Vec<f64>,
}

impl ObservableSeries {
    /// Convert to CSV rows.
    pub fn rows(&self) -> Vec<crate::formats::ObservableRow> {
        (0..self.times.len())
            .map(|i| crate::formats::ObservableRow {
                t: self.times[i],
                n: self.number[i],
                n_ref: self.reference_number[i],
                w: self.lyapunov[i],
                err_n: self.error[i],
            })
            .collect()
    }

    /// Largest `|N − N_ref|` over the samples (NaN-free reference required).
    pub fn max_error(&self) -> f64 {
        self.error.iter().cloned().fold(0.0, f64::max)
    }
}

/// Result of [`propagate`].
pub struct PropagateOutput {
    /// Observable series sampled on the configured stride.
    pub series: ObservableSeries,
    /// Final state.
    pub state: SimState,
    /// Recorded `(t, φ)` snapshots.
    pub snapshots: Vec<(f64, CVec)>,
}

/// Integrate the augmented system and collect observables.
pub fn propagate(
    gen: &AugmentedGenerator,
    phi0: &CVec,
    opts: &PropagateOptions,
    n_ref: Option<&dyn Fn(f64) -> f64>,
) -> Result<PropagateOutput> {
    if phi0.len() != gen.n_interior() {
        return Err(Error::Validation(format!(
            "initial state has {} entries, interior has {}",
            phi0.len(),
            gen.n_interior()
        )));
    }
    if opts.dt <= 0.0 {
        return Err(Error::Validation(format!("Δt must be positive, got {}", opts.dt)));
    }
    if opts.sample_stride == 0 {
        return Err(Error::Validation("sample stride must be ≥ 1".to_string()));
    }
    if let Some(w) = &opts.number_window {
        if w.iter().any(|&i| i >= gen.n_interior()) {
            return Err(Error::Validation(
                "number window references indices outside the interior".to_string(),
            ));
        }
    }
    let hvol = gen.grid.h.powi(gen.grid.dim as i32);
    let number_of = |state: &SimState| -> f64 {
        match &opts.number_window {
            None => state.number(gen.grid),
            Some(w) => hvol * w.iter().map(|&i| state.phi()[i].norm_sqr()).sum::<f64>(),
        }
    };
    let mut state = SimState::new(phi0, gen.n_gamma(), gen.order());
    let n0 = number_of(&state);
    if !(n0 > 0.0) {
        return Err(Error::Validation(format!(
            "initial particle number must be positive, got {n0}"
        )));
    }
    if opts.integrator == Integrator::Taylor4 {
        let z = opts.dt * gen.spectral_radius_bound();
        if z > 2.0 * std::f64::consts::SQRT_2 {
            log::warn!(
                "Taylor-4 stability bound exceeded: Δt·ρ(L) ≲ {z:.3} > 2√2; \
                 expect growth unless the estimate is loose"
            );
        }
    }
    let cn = match opts.integrator {
        Integrator::CrankNicolson => Some(prepare_crank_nicolson(gen, opts.dt)?),
        Integrator::Taylor4 => None,
    };
    let weights = lyapunov_weights(gen.abc, gen.blocks)?;
    let snapshot_at: BTreeSet<usize> = opts.snapshot_steps.iter().cloned().collect();
    let mut series = ObservableSeries::default();
    let mut snapshots = Vec::new();
    let sample = |state: &SimState, series: &mut ObservableSeries| {
        let n = number_of(state);
        series.times.push(state.t);
        series.number.push(n);
        series.lyapunov.push(lyapunov(state, &weights));
        let r = n_ref.map_or(f64::NAN, |f| f(state.t));
        series.reference_number.push(r);
        series.error.push((n - r).abs());
    };
    sample(&state, &mut series);
    if snapshot_at.contains(&0) {
        snapshots.push((state.t, state.phi().to_owned()));
    }
    for step in 1..=opts.steps {
        match &cn {
            Some(solver) => solver.step(gen, &mut state)?,
            None => step_taylor4(gen, &mut state, opts.dt),
        }
        if step % 100 == 0 || step == opts.steps || step % opts.sample_stride == 0 {
            let finite = state.data.iter().all(|z| z.re.is_finite() && z.im.is_finite());
            if !finite {
                return Err(Error::Runtime(format!(
                    "non-finite state detected at step {step} (t = {:.6})",
                    state.t
                )));
            }
        }
        if step % opts.sample_stride == 0 || step == opts.steps {
            sample(&state, &mut series);
        }
        if snapshot_at.contains(&step) {
            snapshots.push((state.t, state.phi().to_owned()));
        }
    }
    Ok(PropagateOutput { series, state, snapshots })
}
