//! Time-dependent Hartree–Fock with the BKN contact functional.
//!
//! Nucleon orbitals evolve under the density-dependent one-body Hamiltonian
//! `H[ρ] = −(ħ²/2m)Δ + ¾t₀ρ + (3/16)t₃ρ² + W_Y + W_C`, where the Yukawa and
//! Coulomb potentials solve Helmholtz and Poisson problems on the same grid.
//! The module prepares ground states by imaginary-time gradient flow, boosts
//! fragments with a plane-wave phase, and advances the nonlinear dynamics by
//! a predictor–corrector self-consistency loop around the Taylor-4 stepper.
//! Outgoing flux leaves through a first-order absorbing boundary condition
//! whose kernels are built from the kinetic-only exterior, so one `(A, B)`
//! pair is shared by every orbital.
//!
//! Units: lengths in fm, times in fm/c, energies in MeV.  Operators handed
//! to the time steppers are scaled by `1/ħc`, so Laplace frequencies and
//! absorbing-boundary nodes are in (fm/c)⁻¹.

use rayon::prelude::*;

use crate::abc::RationalAbc;
use crate::error::{Error, Result};
use crate::formats::{ObservableRow, TdhfObservableRow};
use crate::lattice::{
    assemble_blocks, CsMat, Grid, HamiltonianBlocks, IndexPartition, Stencil,
};
use crate::linalg::{c, C64, CVec};
use crate::propagate::{
    assemble_augmented_generator, lyapunov, lyapunov_weights, step_taylor4, LyapunovWeights,
    SimState,
};

/// `ħ²/2m` for the average nucleon [MeV·fm²].
pub const H2M: f64 = 20.7353;
/// `ħc` [MeV·fm].
pub const HBARC: f64 = 197.327;

/// Wall values for the Coulomb solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoulombBc {
    /// Homogeneous Dirichlet (biased by O(1/L); kept for comparison runs).
    Zero,
    /// Monopole tail `e²·q_p/r` from the instantaneous proton charge.
    Monopole,
}

/// BKN interaction parameters.
#[derive(Debug, Clone)]
pub struct BknParams {
    /// Contact two-body strength t₀ [MeV·fm³].
    pub t0: f64,
    /// Contact three-body strength t₃ [MeV·fm⁶].
    pub t3: f64,
    /// Yukawa strength V₀ [MeV].
    pub v0: f64,
    /// Yukawa range a [fm].
    pub a: f64,
    /// Squared elementary charge e² [MeV·fm].
    pub e2: f64,
    /// Spin–isospin degeneracy g of each spatial orbital.
    pub degeneracy: f64,
}

impl Default for BknParams {
    fn default() -> Self {
        BknParams {
            t0: -497.726,
            t3: 17270.0,
            v0: -363.044,
            a: 0.45979,
            e2: 1.44,
            degeneracy: 4.0,
        }
    }
}

/// Nucleon density `ρ = g·Σ_j |φ_j|²` (canonical ordering).
pub fn density(orbitals: &[CVec], degeneracy: f64) -> Vec<f64> {
    if orbitals.is_empty() {
        return Vec::new();
    }
    let n = orbitals[0].len();
    let mut rho = vec![0.0; n];
    for phi in orbitals {
        for (r, z) in rho.iter_mut().zip(phi.iter()) {
            *r += degeneracy * z.norm_sqr();
        }
    }
    rho
}

/// `∫ρ = h³·Σρ`.
pub fn nucleon_number(grid: &Grid, rho: &[f64]) -> f64 {
    grid.h.powi(grid.dim as i32) * rho.iter().sum::<f64>()
}

/// Local BKN mean field in MeV: `¾t₀ρ + (3/16)t₃ρ² + W_Y + W_C`.
pub fn hf_potential(rho: &[f64], w_c: &[f64], w_y: &[f64], params: &BknParams) -> Vec<f64> {
    rho.iter()
        .zip(w_c)
        .zip(w_y)
        .map(|((&r, &wc), &wy)| 0.75 * params.t0 * r + 0.1875 * params.t3 * r * r + wy + wc)
        .collect()
}

/// Convergence record of one preconditioned conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct FieldSolve {
    /// Iterations consumed.
    pub iterations: usize,
    /// Final relative residual `‖b − Ax‖/‖b‖`.
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD grid operators.
fn pcg(
    op: &dyn Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    rtol: f64,
    max_iter: usize,
    context: &str,
) -> Result<(Vec<f64>, FieldSolve)> {
    let n = b.len();
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], FieldSolve { iterations: 0, relative_residual: 0.0 }));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut rz = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
    let mut ap = vec![0.0; n];
    let mut history = Vec::new();
    for it in 1..=max_iter {
        op(&p, &mut ap);
        let pap = p.iter().zip(&ap).map(|(a, b)| a * b).sum::<f64>();
        if pap <= 0.0 {
            return Err(Error::Singular {
                context: context.to_string(),
                detail: format!("conjugate gradients met a non-positive curvature {pap:.3e}"),
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = rnorm / bnorm;
        history.push(rel);
        if rel <= rtol {
            return Ok((x, FieldSolve { iterations: it, relative_residual: rel }));
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = r.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let tail: Vec<String> = history
        .iter()
        .rev()
        .take(8)
        .rev()
        .map(|r| format!("{r:.2e}"))
        .collect();
    Err(Error::NonConvergence {
        context: format!(
            "{context}: conjugate gradients stalled; residual tail [{}]",
            tail.join(", ")
        ),
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Poisson/Helmholtz solver on the interior grid with Dirichlet walls.
pub struct FieldSolver {
    neg_lap: CsMat,
    diag: f64,
    /// `(canonical row, off-diagonal coefficient, exterior coordinate)` for
    /// every stencil leg that leaves the box (inhomogeneous wall values).
    wall_legs: Vec<(usize, f64, [f64; 3])>,
    center: [f64; 3],
    h3: f64,
    rtol: f64,
    max_iter: usize,
}

impl FieldSolver {
    /// Assemble `−Δ` with the same stencil family as the kinetic operator.
    pub fn new(grid: &Grid, part: &IndexPartition, stencil: &Stencil) -> Result<FieldSolver> {
        let lap_stencil = Stencil::with_prefactor(stencil.half_width, -1.0, 0)?;
        let n = grid.n_interior();
        let blocks = assemble_blocks(grid, part, &lap_stencil, vec![0.0; n], 0.0)?;
        let h2 = grid.h * grid.h;
        // −Δ diagonal entry: −dim·c₀/h² with c₀ < 0, so positive.
        let diag = -(grid.dim as f64) * lap_stencil.coeff(0) / h2;
        let p = lap_stencil.half_width as i64;
        let mut wall_legs = Vec::new();
        for lex in 0..n {
            let mi = grid.multi_index(lex);
            let row = part.canon_of_lex[lex];
            for d in 0..grid.dim {
                for k in (-p..=p).filter(|&k| k != 0) {
                    let mut nb = mi;
                    nb[d] += k;
                    if !grid.contains(&nb) {
                        let coeff = -lap_stencil.coeff(k) / h2;
                        wall_legs.push((row, coeff, grid.coord(&nb)));
                    }
                }
            }
        }
        let mut center = [0.0; 3];
        for d in 0..grid.dim {
            center[d] = 0.5 * (grid.box_lo[d] + grid.box_hi[d]);
        }
        Ok(FieldSolver {
            neg_lap: blocks.kinetic_ii,
            diag,
            wall_legs,
            center,
            h3: grid.h.powi(grid.dim as i32),
            rtol: 1e-8,
            max_iter: 5000,
        })
    }

    /// Coulomb potential: `−ΔW_C = 4πe²·ρ_p` with the proton density
    /// `ρ_p = ρ/2` under full spin–isospin degeneracy (the right-hand side
    /// is therefore `2πe²·ρ`).
    pub fn solve_poisson(
        &self,
        rho: &[f64],
        params: &BknParams,
        bc: CoulombBc,
    ) -> Result<(Vec<f64>, FieldSolve)> {
        let mut rhs: Vec<f64> =
            rho.iter().map(|r| 2.0 * std::f64::consts::PI * params.e2 * r).collect();
        if bc == CoulombBc::Monopole {
            let q_p = 0.5 * self.h3 * rho.iter().sum::<f64>();
            for &(row, coeff, x) in &self.wall_legs {
                let r = (0..3)
                    .map(|d| (x[d] - self.center[d]) * (x[d] - self.center[d]))
                    .sum::<f64>()
                    .sqrt();
                rhs[row] -= coeff * params.e2 * q_p / r;
            }
        }
        let n = rhs.len();
        let diag = vec![self.diag; n];
        let apply = |x: &[f64], y: &mut [f64]| self.neg_lap.apply_f(x, y);
        pcg(&apply, &diag, &rhs, self.rtol, self.max_iter, "Coulomb (Poisson) solve")
    }

    /// Yukawa potential: `(−Δ + 1/a²)W_Y = 4πV₀a·ρ` (attractive for V₀ < 0),
    /// homogeneous walls — the range a is short against the box.
    pub fn solve_helmholtz(
        &self,
        rho: &[f64],
        params: &BknParams,
    ) -> Result<(Vec<f64>, FieldSolve)> {
        if params.a <= 0.0 {
            return Err(Error::Validation(format!(
                "Yukawa range must be positive, got {}",
                params.a
            )));
        }
        let shift = 1.0 / (params.a * params.a);
        let rhs: Vec<f64> = rho
            .iter()
            .map(|r| 4.0 * std::f64::consts::PI * params.v0 * params.a * r)
            .collect();
        let n = rhs.len();
        let diag = vec![self.diag + shift; n];
        let apply = |x: &[f64], y: &mut [f64]| {
            self.neg_lap.apply_f(x, y);
            for i in 0..x.len() {
                y[i] += shift * x[i];
            }
        };
        pcg(&apply, &diag, &rhs, self.rtol, self.max_iter, "Yukawa (Helmholtz) solve")
    }

    /// Both mean-field potentials `(W_C, W_Y)` in MeV.
    pub fn potentials(
        &self,
        rho: &[f64],
        params: &BknParams,
        bc: CoulombBc,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (w_c, _) = self.solve_poisson(rho, params, bc)?;
        let (w_y, _) = self.solve_helmholtz(rho, params)?;
        Ok((w_c, w_y))
    }
}

/// Total BKN energy in MeV:
/// `Σ_j g·⟨φ_j|−(ħ²/2m)Δ|φ_j⟩ + ∫[⅜t₀ρ² + (1/16)t₃ρ³ + ½ρ(W_Y + W_C)]`.
///
/// The Coulomb term `½∫ρW_C` (with `W_C` sourced by `ρ_p = ρ/2`) is the form
/// whose functional derivative reproduces the full `W_C` in the mean field,
/// so the energy-gradient consistency check closes exactly.
pub fn total_energy(
    grid: &Grid,
    blocks: &HamiltonianBlocks,
    orbitals: &[CVec],
    rho: &[f64],
    w_c: &[f64],
    w_y: &[f64],
    params: &BknParams,
) -> f64 {
    let h3 = grid.h.powi(grid.dim as i32);
    let n = rho.len();
    let mut e_kin = 0.0;
    let mut buf = vec![c(0.0, 0.0); n];
    for phi in orbitals {
        let x = phi.as_slice().expect("contiguous");
        blocks.kinetic_ii.apply_c(x, &mut buf);
        let val: f64 = x.iter().zip(&buf).map(|(p, k)| (p.conj() * k).re).sum();
        e_kin += params.degeneracy * HBARC * val * h3;
    }
    let mut e_loc = 0.0;
    for i in 0..n {
        e_loc += 0.375 * params.t0 * rho[i] * rho[i]
            + 0.0625 * params.t3 * rho[i] * rho[i] * rho[i]
            + 0.5 * rho[i] * (w_y[i] + w_c[i]);
    }
    e_kin + e_loc * h3
}

/// Modified Gram–Schmidt with the `h³`-weighted inner product.
pub fn orthonormalize(orbitals: &mut [CVec], h3: f64) -> Result<()> {
    for j in 0..orbitals.len() {
        let (done, rest) = orbitals.split_at_mut(j);
        let q = &mut rest[0];
        for o in done.iter() {
            let proj = o
                .iter()
                .zip(q.iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
                * c(h3, 0.0);
            for (qi, oi) in q.iter_mut().zip(o.iter()) {
                *qi -= proj * oi;
            }
        }
        let norm = (q.iter().map(|z| z.norm_sqr()).sum::<f64>() * h3).sqrt();
        if norm < 1e-12 {
            return Err(Error::Singular {
                context: "orbital orthonormalization".to_string(),
                detail: format!("orbital {j} is linearly dependent on its predecessors"),
            });
        }
        q.mapv_inplace(|z| z / norm);
    }
    Ok(())
}

/// Largest deviation of the `h³`-weighted Gram matrix from the identity.
pub fn orthonormality_defect(orbitals: &[CVec], h3: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..orbitals.len() {
        for j in i..orbitals.len() {
            let g = orbitals[i]
                .iter()
                .zip(orbitals[j].iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
                * c(h3, 0.0);
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - c(want, 0.0)).norm());
        }
    }
    worst
}

/// Multiply every orbital by the plane-wave phase `e^{i k⃗·x⃗}`.
pub fn boost(orbitals: &mut [CVec], grid: &Grid, part: &IndexPartition, k: [f64; 3]) {
    let n = grid.n_interior();
    for lex in 0..n {
        let x = grid.coord(&grid.multi_index(lex));
        let phase = c(0.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]).exp();
        let row = part.canon_of_lex[lex];
        for phi in orbitals.iter_mut() {
            phi[row] *= phase;
        }
    }
}

/// One Gaussian-seeded fragment of the initial guess.
#[derive(Debug, Clone)]
pub struct OrbitalSeed {
    /// Fragment center [fm].
    pub center: [f64; 3],
    /// Gaussian width [fm].
    pub width: f64,
    /// Spatial orbitals: 1 (s shell, e.g. ⁴He) or 4 (s+p shells, e.g. ¹⁶O).
    pub orbitals: usize,
}

/// Controls for the imaginary-time ground-state flow.
#[derive(Debug, Clone)]
pub struct GroundStateConfig {
    /// Fragment seeds.
    pub seeds: Vec<OrbitalSeed>,
    /// Imaginary-time step τ [MeV⁻¹].
    pub tau: f64,
    /// Density relaxation weight α ∈ (0, 1].
    pub mixing: f64,
    /// Convergence: max single-orbital energy change per iteration [MeV].
    pub tol: f64,
    /// Iteration budget.
    pub max_iter: usize,
    /// Coulomb wall treatment.
    pub coulomb_bc: CoulombBc,
}

/// Converged static solution.
pub struct GroundState {
    /// Orthonormal orbitals (canonical ordering).
    pub orbitals: Vec<CVec>,
    /// Density of the returned orbitals.
    pub rho: Vec<f64>,
    /// Single-particle energies ⟨φ_j|H|φ_j⟩ [MeV].
    pub energies: Vec<f64>,
    /// Total BKN energy [MeV].
    pub total_energy: f64,
    /// Iterations consumed.
    pub iterations: usize,
    /// Per-iteration total-energy trace (for monotonicity diagnostics).
    pub energy_trace: Vec<f64>,
}

fn seed_orbitals(grid: &Grid, part: &IndexPartition, seeds: &[OrbitalSeed]) -> Result<Vec<CVec>> {
    let n = grid.n_interior();
    let mut orbitals = Vec::new();
    for seed in seeds {
        if seed.width <= 0.0 {
            return Err(Error::Validation(format!(
                "seed width must be positive, got {}",
                seed.width
            )));
        }
        if seed.orbitals != 1 && seed.orbitals != 4 {
            return Err(Error::Validation(format!(
                "a fragment seeds 1 or 4 spatial orbitals, got {}",
                seed.orbitals
            )));
        }
        let mut shells = vec![CVec::zeros(n); seed.orbitals];
        for lex in 0..n {
            let x = grid.coord(&grid.multi_index(lex));
            let dx = [x[0] - seed.center[0], x[1] - seed.center[1], x[2] - seed.center[2]];
            let r2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
            let g = (-r2 / (2.0 * seed.width * seed.width)).exp();
            let row = part.canon_of_lex[lex];
            shells[0][row] = c(g, 0.0);
            for d in 1..seed.orbitals {
                shells[d][row] = c(dx[d - 1] * g, 0.0);
            }
        }
        orbitals.extend(shells);
    }
    Ok(orbitals)
}

fn trace_tail(trace: &[f64]) -> String {
    trace
        .iter()
        .rev()
        .take(8)
        .rev()
        .map(|e| format!("{e:.6}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Solve the static Hartree–Fock problem by imaginary-time propagation with
/// per-step orthonormalization and relaxed density updates.
pub fn static_ground_state(
    grid: &Grid,
    part: &IndexPartition,
    blocks: &mut HamiltonianBlocks,
    fields: &FieldSolver,
    params: &BknParams,
    cfg: &GroundStateConfig,
) -> Result<GroundState> {
    if cfg.seeds.is_empty() {
        return Err(Error::Validation("ground state needs at least one seed".to_string()));
    }
    if cfg.tau <= 0.0 || !(cfg.mixing > 0.0 && cfg.mixing <= 1.0) {
        return Err(Error::Validation(format!(
            "need τ > 0 and mixing ∈ (0, 1], got τ = {}, α = {}",
            cfg.tau, cfg.mixing
        )));
    }
    let h3 = grid.h.powi(grid.dim as i32);
    let n = grid.n_interior();
    let mut orbitals = seed_orbitals(grid, part, &cfg.seeds)?;
    orthonormalize(&mut orbitals, h3)?;
    let mut rho = density(&orbitals, params.degeneracy);
    let mut eps_prev = vec![f64::INFINITY; orbitals.len()];
    let mut trace = Vec::new();
    let mut hbuf = vec![c(0.0, 0.0); n];
    let mut last_delta = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let (w_c, w_y) = fields.potentials(&rho, params, cfg.coulomb_bc)?;
        let v = hf_potential(&rho, &w_c, &w_y, params);
        blocks.v_diag = v.iter().map(|x| x / HBARC).collect();
        let mut eps = vec![0.0; orbitals.len()];
        for (j, phi) in orbitals.iter_mut().enumerate() {
            let x = phi.as_slice().expect("contiguous");
            blocks.apply_h_ii(x, &mut hbuf);
            eps[j] = HBARC
                * h3
                * x.iter().zip(&hbuf).map(|(p, hp)| (p.conj() * hp).re).sum::<f64>();
            let scale = c(cfg.tau * HBARC, 0.0);
            for (pi, hi) in phi.iter_mut().zip(&hbuf) {
                *pi -= scale * hi;
            }
        }
        orthonormalize(&mut orbitals, h3)?;
        let fresh = density(&orbitals, params.degeneracy);
        for i in 0..n {
            rho[i] = (1.0 - cfg.mixing) * rho[i] + cfg.mixing * fresh[i];
        }
        let e_tot = total_energy(grid, blocks, &orbitals, &fresh, &w_c, &w_y, params);
        trace.push(e_tot);
        if !e_tot.is_finite() || e_tot.abs() > 1e8 {
            return Err(Error::NonConvergence {
                context: format!(
                    "imaginary-time flow diverged; energy trace tail [{}]",
                    trace_tail(&trace)
                ),
                iterations: it,
                residual: e_tot,
            });
        }
        let delta = eps
            .iter()
            .zip(&eps_prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        eps_prev = eps.clone();
        last_delta = delta;
        if delta < cfg.tol {
            let rho_final = density(&orbitals, params.degeneracy);
            let (w_c, w_y) = fields.potentials(&rho_final, params, cfg.coulomb_bc)?;
            let v = hf_potential(&rho_final, &w_c, &w_y, params);
            blocks.v_diag = v.iter().map(|x| x / HBARC).collect();
            let e_tot =
                total_energy(grid, blocks, &orbitals, &rho_final, &w_c, &w_y, params);
            let mut energies = vec![0.0; orbitals.len()];
            for (j, phi) in orbitals.iter().enumerate() {
                let x = phi.as_slice().expect("contiguous");
                blocks.apply_h_ii(x, &mut hbuf);
                energies[j] = HBARC
                    * h3
                    * x.iter().zip(&hbuf).map(|(p, hp)| (p.conj() * hp).re).sum::<f64>();
            }
            return Ok(GroundState {
                orbitals,
                rho: rho_final,
                energies,
                total_energy: e_tot,
                iterations: it,
                energy_trace: trace,
            });
        }
    }
    Err(Error::NonConvergence {
        context: format!(
            "imaginary-time flow not converged; energy trace tail [{}]",
            trace_tail(&trace)
        ),
        iterations: cfg.max_iter,
        residual: last_delta,
    })
}

/// Run controls for [`tdhf_propagate`].
#[derive(Debug, Clone)]
pub struct TdhfOptions {
    /// Step size [fm/c].
    pub dt: f64,
    /// Number of steps.
    pub steps: usize,
    /// Observable sampling stride.
    pub sample_stride: usize,
    /// Corrector iteration cap of the self-consistency loop.
    pub max_scf: usize,
    /// Density-change tolerance ending the corrector loop.
    pub scf_tol: f64,
    /// Coulomb wall treatment.
    pub coulomb_bc: CoulombBc,
    /// Steps at which to record density snapshots.
    pub snapshot_steps: Vec<usize>,
}

impl Default for TdhfOptions {
    fn default() -> Self {
        TdhfOptions {
            dt: 1e-3,
            steps: 0,
            sample_stride: 1,
            max_scf: 5,
            scf_tol: 1e-8,
            coulomb_bc: CoulombBc::Monopole,
            snapshot_steps: Vec::new(),
        }
    }
}

/// Observable series of a TDHF run.
#[derive(Debug, Clone, Default)]
pub struct TdhfSeries {
    /// Sample times [fm/c].
    pub times: Vec<f64>,
    /// Nucleon number in the box.
    pub nucleons: Vec<f64>,
    /// Total energy [MeV].
    pub energy: Vec<f64>,
    /// Summed per-orbital Lyapunov functional.
    pub lyapunov: Vec<f64>,
    /// Reference nucleon number (NaN when absent).
    pub reference: Vec<f64>,
    /// `|N − N_ref|` (NaN when absent).
    pub error: Vec<f64>,
}

impl TdhfSeries {
    /// Convert to CSV rows (`t,N,N_ref,W,err_N,nucleons,energy`).
    pub fn rows(&self) -> Vec<TdhfObservableRow> {
        (0..self.times.len())
            .map(|i| TdhfObservableRow {
                base: ObservableRow {
                    t: self.times[i],
                    n: self.nucleons[i],
                    n_ref: self.reference[i],
                    w: self.lyapunov[i],
                    err_n: self.error[i],
                },
                nucleons: self.nucleons[i],
                energy: self.energy[i],
            })
            .collect()
    }
}

/// Result of [`tdhf_propagate`].
pub struct TdhfOutput {
    /// Observable series.
    pub series: TdhfSeries,
    /// Final per-orbital states (φ and auxiliary f).
    pub states: Vec<SimState>,
    /// Final density.
    pub rho: Vec<f64>,
    /// Recorded `(t, ρ)` snapshots.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

fn densities_of(states: &[SimState], degeneracy: f64) -> Vec<f64> {
    let n = states[0].phi().len();
    let mut rho = vec![0.0; n];
    for s in states {
        for (r, z) in rho.iter_mut().zip(s.phi().iter()) {
            *r += degeneracy * z.norm_sqr();
        }
    }
    rho
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Advance the nonlinear TDHF system.
///
/// Each step solves the mean field at the current density, takes a Taylor-4
/// predictor for every orbital (and its auxiliary boundary variables), then
/// corrects with midpoint-density Hamiltonians until the density change
/// drops below `scf_tol` or the corrector budget is exhausted (a warning is
/// logged and the last iterate is kept).
#[allow(clippy::too_many_arguments)]
pub fn tdhf_propagate(
    grid: &Grid,
    part: &IndexPartition,
    blocks: &mut HamiltonianBlocks,
    fields: &FieldSolver,
    params: &BknParams,
    abc: Option<&RationalAbc>,
    orbitals0: &[CVec],
    opts: &TdhfOptions,
    reference: Option<&dyn Fn(f64) -> f64>,
) -> Result<TdhfOutput> {
    if orbitals0.is_empty() {
        return Err(Error::Validation("TDHF needs at least one orbital".to_string()));
    }
    let n = grid.n_interior();
    if orbitals0.iter().any(|p| p.len() != n) {
        return Err(Error::Validation(format!(
            "orbitals must have {n} entries (grid interior)"
        )));
    }
    if opts.dt <= 0.0 || opts.sample_stride == 0 || opts.scf_tol <= 0.0 {
        return Err(Error::Validation(format!(
            "need Δt > 0, stride ≥ 1, tolerance > 0; got Δt = {}, stride = {}, tol = {}",
            opts.dt, opts.sample_stride, opts.scf_tol
        )));
    }
    if let Some(abc) = abc {
        if abc.order != 1 {
            return Err(Error::Validation(format!(
                "TDHF boundary coupling is first-order; got order {}",
                abc.order
            )));
        }
    }
    let h3 = grid.h.powi(grid.dim as i32);
    let defect = orthonormality_defect(orbitals0, h3);
    if defect > 1e-8 {
        return Err(Error::Validation(format!(
            "initial orbitals are not orthonormal (Gram defect {defect:.2e} > 1e-8)"
        )));
    }
    let (ng, order) = abc.map_or((0, 0), |a| (a.n_gamma(), a.order));
    let mut states: Vec<SimState> =
        orbitals0.iter().map(|p| SimState::new(p, ng, order)).collect();
    let mut rho = densities_of(&states, params.degeneracy);
    let weights: LyapunovWeights = lyapunov_weights(abc, blocks)?;
    let snapshot_at: std::collections::BTreeSet<usize> =
        opts.snapshot_steps.iter().cloned().collect();
    let mut series = TdhfSeries::default();
    let mut snapshots = Vec::new();
    let sample = |t: f64,
                      states: &[SimState],
                      rho: &[f64],
                      blocks: &mut HamiltonianBlocks,
                      series: &mut TdhfSeries|
     -> Result<()> {
        let (w_c, w_y) = fields.potentials(rho, params, opts.coulomb_bc)?;
        let v = hf_potential(rho, &w_c, &w_y, params);
        blocks.v_diag = v.iter().map(|x| x / HBARC).collect();
        let orbitals: Vec<CVec> = states.iter().map(|s| s.phi().to_owned()).collect();
        let e = total_energy(grid, blocks, &orbitals, rho, &w_c, &w_y, params);
        let nuc = nucleon_number(grid, rho);
        let w: f64 = states.iter().map(|s| lyapunov(s, &weights)).sum();
        series.times.push(t);
        series.nucleons.push(nuc);
        series.energy.push(e);
        series.lyapunov.push(w);
        let r = reference.map_or(f64::NAN, |f| f(t));
        series.reference.push(r);
        series.error.push((nuc - r).abs());
        Ok(())
    };
    sample(0.0, &states, &rho, blocks, &mut series)?;
    if snapshot_at.contains(&0) {
        snapshots.push((0.0, rho.clone()));
    }
    for step in 1..=opts.steps {
        // Predictor at the current density.
        let (w_c, w_y) = fields.potentials(&rho, params, opts.coulomb_bc)?;
        let v = hf_potential(&rho, &w_c, &w_y, params);
        blocks.v_diag = v.iter().map(|x| x / HBARC).collect();
        let mut trial = states.clone();
        {
            let gen = assemble_augmented_generator(grid, part, blocks, abc)?;
            trial
                .par_iter_mut()
                .for_each(|s| step_taylor4(&gen, s, opts.dt));
        }
        let mut rho_trial = densities_of(&trial, params.degeneracy);
        // Midpoint correctors.
        let mut converged = false;
        for _ in 0..opts.max_scf {
            let rho_mid: Vec<f64> =
                rho.iter().zip(&rho_trial).map(|(a, b)| 0.5 * (a + b)).collect();
            let (w_c, w_y) = fields.potentials(&rho_mid, params, opts.coulomb_bc)?;
            let v = hf_potential(&rho_mid, &w_c, &w_y, params);
            blocks.v_diag = v.iter().map(|x| x / HBARC).collect();
            let mut next = states.clone();
            {
                let gen = assemble_augmented_generator(grid, part, blocks, abc)?;
                next
                    .par_iter_mut()
                    .for_each(|s| step_taylor4(&gen, s, opts.dt));
            }
            let rho_next = densities_of(&next, params.degeneracy);
            let dd = max_abs_diff(&rho_next, &rho_trial);
            trial = next;
            rho_trial = rho_next;
            if dd < opts.scf_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::warn!(
                "TDHF self-consistency not converged at step {step} \
                 (kept the last corrector iterate)"
            );
        }
        states = trial;
        rho = rho_trial;
        if rho.iter().any(|r| !r.is_finite()) {
            return Err(Error::Runtime(format!(
                "non-finite density at step {step} (t = {:.4} fm/c)",
                step as f64 * opts.dt
            )));
        }
        let t = step as f64 * opts.dt;
        if step % opts.sample_stride == 0 || step == opts.steps {
            sample(t, &states, &rho, blocks, &mut series)?;
        }
        if snapshot_at.contains(&step) {
            snapshots.push((t, rho.clone()));
        }
    }
    Ok(TdhfOutput { series, states, rho, snapshots })
}

/// Canonical-index map embedding a small grid into a larger one with the
/// same spacing: entry `i` is the big-grid canonical index of small-grid
/// canonical index `i`.
pub fn embedding_map(
    small_grid: &Grid,
    small_part: &IndexPartition,
    big_grid: &Grid,
    big_part: &IndexPartition,
) -> Result<Vec<usize>> {
    if small_grid.dim != big_grid.dim {
        return Err(Error::Validation("embedding needs matching dimensions".to_string()));
    }
    if (small_grid.h - big_grid.h).abs() > 1e-12 * big_grid.h {
        return Err(Error::Validation(format!(
            "embedding needs matching spacings, got {} and {}",
            small_grid.h, big_grid.h
        )));
    }
    let mut offset = [0i64; 3];
    for d in 0..small_grid.dim {
        let shift = (small_grid.box_lo[d] - big_grid.box_lo[d]) / big_grid.h;
        let rounded = shift.round();
        if (shift - rounded).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "small-grid origin is not on the big grid along axis {d}"
            )));
        }
        offset[d] = rounded as i64;
    }
    let n = small_grid.n_interior();
    let mut map = vec![0usize; n];
    for lex in 0..n {
        let mi = small_grid.multi_index(lex);
        let big_mi = [mi[0] + offset[0], mi[1] + offset[1], mi[2] + offset[2]];
        if !big_grid.contains(&big_mi) {
            return Err(Error::Validation(
                "small grid does not fit inside the big grid".to_string(),
            ));
        }
        map[small_part.canon_of_lex[lex]] = big_part.canon_of_lex[big_grid.lex_index(&big_mi)];
    }
    Ok(map)
}

/// Scatter a small-grid vector into a zero-padded big-grid vector.
pub fn embed_vector(map: &[usize], big_len: usize, v: &CVec) -> CVec {
    let mut out = CVec::zeros(big_len);
    for (i, &bi) in map.iter().enumerate() {
        out[bi] = v[i];
    }
    out
}

/// Gather the big-grid values on the embedded window.
pub fn restrict_field(map: &[usize], big: &[f64]) -> Vec<f64> {
    map.iter().map(|&bi| big[bi]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_grid, partition_sides};

    fn closed_3d(n: usize, h: f64, p: usize) -> (Grid, IndexPartition, HamiltonianBlocks) {
        let st = Stencil::from_registry(100 + p as u32).unwrap();
        let side = h * n as f64;
        let grid = build_grid(3, &[h; 3], &[side; 3], h, &st).unwrap();
        assert_eq!(grid.n_interior(), n * n * n);
        let part = partition_sides(&grid, &st, &[[false, false]; 3]).unwrap();
        let nn = grid.n_interior();
        let blocks = assemble_blocks(&grid, &part, &st, vec![0.0; nn], 0.0).unwrap();
        (grid, part, blocks)
    }

    fn centered_gaussian(grid: &Grid, part: &IndexPartition, width: f64) -> CVec {
        let n = grid.n_interior();
        let mut center = [0.0; 3];
        for d in 0..3 {
            center[d] = 0.5 * (grid.box_lo[d] + grid.box_hi[d]);
        }
        let mut phi = CVec::zeros(n);
        for lex in 0..n {
            let x = grid.coord(&grid.multi_index(lex));
            let r2: f64 = (0..3).map(|d| (x[d] - center[d]) * (x[d] - center[d])).sum();
            phi[part.canon_of_lex[lex]] = c((-r2 / (2.0 * width * width)).exp(), 0.0);
        }
        let h3 = grid.h.powi(3);
        let norm = (phi.iter().map(|z| z.norm_sqr()).sum::<f64>() * h3).sqrt();
        phi.mapv_inplace(|z| z / norm);
        phi
    }

    #[test]
    fn density_counts_nucleons() {
        let (grid, part, _blocks) = closed_3d(8, 0.6, 3);
        let phi = centered_gaussian(&grid, &part, 1.0);
        let rho = density(&[phi], 4.0);
        assert!((nucleon_number(&grid, &rho) - 4.0).abs() < 1e-12);
        assert!(density(&[], 4.0).is_empty());
    }

    #[test]
    fn bkn_potential_diagonal_arithmetic() {
        let p = BknParams::default();
        let v = hf_potential(&[0.16], &[0.0], &[0.0], &p);
        let want = 0.75 * (-497.726) * 0.16 + (3.0 / 16.0) * 17270.0 * 0.16 * 0.16;
        assert!((v[0] - want).abs() < 1e-10);
        assert!((want - 23.16888).abs() < 1e-5);
    }

    #[test]
    fn field_solves_match_free_space_kernels() {
        // Odd node count keeps the box center — and the probe points below —
        // exactly on grid nodes.
        let (grid, part, blocks) = closed_3d(17, 0.5, 3);
        let fields = FieldSolver::new(&grid, &part, &blocks.stencil).unwrap();
        let mut params = BknParams::default();
        params.a = 1.0;
        params.v0 = -100.0;
        // narrow normalized source at the center, total charge chosen so the
        // proton number is 1 (rho integrates to 2).
        let mut rho = vec![0.0; grid.n_interior()];
        let mut center = [0.0; 3];
        for d in 0..3 {
            center[d] = 0.5 * (grid.box_lo[d] + grid.box_hi[d]);
        }
        let w = 0.45;
        for lex in 0..grid.n_interior() {
            let x = grid.coord(&grid.multi_index(lex));
            let r2: f64 = (0..3).map(|d| (x[d] - center[d]) * (x[d] - center[d])).sum();
            rho[part.canon_of_lex[lex]] = (-r2 / (2.0 * w * w)).exp();
        }
        let total: f64 = rho.iter().sum::<f64>() * grid.h.powi(3);
        for r in rho.iter_mut() {
            *r *= 2.0 / total;
        }
        let (w_c, out_c) = fields.solve_poisson(&rho, &params, CoulombBc::Monopole).unwrap();
        assert!(out_c.relative_residual <= 1e-8);
        // far field ≈ e² q_p / r with q_p = 1
        let probe = |field: &[f64], at: [f64; 3]| {
            let mi = [
                ((at[0] - grid.box_lo[0]) / grid.h).round() as i64,
                ((at[1] - grid.box_lo[1]) / grid.h).round() as i64,
                ((at[2] - grid.box_lo[2]) / grid.h).round() as i64,
            ];
            field[part.canon_of_lex[grid.lex_index(&mi)]]
        };
        for r in [2.0f64, 2.5, 3.0] {
            let got = probe(&w_c, [center[0] + r, center[1], center[2]]);
            let want = params.e2 * 1.0 / r;
            assert!(
                (got - want).abs() < 0.04 * want,
                "Coulomb far field at r = {r}: {got} vs {want}"
            );
        }
        // Yukawa shape: W(r₁)/W(r₂) ≈ (e^{−r₁/a}/r₁)/(e^{−r₂/a}/r₂)
        let (w_y, out_y) = fields.solve_helmholtz(&rho, &params).unwrap();
        assert!(out_y.relative_residual <= 1e-8);
        let (r1, r2) = (1.5f64, 3.0f64);
        let g1 = probe(&w_y, [center[0] + r1, center[1], center[2]]);
        let g2 = probe(&w_y, [center[0] + r2, center[1], center[2]]);
        let want = ((-r1 / params.a).exp() / r1) / ((-r2 / params.a).exp() / r2);
        let got = g1 / g2;
        assert!(
            (got / want - 1.0).abs() < 0.15,
            "Yukawa shape ratio {got} vs {want}"
        );
        // zero source → zero fields
        let zero = vec![0.0; grid.n_interior()];
        let (w0, _) = fields.solve_poisson(&zero, &params, CoulombBc::Zero).unwrap();
        assert!(w0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gaussian_kinetic_energy_matches_analytic() {
        // Box half-extent 3.8 fm ≈ 3.2 widths keeps wall truncation well
        // below the 1e-3 tolerance.
        let (grid, part, blocks) = closed_3d(20, 0.4, 3);
        let w = 1.2;
        let phi = centered_gaussian(&grid, &part, w);
        let params = BknParams::default();
        let rho = density(&[phi.clone()], params.degeneracy);
        let zeros = vec![0.0; grid.n_interior()];
        let mut p_free = params.clone();
        p_free.t0 = 0.0;
        p_free.t3 = 0.0;
        let e = total_energy(&grid, &blocks, &[phi], &rho, &zeros, &zeros, &p_free);
        let want = params.degeneracy * H2M * 3.0 / (2.0 * w * w);
        assert!(
            (e / want - 1.0).abs() < 1e-3,
            "kinetic energy {e} vs analytic {want}"
        );
    }

    #[test]
    fn boost_preserves_norm_and_shifts_momentum() {
        let (grid, part, _blocks) = closed_3d(14, 0.4, 3);
        let w = 1.1;
        let phi = centered_gaussian(&grid, &part, w);
        let h3 = grid.h.powi(3);
        let norm0: f64 = phi.iter().map(|z| z.norm_sqr()).sum::<f64>() * h3;
        // discrete momentum along z via central differences
        let mom = |phi: &CVec| -> f64 {
            let mut acc = c(0.0, 0.0);
            let n = grid.n_interior();
            for lex in 0..n {
                let mi = grid.multi_index(lex);
                let mut up = mi;
                up[2] += 1;
                let mut dn = mi;
                dn[2] -= 1;
                if !grid.contains(&up) || !grid.contains(&dn) {
                    continue;
                }
                let d = (phi[part.canon_of_lex[grid.lex_index(&up)]]
                    - phi[part.canon_of_lex[grid.lex_index(&dn)]])
                    / c(2.0 * grid.h, 0.0);
                acc += phi[part.canon_of_lex[lex]].conj() * c(0.0, -1.0) * d;
            }
            (acc * c(h3, 0.0)).re
        };
        let p_before = mom(&phi);
        let mut boosted = vec![phi];
        let k = 0.5;
        boost(&mut boosted, &grid, &part, [0.0, 0.0, k]);
        let norm1: f64 = boosted[0].iter().map(|z| z.norm_sqr()).sum::<f64>() * h3;
        assert!((norm1 - norm0).abs() < 1e-13);
        let shift = mom(&boosted[0]) - p_before;
        // ⟨−i∂_z⟩ of e^{ikz}φ under central differences is sin(kh)/h times
        // the neighbor correlation Σφ(z)φ(z+h) ≈ 1 − h²/(4w²), so both
        // factors enter the discretization bound.
        let kh = k * grid.h;
        let bound = kh * kh / 6.0 + grid.h * grid.h / (4.0 * w * w) + 0.01;
        assert!(
            (shift / k - 1.0).abs() < bound,
            "momentum shift {shift} vs k = {k} (bound {bound})"
        );
    }

    #[test]
    fn ground_state_flows_downhill_and_conserves_in_real_time() {
        let (grid, part, mut blocks) = closed_3d(10, 0.5, 3);
        let fields = FieldSolver::new(&grid, &part, &blocks.stencil).unwrap();
        let params = BknParams::default();
        let mut center = [0.0; 3];
        for d in 0..3 {
            center[d] = 0.5 * (grid.box_lo[d] + grid.box_hi[d]);
        }
        let cfg = GroundStateConfig {
            seeds: vec![OrbitalSeed { center, width: 1.1, orbitals: 1 }],
            tau: 5e-4,
            mixing: 0.3,
            tol: 2e-4,
            max_iter: 3000,
            coulomb_bc: CoulombBc::Monopole,
        };
        let gs = static_ground_state(&grid, &part, &mut blocks, &fields, &params, &cfg).unwrap();
        assert!((nucleon_number(&grid, &gs.rho) - 4.0).abs() < 1e-9);
        assert!(orthonormality_defect(&gs.orbitals, grid.h.powi(3)) < 1e-10);
        // gradient flow: strided energy trace non-increasing (small tolerance
        // for the density relaxation)
        let stride = 50;
        for w in gs.energy_trace.windows(2 * stride).step_by(stride) {
            let (a, b) = (w[0], w[2 * stride - 1]);
            assert!(b <= a + 1e-3 * a.abs().max(1.0), "energy rose: {a} → {b}");
        }
        // short Dirichlet real-time run conserves N and E
        let opts = TdhfOptions {
            dt: 1e-3,
            steps: 40,
            sample_stride: 40,
            coulomb_bc: CoulombBc::Monopole,
            ..TdhfOptions::default()
        };
        let out = tdhf_propagate(
            &grid,
            &part,
            &mut blocks,
            &fields,
            &params,
            None,
            &gs.orbitals,
            &opts,
            None,
        )
        .unwrap();
        let n0 = out.series.nucleons[0];
        let e0 = out.series.energy[0];
        let nf = *out.series.nucleons.last().unwrap();
        let ef = *out.series.energy.last().unwrap();
        assert!((nf / n0 - 1.0).abs() < 1e-10, "nucleon drift {}", nf / n0 - 1.0);
        assert!(((ef - e0) / e0.abs()).abs() < 1e-6, "energy drift {}", (ef - e0) / e0);
    }

    #[test]
    fn embedding_roundtrips() {
        let st = Stencil::from_registry(103).unwrap();
        let h = 0.5;
        let small = build_grid(3, &[h; 3], &[6.0 * h; 3], h, &st).unwrap();
        let big = build_grid(3, &[-h; 3], &[8.0 * h; 3], h, &st).unwrap();
        let sp = partition_sides(&small, &st, &[[true, true]; 3]).unwrap();
        let bp = partition_sides(&big, &st, &[[false, false]; 3]).unwrap();
        let map = embedding_map(&small, &sp, &big, &bp).unwrap();
        let v = CVec::from_shape_fn(small.n_interior(), |i| c(i as f64, -(i as f64)));
        let emb = embed_vector(&map, big.n_interior(), &v);
        let back = restrict_field(&map, &emb.iter().map(|z| z.re).collect::<Vec<_>>());
        for i in 0..small.n_interior() {
            assert_eq!(back[i], i as f64);
        }
        // coordinates coincide
        for lex in 0..small.n_interior() {
            let s_xyz = small.coord(&small.multi_index(lex));
            let bi = map[sp.canon_of_lex[lex]];
            let blex = bp.interior_ids[bi];
            let b_xyz = big.coord(&big.multi_index(blex));
            for d in 0..3 {
                assert!((s_xyz[d] - b_xyz[d]).abs() < 1e-12);
            }
        }
    }
}
