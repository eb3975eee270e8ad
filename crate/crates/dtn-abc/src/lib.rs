//! Absorbing boundary conditions for time-dependent Schrödinger-type
//! equations on truncated finite-difference grids.
//!
//! The library discretizes `i ∂φ/∂t = H φ` on a uniform grid, truncates the
//! lattice to a box, and closes the box with a rational absorbing boundary
//! condition derived from the discrete Dirichlet-to-Neumann (DtN) map of the
//! potential-free exterior.  The pipeline:
//!
//! 1. [`lattice`] — grids, interior/Γ/Σ index partitions, sparse Hamiltonian
//!    blocks.
//! 2. [`greens`] — lattice Green's functions of the free exterior (closed
//!    forms in 1D, Brillouin-zone quadrature tables in 3D).
//! 3. [`dtn`] — the DtN kernel `K(s)` via a boundary-element identity, with a
//!    truncated-exterior oracle for cross-validation.
//! 4. [`abc`] — rational approximations `R_{m,m}(s) ≈ K(s)` of orders 0–2,
//!    realized as auxiliary linear ODEs, plus stability certificates.
//! 5. [`propagate`] — Crank–Nicolson and Taylor-4 integrators for the
//!    ABC-augmented system, exact references, CAP baseline, observables.
//! 6. [`tdhf`] — time-dependent Hartree-Fock with Skyrme contact terms and
//!    Yukawa/Coulomb fields, sharing the same boundary machinery.
//! 7. [`formats`] — binary kernel/table/coefficient caches and CSV output.

// Force linkage of the system BLAS backing ndarray's matrix products.
extern crate blas_src;

pub mod abc;
pub mod band;
pub mod dtn;
pub mod error;
pub mod formats;
pub mod greens;
pub mod lattice;
pub mod linalg;
pub mod optim;
pub mod propagate;
pub mod tdhf;

pub use error::{Error, Result};
