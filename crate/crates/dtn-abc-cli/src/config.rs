//! Experiment configuration: JSON schema, validation, canonical form, and
//! the bundled benchmark configs.
//!
//! Validation never stops at the first problem — it enumerates every
//! violation found so a config can be fixed in one pass.  The canonical form
//! is the serde serialization of the parsed struct (stable field order,
//! shortest float representation); `serialize(parse(text))` is idempotent.

use dtn_abc::abc::AbcVariant;
use dtn_abc::lattice::Stencil;
use dtn_abc::tdhf::{BknParams, CoulombBc};
use dtn_abc::{Error, Result};
use serde::{Deserialize, Serialize};

/// Which physical system a run simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// Free 1D Schrödinger packet (closed-form reference available).
    #[serde(rename = "free_1d")]
    Free1d,
    /// Free 3D Schrödinger packet.
    #[serde(rename = "free_3d")]
    Free3d,
    /// Time-dependent Hartree–Fock with the BKN interaction.
    #[serde(rename = "tdhf")]
    Tdhf,
}

impl Model {
    /// Spatial dimension of the model.
    pub fn dim(self) -> usize {
        match self {
            Model::Free1d => 1,
            Model::Free3d | Model::Tdhf => 3,
        }
    }

    /// Display name (matches the serialized form).
    pub fn name(self) -> &'static str {
        match self {
            Model::Free1d => "free_1d",
            Model::Free3d => "free_3d",
            Model::Tdhf => "tdhf",
        }
    }
}

/// Box geometry and spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Lower box corner, one entry per axis.
    pub box_lo: Vec<f64>,
    /// Upper box corner.
    pub box_hi: Vec<f64>,
    /// Uniform spacing.
    pub h: f64,
}

/// Boundary-condition selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BcSpec {
    /// Hard truncation: homogeneous Dirichlet on every wall.
    Dirichlet,
    /// Rational absorbing boundary condition from DtN kernel samples.
    Abc {
        /// Rational order `m` ∈ {0, 1, 2}.
        order: usize,
        /// Construction variant (must agree with `order`).
        variant: VariantSpec,
        /// Laplace sample nodes `s > 0`.
        nodes: Vec<f64>,
    },
    /// Complex absorbing potential with quadratic ramps (1D baseline).
    Cap {
        /// Ramp strength η.
        eta: f64,
        /// Physical window `(lo, hi)`; ramps rise outside it.
        inner: [f64; 2],
    },
}

/// ABC construction variant; serialized names match
/// [`AbcVariant::name`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    /// `R(s) = K(s₀)`.
    Zeroth,
    /// Order-1 limit construction (Theorem-2 form).
    FirstLimit,
    /// Order-1 two-point interpolation.
    FirstTwopoint,
    /// Order-1 value+derivative match.
    FirstMoment,
    /// Order-2 four-point interpolation.
    SecondFourpoint,
    /// Order-2 shared-scalar-pole fit.
    SecondSharedpole,
}

impl VariantSpec {
    /// Map to the library variant tag.
    pub fn to_variant(self) -> AbcVariant {
        match self {
            VariantSpec::Zeroth => AbcVariant::Zeroth,
            VariantSpec::FirstLimit => AbcVariant::FirstLimit,
            VariantSpec::FirstTwopoint => AbcVariant::FirstTwopoint,
            VariantSpec::FirstMoment => AbcVariant::FirstMoment,
            VariantSpec::SecondFourpoint => AbcVariant::SecondFourpoint,
            VariantSpec::SecondSharedpole => AbcVariant::SecondSharedPole,
        }
    }

    /// Rational order the variant produces.
    pub fn order(self) -> usize {
        match self {
            VariantSpec::Zeroth => 0,
            VariantSpec::FirstLimit | VariantSpec::FirstTwopoint | VariantSpec::FirstMoment => 1,
            VariantSpec::SecondFourpoint | VariantSpec::SecondSharedpole => 2,
        }
    }

    /// Acceptable node counts: `(min, exact?)`.
    fn node_arity(self) -> (usize, Option<usize>) {
        match self {
            VariantSpec::Zeroth | VariantSpec::FirstLimit | VariantSpec::FirstMoment => {
                (1, Some(1))
            }
            VariantSpec::FirstTwopoint => (2, Some(2)),
            VariantSpec::SecondFourpoint => (4, Some(4)),
            VariantSpec::SecondSharedpole => (4, None),
        }
    }

    /// Whether the DtN samples must carry the derivative block `K′(s)`.
    pub fn needs_derivative(self) -> bool {
        matches!(self, VariantSpec::FirstMoment)
    }
}

/// Time integrator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorSpec {
    /// Crank–Nicolson (banded + bordered in 1D, dense fallback for small
    /// systems).
    Cn,
    /// Explicit four-term Taylor expansion of the exponential.
    Taylor4,
}

/// Initial free-packet parameters (ignored by TDHF runs, which seed from
/// `tdhf.seeds`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Boost wavenumber along the first axis.
    #[serde(default)]
    pub k0: f64,
    /// Packet center, one entry per axis (defaults to the origin).
    #[serde(default)]
    pub xc: Vec<f64>,
}

/// Reference solution the run compares against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// No reference (error columns are NaN).
    None,
    /// Closed-form free-packet solution (free models only).
    Analytic,
    /// Dirichlet run on an enlarged box, restricted to the original window.
    LargeDomain {
        /// Linear box enlargement factor (> 1).
        factor: f64,
    },
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::None
    }
}

/// BKN interaction parameters (defaults are the standard set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BknSpec {
    /// Skyrme contact strength t₀ [MeV·fm³].
    pub t0: f64,
    /// Skyrme density-dependent strength t₃ [MeV·fm⁶].
    pub t3: f64,
    /// Yukawa strength V₀ [MeV].
    pub v0: f64,
    /// Yukawa range a [fm].
    pub a: f64,
    /// Coulomb coupling e² [MeV·fm].
    pub e2: f64,
    /// Spin–isospin degeneracy g.
    pub degeneracy: f64,
}

impl Default for BknSpec {
    fn default() -> Self {
        let p = BknParams::default();
        BknSpec {
            t0: p.t0,
            t3: p.t3,
            v0: p.v0,
            a: p.a,
            e2: p.e2,
            degeneracy: p.degeneracy,
        }
    }
}

impl BknSpec {
    /// Convert to library parameters.
    pub fn to_params(&self) -> BknParams {
        BknParams {
            t0: self.t0,
            t3: self.t3,
            v0: self.v0,
            a: self.a,
            e2: self.e2,
            degeneracy: self.degeneracy,
        }
    }
}

/// One Gaussian fragment seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    /// Fragment center [fm].
    pub center: [f64; 3],
    /// Gaussian width [fm].
    pub width: f64,
    /// Spatial orbitals (1 = s shell, 4 = s+p shells).
    pub orbitals: usize,
}

/// Imaginary-time ground-state controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundStateSpec {
    /// Imaginary-time step τ [MeV⁻¹].
    pub tau: f64,
    /// Density relaxation weight α ∈ (0, 1].
    pub mixing: f64,
    /// Convergence threshold on single-particle energy changes [MeV].
    pub tol: f64,
    /// Iteration budget.
    pub max_iter: usize,
}

/// Coulomb wall treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoulombBcSpec {
    /// Homogeneous Dirichlet wall values.
    Zero,
    /// Monopole `e²·q_p/r` wall values from the instantaneous charge.
    Monopole,
}

impl CoulombBcSpec {
    /// Convert to the library enum.
    pub fn to_bc(self) -> CoulombBc {
        match self {
            CoulombBcSpec::Zero => CoulombBc::Zero,
            CoulombBcSpec::Monopole => CoulombBc::Monopole,
        }
    }
}

fn default_coulomb() -> CoulombBcSpec {
    CoulombBcSpec::Monopole
}

fn default_max_scf() -> usize {
    5
}

fn default_scf_tol() -> f64 {
    1e-8
}

/// Mean-field run section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdhfSpec {
    /// Interaction parameters.
    #[serde(default)]
    pub params: BknSpec,
    /// Fragment seeds for the static solve.
    pub seeds: Vec<SeedSpec>,
    /// Imaginary-time controls.
    pub ground_state: GroundStateSpec,
    /// Boost wavevector applied to every orbital after the static solve.
    #[serde(default)]
    pub boost: [f64; 3],
    /// Coulomb wall treatment.
    #[serde(default = "default_coulomb")]
    pub coulomb_bc: CoulombBcSpec,
    /// Self-consistency corrector cap per step.
    #[serde(default = "default_max_scf")]
    pub max_scf: usize,
    /// Density-change tolerance ending the corrector loop.
    #[serde(default = "default_scf_tol")]
    pub scf_tol: f64,
}

fn default_stride() -> usize {
    1
}

fn default_quad() -> usize {
    128
}

/// One experiment: geometry, boundary condition, integrator, schedule,
/// initial data, and reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Physical system.
    pub model: Model,
    /// Box and spacing.
    pub grid: GridSpec,
    /// Stencil registry id (1–4 for −½Δ, 101–104 for the TDHF kinetic term).
    pub stencil_id: u32,
    /// Per-axis `[low, high]` open flags; open sides carry the DtN boundary.
    pub open_sides: Vec<[bool; 2]>,
    /// Boundary condition.
    pub bc: BcSpec,
    /// Time integrator (TDHF always steps with Taylor-4 inside the
    /// self-consistency loop).
    pub integrator: IntegratorSpec,
    /// Step size.
    pub dt: f64,
    /// Final time; the step count is `t_end/dt` (validated integral).
    pub t_end: f64,
    /// Observable sampling stride.
    #[serde(default = "default_stride")]
    pub output_stride: usize,
    /// Steps at which to write field snapshots.
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
    /// Free-packet initial data.
    #[serde(default)]
    pub initial: InitialSpec,
    /// Reference solution.
    #[serde(default)]
    pub reference: ReferenceSpec,
    /// Brillouin-zone quadrature resolution for 3D Green's tables.
    #[serde(default = "default_quad")]
    pub quad_points: usize,
    /// Kernel cache directory (relative paths resolve under `--out`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
    /// Mean-field section (required iff `model` is `tdhf`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tdhf: Option<TdhfSpec>,
}

/// Bundled benchmark configs, resolvable by bare name in `--config`.
pub const BUNDLED: &[(&str, &str)] = &[
    ("bench_1d_dirichlet", include_str!("../configs/bench_1d_dirichlet.json")),
    ("bench_1d_zeroth", include_str!("../configs/bench_1d_zeroth.json")),
    ("bench_1d_order1", include_str!("../configs/bench_1d_order1.json")),
    ("bench_1d_order2", include_str!("../configs/bench_1d_order2.json")),
    ("bench_1d_cap", include_str!("../configs/bench_1d_cap.json")),
    ("bench_3d_order1", include_str!("../configs/bench_3d_order1.json")),
    ("bench_3d_order2", include_str!("../configs/bench_3d_order2.json")),
    ("bench_tdhf_dirichlet", include_str!("../configs/bench_tdhf_dirichlet.json")),
    ("bench_tdhf_abc", include_str!("../configs/bench_tdhf_abc.json")),
];

/// Resolve `--config`: a bundled name (with or without `.json`) or a path.
pub fn load_config_text(arg: &str) -> Result<String> {
    let key = arg.strip_suffix(".json").unwrap_or(arg);
    for (name, text) in BUNDLED {
        if *name == key {
            return Ok((*text).to_string());
        }
    }
    std::fs::read_to_string(arg).map_err(|e| {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        Error::Validation(format!(
            "cannot read config '{arg}': {e}; bundled names are [{}]",
            names.join(", ")
        ))
    })
}

/// Parse a config from JSON text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    serde_json::from_str(text).map_err(|e| Error::Validation(format!("config parse: {e}")))
}

/// Canonical JSON form (stable field order, shortest floats, trailing
/// newline).
pub fn canonical_json(cfg: &ExperimentConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

/// Number of time steps, from the validated `t_end`/`dt` pair.
pub fn step_count(cfg: &ExperimentConfig) -> usize {
    (cfg.t_end / cfg.dt).round() as usize
}

/// Validate a parsed config, enumerating every violation found.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let mut v: Vec<String> = Vec::new();
    let dim = cfg.model.dim();

    // Geometry.
    if cfg.grid.box_lo.len() != dim {
        v.push(format!(
            "grid.box_lo has {} entries; model {} is {dim}-dimensional",
            cfg.grid.box_lo.len(),
            cfg.model.name()
        ));
    }
    if cfg.grid.box_hi.len() != dim {
        v.push(format!(
            "grid.box_hi has {} entries; model {} is {dim}-dimensional",
            cfg.grid.box_hi.len(),
            cfg.model.name()
        ));
    }
    if !(cfg.grid.h > 0.0) {
        v.push(format!("grid.h must be positive, got {}", cfg.grid.h));
    }
    for d in 0..cfg.grid.box_lo.len().min(cfg.grid.box_hi.len()) {
        let (lo, hi) = (cfg.grid.box_lo[d], cfg.grid.box_hi[d]);
        if !(hi > lo) {
            v.push(format!("grid axis {d}: box_hi ({hi}) must exceed box_lo ({lo})"));
        } else if cfg.grid.h > 0.0 {
            let n = (hi - lo) / cfg.grid.h;
            if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
                v.push(format!(
                    "grid axis {d}: extent {} is not an integer multiple of h = {}",
                    hi - lo,
                    cfg.grid.h
                ));
            }
        }
    }
    if cfg.open_sides.len() != dim {
        v.push(format!(
            "open_sides has {} axes; model {} is {dim}-dimensional",
            cfg.open_sides.len(),
            cfg.model.name()
        ));
    }

    // Stencil registry and model agreement.
    match Stencil::from_registry(cfg.stencil_id) {
        Err(_) => v.push(format!(
            "stencil_id {} is not in the registry (1–4: −½Δ; 101–104: TDHF kinetic)",
            cfg.stencil_id
        )),
        Ok(_) => {
            let tdhf_stencil = cfg.stencil_id >= 100;
            if (cfg.model == Model::Tdhf) != tdhf_stencil {
                v.push(format!(
                    "stencil_id {} has the wrong kinetic prefactor for model {} \
                     (use 1–4 for free models, 101–104 for tdhf)",
                    cfg.stencil_id,
                    cfg.model.name()
                ));
            }
        }
    }

    // Schedule.
    if !(cfg.dt > 0.0) {
        v.push(format!("dt must be positive, got {}", cfg.dt));
    }
    if cfg.t_end < 0.0 {
        v.push(format!("t_end must be non-negative, got {}", cfg.t_end));
    }
    if cfg.dt > 0.0 && cfg.t_end >= 0.0 {
        let steps = cfg.t_end / cfg.dt;
        if (steps - steps.round()).abs() > 1e-6 {
            v.push(format!(
                "t_end = {} is not an integer number of dt = {} steps",
                cfg.t_end, cfg.dt
            ));
        }
    }
    if cfg.output_stride == 0 {
        v.push("output_stride must be ≥ 1".to_string());
    }
    if cfg.quad_points < 8 {
        v.push(format!("quad_points must be ≥ 8, got {}", cfg.quad_points));
    }

    // Boundary condition.
    match &cfg.bc {
        BcSpec::Dirichlet => {}
        BcSpec::Abc { order, variant, nodes } => {
            if *order > 2 {
                v.push(format!("bc.order must be 0, 1, or 2, got {order}"));
            }
            if variant.order() != *order {
                v.push(format!(
                    "bc.variant {:?} builds an order-{} condition, config says order {}",
                    variant,
                    variant.order(),
                    order
                ));
            }
            let (min, exact) = variant.node_arity();
            if let Some(exact) = exact {
                if nodes.len() != exact {
                    v.push(format!(
                        "bc.variant {:?} takes exactly {exact} node(s), got {}",
                        variant,
                        nodes.len()
                    ));
                }
            } else if nodes.len() < min {
                v.push(format!(
                    "bc.variant {:?} needs at least {min} nodes, got {}",
                    variant,
                    nodes.len()
                ));
            }
            for s in nodes {
                if !(*s > 0.0) || !s.is_finite() {
                    v.push(format!("bc.nodes must be positive and finite, got {s}"));
                }
            }
            let mut sorted = nodes.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                v.push(format!("bc.nodes must be distinct, got {nodes:?}"));
            }
            if cfg.open_sides.iter().all(|[lo, hi]| !lo && !hi) {
                v.push("bc is abc but every side is closed (no Γ layer)".to_string());
            }
            if cfg.model == Model::Tdhf && *order != 1 {
                v.push(format!(
                    "tdhf propagation couples first-order conditions only, got order {order}"
                ));
            }
        }
        BcSpec::Cap { eta, inner } => {
            if cfg.model != Model::Free1d {
                v.push(format!(
                    "bc cap is the 1D baseline; model is {}",
                    cfg.model.name()
                ));
            }
            if !(*eta > 0.0) {
                v.push(format!("bc.eta must be positive, got {eta}"));
            }
            if inner[0] >= inner[1] {
                v.push(format!("bc.inner window is empty: ({}, {})", inner[0], inner[1]));
            }
            if cfg.model == Model::Free1d
                && !cfg.grid.box_lo.is_empty()
                && !cfg.grid.box_hi.is_empty()
                && (inner[0] < cfg.grid.box_lo[0] || inner[1] > cfg.grid.box_hi[0])
            {
                v.push(format!(
                    "bc.inner window ({}, {}) must lie inside the box [{}, {}]",
                    inner[0], inner[1], cfg.grid.box_lo[0], cfg.grid.box_hi[0]
                ));
            }
            if cfg.open_sides.iter().any(|[lo, hi]| *lo || *hi) {
                v.push("cap runs on a closed (Dirichlet-walled) box; open_sides must be false"
                    .to_string());
            }
        }
    }

    // Initial data.
    if cfg.model == Model::Tdhf {
        if cfg.initial.k0 != 0.0 || !cfg.initial.xc.is_empty() {
            v.push("tdhf takes initial data from tdhf.seeds/boost; leave initial empty"
                .to_string());
        }
    } else if !cfg.initial.xc.is_empty() && cfg.initial.xc.len() != dim {
        v.push(format!(
            "initial.xc has {} entries; model {} is {dim}-dimensional",
            cfg.initial.xc.len(),
            cfg.model.name()
        ));
    }

    // Reference.
    match &cfg.reference {
        ReferenceSpec::None => {}
        ReferenceSpec::Analytic => {
            if cfg.model == Model::Tdhf {
                v.push("reference analytic exists for the free models only".to_string());
            }
        }
        ReferenceSpec::LargeDomain { factor } => {
            if !(*factor > 1.0) {
                v.push(format!("reference.factor must exceed 1, got {factor}"));
            }
        }
    }

    // Mean-field section.
    match (&cfg.model, &cfg.tdhf) {
        (Model::Tdhf, None) => v.push("model tdhf requires a tdhf section".to_string()),
        (Model::Tdhf, Some(t)) => {
            if t.seeds.is_empty() {
                v.push("tdhf.seeds must not be empty".to_string());
            }
            for (i, s) in t.seeds.iter().enumerate() {
                if !(s.width > 0.0) {
                    v.push(format!("tdhf.seeds[{i}].width must be positive, got {}", s.width));
                }
                if s.orbitals != 1 && s.orbitals != 4 {
                    v.push(format!(
                        "tdhf.seeds[{i}].orbitals must be 1 or 4, got {}",
                        s.orbitals
                    ));
                }
            }
            if !(t.ground_state.tau > 0.0) {
                v.push(format!(
                    "tdhf.ground_state.tau must be positive, got {}",
                    t.ground_state.tau
                ));
            }
            if !(t.ground_state.mixing > 0.0 && t.ground_state.mixing <= 1.0) {
                v.push(format!(
                    "tdhf.ground_state.mixing must be in (0, 1], got {}",
                    t.ground_state.mixing
                ));
            }
            if t.ground_state.max_iter == 0 {
                v.push("tdhf.ground_state.max_iter must be ≥ 1".to_string());
            }
            if !(t.params.a > 0.0) {
                v.push(format!("tdhf.params.a must be positive, got {}", t.params.a));
            }
            if !(t.params.degeneracy > 0.0) {
                v.push(format!(
                    "tdhf.params.degeneracy must be positive, got {}",
                    t.params.degeneracy
                ));
            }
            if t.max_scf == 0 {
                v.push("tdhf.max_scf must be ≥ 1".to_string());
            }
            if !(t.scf_tol > 0.0) {
                v.push(format!("tdhf.scf_tol must be positive, got {}", t.scf_tol));
            }
            if cfg.integrator != IntegratorSpec::Taylor4 {
                v.push("tdhf steps with taylor4 inside the corrector loop; set integrator \
                        to taylor4"
                    .to_string());
            }
        }
        (_, Some(_)) => {
            v.push(format!("model {} does not take a tdhf section", cfg.model.name()));
        }
        (_, None) => {}
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "{} violation(s):\n  - {}",
            v.len(),
            v.join("\n  - ")
        )))
    }
}
