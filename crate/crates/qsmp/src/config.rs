//! Experiment configuration: a TOML document merged over per-kind defaults.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! name = "benchmark"
//! discount = 0.1
//!
//! [grid]
//! n_paths = 20000
//! n_steps = 512
//! ```

use std::fmt;

use qsmp_core::model::{ControlDomain, SystemDerivatives};
use qsmp_core::models::{BenchmarkModel, CoupledSmoothModel, ExampleModel, ScalarLinearModel};
use qsmp_core::TimeGrid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    SolveBsde,
    Adjoint,
    Spike,
    CheckSmp,
    Example,
    BmoSuite,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Simulate,
        Self::SolveBsde,
        Self::Adjoint,
        Self::Spike,
        Self::CheckSmp,
        Self::Example,
        Self::BmoSuite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::SolveBsde => "solve-bsde",
            Self::Adjoint => "adjoint",
            Self::Spike => "spike",
            Self::CheckSmp => "check-smp",
            Self::Example => "example",
            Self::BmoSuite => "bmo-suite",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub model: ModelSpec,
    pub candidate: CandidateSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    pub spike: SpikeSection,
    pub smp: SmpSection,
    pub bmo: BmoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum ModelSpec {
    /// Scalar example with `U = {0, 1}`.
    Example,
    /// Scalar example on the convex hull `[0, 1]`.
    ExampleHull,
    Benchmark(BenchmarkParams),
    ScalarLinear(ScalarLinearParams),
    Coupled(CoupledParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkParams {
    pub drift_rate: f64,
    pub vol_rate: f64,
    pub discount: f64,
    pub z_weight: f64,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        let m = BenchmarkModel::default();
        Self {
            drift_rate: m.drift_rate,
            vol_rate: m.vol_rate,
            discount: m.discount,
            z_weight: m.z_weight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalarLinearParams {
    pub drift_rate: f64,
    pub vol_level: f64,
    pub vol_rate: f64,
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
    pub phi: [f64; 2],
    pub terminal: [f64; 4],
}

impl Default for ScalarLinearParams {
    fn default() -> Self {
        Self {
            drift_rate: 0.0,
            vol_level: 1.0,
            vol_rate: 0.0,
            lambda: [0.3, 0.0],
            mu: [0.2, 0.0],
            phi: [0.5, 0.0],
            terminal: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupledParams {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub control_dim: usize,
    /// Seed of the random coefficients.
    pub coefficient_seed: u64,
}

impl Default for CoupledParams {
    fn default() -> Self {
        Self {
            state_dim: 2,
            noise_dim: 2,
            control_dim: 1,
            coefficient_seed: 1,
        }
    }
}

/// A concrete model behind a trait object.
pub type DynModel = dyn SystemDerivatives + Send + Sync;

impl ModelSpec {
    pub fn build(&self) -> Box<DynModel> {
        match self {
            Self::Example => Box::new(ExampleModel::default()),
            Self::ExampleHull => Box::new(ExampleModel::convex_hull()),
            Self::Benchmark(p) => Box::new(BenchmarkModel {
                drift_rate: p.drift_rate,
                vol_rate: p.vol_rate,
                discount: p.discount,
                z_weight: p.z_weight,
            }),
            Self::ScalarLinear(p) => Box::new(p.model()),
            Self::Coupled(p) => Box::new(CoupledSmoothModel::random(p.state_dim, p.noise_dim, p.control_dim, p.coefficient_seed)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Example => "example",
            Self::ExampleHull => "example-hull",
            Self::Benchmark(_) => "benchmark",
            Self::ScalarLinear(_) => "scalar-linear",
            Self::Coupled(_) => "coupled",
        }
    }
}

impl ScalarLinearParams {
    pub fn model(&self) -> ScalarLinearModel {
        ScalarLinearModel {
            drift_rate: self.drift_rate,
            vol_level: self.vol_level,
            vol_rate: self.vol_rate,
            lambda: self.lambda,
            mu: self.mu,
            phi: self.phi,
            terminal: self.terminal,
        }
    }

    /// Coefficients and terminal value free of the state.
    pub fn is_constant(&self) -> bool {
        self.lambda[1] == 0.0 && self.mu[1] == 0.0 && self.phi[1] == 0.0 && self.terminal[1..].iter().all(|v| *v == 0.0)
    }
}

/// Initial state and the constant candidate control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateSection {
    pub x0: Vec<f64>,
    pub control: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
}

impl GridSection {
    pub fn time_grid(&self) -> Result<TimeGrid, qsmp_core::Error> {
        TimeGrid::new(self.horizon, self.n_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub degree: usize,
    pub ridge: f64,
    /// Norm clip for `Z`; the model's default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_truncation: Option<f64>,
    pub max_fixed_point_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikeSection {
    pub t0: f64,
    /// Spike widths, each a multiple of the step.
    pub eps: Vec<f64>,
    pub replacement: Vec<f64>,
    pub first_order_tolerance: f64,
    pub second_order_tolerance: f64,
    pub ratio_spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmpSection {
    /// Violation threshold; three adjoint standard errors when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Test controls; the domain's test points when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_controls: Option<Vec<Vec<f64>>>,
    /// Test points per box axis.
    pub per_axis: usize,
    /// Random cells for the Hamiltonian identity.
    pub identity_points: usize,
    pub max_recorded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmoSection {
    pub roundtrip_points: usize,
    pub norm_low: f64,
    pub norm_high: f64,
    pub energy_orders: Vec<u32>,
    /// John-Nirenberg `delta` as a fraction of `1 / |M|^2`.
    pub delta_fraction: f64,
}

impl ExperimentConfig {
    /// Defaults for `kind`; the seed is always supplied by the caller.
    pub fn defaults(kind: ExperimentKind, seed: u64) -> Self {
        let (model, x0, n_paths, n_steps) = match kind {
            ExperimentKind::Example => (ModelSpec::Example, 0.0, 20_000, 200),
            ExperimentKind::Spike => (ModelSpec::Benchmark(BenchmarkParams::default()), 0.5, 20_000, 512),
            ExperimentKind::CheckSmp => (ModelSpec::Example, 0.0, 10_000, 100),
            ExperimentKind::Adjoint => (ModelSpec::Example, 0.0, 10_000, 100),
            ExperimentKind::SolveBsde => (ModelSpec::ScalarLinear(ScalarLinearParams::default()), 0.0, 10_000, 100),
            ExperimentKind::Simulate => (ModelSpec::Benchmark(BenchmarkParams::default()), 0.5, 10_000, 100),
            ExperimentKind::BmoSuite => (ModelSpec::Example, 0.0, 5_000, 50),
        };
        Self {
            kind,
            seed,
            output: None,
            model,
            candidate: CandidateSection {
                x0: vec![x0],
                control: vec![0.0],
            },
            grid: GridSection {
                n_paths,
                n_steps,
                horizon: 1.0,
            },
            solver: SolverSection {
                degree: 2,
                ridge: 0.0,
                z_truncation: None,
                max_fixed_point_iterations: 10,
            },
            spike: SpikeSection {
                t0: 0.5,
                eps: [64.0, 32.0, 16.0, 8.0].iter().map(|w| w / 512.0).collect(),
                replacement: vec![1.0],
                first_order_tolerance: 0.2,
                second_order_tolerance: 0.3,
                ratio_spread: 0.25,
            },
            smp: SmpSection {
                tolerance: if kind == ExperimentKind::Example { Some(0.05) } else { None },
                test_controls: None,
                per_axis: 5,
                identity_points: 1_000,
                max_recorded: 100,
            },
            bmo: BmoSection {
                roundtrip_points: 100,
                norm_low: 1e-6,
                norm_high: 2.0,
                energy_orders: vec![1, 2, 3],
                delta_fraction: 0.5,
            },
        }
    }

    /// Canonical TOML echo; parsing it back gives the same configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// Loads `text` over the defaults of its kind. `kind` and `seed` come
    /// from the command line when given; a kind in the document must agree
    /// with the subcommand, and a command-line seed takes precedence.
    pub fn load(text: &str, kind: Option<ExperimentKind>, seed: Option<u64>) -> Result<Self, ConfigError> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let doc_kind = match user.get("kind") {
            Some(v) => Some(
                ExperimentKind::deserialize(v.clone())
                    .map_err(|e| ConfigError::field("kind", e.to_string()))?,
            ),
            None => None,
        };
        let kind = match (kind, doc_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(ConfigError::field("kind", format!("document says `{b}` but the subcommand is `{a}`")));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(ConfigError::field("kind", "missing; give a subcommand or a `kind` key")),
        };
        let seed = match (seed, user.get("seed")) {
            (Some(s), _) => s,
            (None, Some(v)) => u64::deserialize(v.clone()).map_err(|e| ConfigError::field("seed", e.to_string()))?,
            (None, None) => return Err(ConfigError::field("seed", "required (in the document or via --seed)")),
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind, seed)).expect("defaults serialize");
        merge(&mut merged, user);
        merged.insert("kind".into(), toml::Value::String(kind.name().into()));
        merged.insert("seed".into(), toml::Value::Integer(seed as i64));
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut fail = |field: &str, message: String| errors.push(FieldError {
            field: field.to_string(),
            message,
        });

        let g = &self.grid;
        if g.n_paths < 2 {
            fail("grid.n_paths", format!("must be at least 2, got {}", g.n_paths));
        }
        if g.n_steps == 0 {
            fail("grid.n_steps", "must be positive".into());
        }
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            fail("grid.horizon", format!("must be positive and finite, got {}", g.horizon));
        }
        let grid = g.time_grid().ok();

        if let ModelSpec::Coupled(p) = &self.model {
            for (name, v) in [("state_dim", p.state_dim), ("noise_dim", p.noise_dim), ("control_dim", p.control_dim)] {
                if v == 0 {
                    fail(&format!("model.{name}"), "must be positive".into());
                }
            }
        }
        let model_ok = !matches!(&self.model, ModelSpec::Coupled(p) if p.state_dim == 0 || p.noise_dim == 0 || p.control_dim == 0);
        if model_ok {
            let model = self.model.build();
            let domain = model.control_domain();
            if self.candidate.x0.len() != model.state_dim() {
                fail(
                    "candidate.x0",
                    format!("has {} entries, the model has {} states", self.candidate.x0.len(), model.state_dim()),
                );
            }
            check_control(&domain, &self.candidate.control, "candidate.control", &mut fail);
            if self.kind == ExperimentKind::Spike {
                check_control(&domain, &self.spike.replacement, "spike.replacement", &mut fail);
            }
            if let Some(controls) = &self.smp.test_controls {
                for (i, u) in controls.iter().enumerate() {
                    check_control(&domain, u, &format!("smp.test_controls[{i}]"), &mut fail);
                }
            }
        }
        if self.kind == ExperimentKind::Example && !matches!(self.model, ModelSpec::Example) {
            fail("model.name", format!("the example experiment runs the `example` model, got `{}`", self.model.name()));
        }

        let s = &self.solver;
        if s.degree > 8 {
            fail("solver.degree", format!("at most 8, got {}", s.degree));
        }
        if !(s.ridge >= 0.0 && s.ridge.is_finite()) {
            fail("solver.ridge", format!("must be nonnegative, got {}", s.ridge));
        }
        if let Some(z) = s.z_truncation {
            if !(z > 0.0 && z.is_finite()) {
                fail("solver.z_truncation", format!("must be positive, got {z}"));
            }
        }
        if s.max_fixed_point_iterations == 0 {
            fail("solver.max_fixed_point_iterations", "must be positive".into());
        }

        if self.kind == ExperimentKind::Spike {
            let sp = &self.spike;
            if sp.eps.len() < 4 {
                fail("spike.eps", format!("the order fit needs at least 4 widths, got {}", sp.eps.len()));
            }
            if let Some(grid) = grid {
                if grid.steps_in(sp.t0).is_err() {
                    fail("spike.t0", format!("{} is not a grid time (dt = {})", sp.t0, grid.dt()));
                }
                for (i, e) in sp.eps.iter().enumerate() {
                    match grid.steps_in(*e) {
                        Ok(0) => fail(&format!("spike.eps[{i}]"), "must be positive".into()),
                        Ok(_) if sp.t0 + e > grid.horizon() + 1e-12 => {
                            fail(&format!("spike.eps[{i}]"), format!("window [{}, {}] leaves the horizon", sp.t0, sp.t0 + e))
                        }
                        Ok(_) => {}
                        Err(_) => fail(&format!("spike.eps[{i}]"), format!("{e} is not a multiple of dt = {}", grid.dt())),
                    }
                }
            }
            for (name, v) in [
                ("first_order_tolerance", sp.first_order_tolerance),
                ("second_order_tolerance", sp.second_order_tolerance),
                ("ratio_spread", sp.ratio_spread),
            ] {
                if !(v >= 0.0) {
                    fail(&format!("spike.{name}"), format!("must be nonnegative, got {v}"));
                }
            }
        }

        if let Some(t) = self.smp.tolerance {
            if !(t >= 0.0) {
                fail("smp.tolerance", format!("must be nonnegative, got {t}"));
            }
        }
        if self.smp.per_axis < 2 {
            fail("smp.per_axis", "must be at least 2".into());
        }

        let b = &self.bmo;
        if b.roundtrip_points == 0 {
            fail("bmo.roundtrip_points", "must be positive".into());
        }
        if !(b.norm_low > 0.0 && b.norm_low < b.norm_high && b.norm_high.is_finite()) {
            fail("bmo.norm_low", format!("need 0 < norm_low < norm_high, got {} and {}", b.norm_low, b.norm_high));
        }
        if b.energy_orders.iter().any(|n| *n == 0 || *n > 6) {
            fail("bmo.energy_orders", "orders must lie in 1..=6".into());
        }
        if !(b.delta_fraction > 0.0 && b.delta_fraction < 1.0) {
            fail("bmo.delta_fraction", format!("must lie in (0, 1), got {}", b.delta_fraction));
        }

        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Fields(errors))
        }
    }
}

fn check_control(domain: &ControlDomain, u: &[f64], field: &str, fail: &mut impl FnMut(&str, String)) {
    if u.len() != domain.dim() {
        fail(field, format!("has {} entries, the control dimension is {}", u.len(), domain.dim()));
    } else if !domain.contains(u) {
        fail(field, format!("{u:?} is outside the control domain {domain:?}"));
    }
}

/// Recursive merge of `user` into `base`. A `model` table naming another
/// model replaces the default one instead of merging into it.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => {
                let replaces = key == "model" && u.get("name").is_some_and(|n| Some(n) != b.get("name"));
                if replaces {
                    *b = u;
                } else {
                    merge(b, u);
                }
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration:{}", .0.iter().map(|e| format!("\n  {}: {}", e.field, e.message)).collect::<String>())]
    Fields(Vec<FieldError>),
}

impl ConfigError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        Self::Fields(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }

    /// Fields named in the error, for field-level reporting.
    pub fn fields(&self) -> Vec<&str> {
        match self {
            Self::Parse(_) => Vec::new(),
            Self::Fields(list) => list.iter().map(|e| e.field.as_str()).collect(),
        }
    }
}
