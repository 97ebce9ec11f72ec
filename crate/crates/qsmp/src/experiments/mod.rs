//! One runner per experiment kind, plus the shared candidate pipeline.

mod adjoint;
mod bmo;
mod example;
mod simulate;
mod smp;
mod solve;
mod spike;

use qsmp_core::bsde::{solve_bsde_lsmc, ControlledTrajectory, LsmcConfig, SolverReport};
use qsmp_core::path_engine::{generate_brownian, simulate_forward_sde, BrownianEnsemble, ControlProcess};
use qsmp_core::regression::BasisConfig;
use qsmp_core::stats::Estimate;
use qsmp_core::{Paths, TimeGrid};

use crate::config::{DynModel, ExperimentConfig, ExperimentKind};
use crate::output::ExperimentOutput;

/// A pipeline failure with the stage it came from.
#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct RunError {
    pub stage: &'static str,
    #[source]
    pub source: qsmp_core::Error,
}

pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError>;
}

impl<T> Stage<T> for qsmp_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError { stage, source })
    }
}

/// Runs the experiment of `config.kind`. `jobs` caps the worker threads;
/// results do not depend on it.
pub fn run(config: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutput, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .expect("thread pool");
    log::info!(
        "{} with {} paths x {} steps, seed {}, {} threads",
        config.kind,
        config.grid.n_paths,
        config.grid.n_steps,
        config.seed,
        pool.current_num_threads()
    );
    let output = pool.install(|| match config.kind {
        ExperimentKind::Simulate => simulate::run(config),
        ExperimentKind::SolveBsde => solve::run(config),
        ExperimentKind::Adjoint => adjoint::run(config),
        ExperimentKind::Spike => spike::run(config),
        ExperimentKind::CheckSmp => smp::run(config),
        ExperimentKind::Example => example::run(config),
        ExperimentKind::BmoSuite => bmo::run(config),
    })?;
    for check in output.checks.iter().filter(|c| !c.pass) {
        log::warn!("check failed: {} ({})", check.name, if check.gating { "gating" } else { "informational" });
    }
    Ok(output)
}

pub(crate) fn lsmc_config(config: &ExperimentConfig) -> LsmcConfig {
    LsmcConfig {
        basis: basis(config),
        z_truncation: config.solver.z_truncation,
        max_fixed_point_iterations: config.solver.max_fixed_point_iterations,
        ..LsmcConfig::default()
    }
}

pub(crate) fn basis(config: &ExperimentConfig) -> BasisConfig {
    BasisConfig {
        degree: config.solver.degree,
        ridge: config.solver.ridge,
    }
}

pub(crate) fn z_truncation(config: &ExperimentConfig, model: &DynModel, grid: TimeGrid) -> f64 {
    config
        .solver
        .z_truncation
        .unwrap_or_else(|| model.constants().default_z_truncation(grid.horizon()))
}

/// The configured candidate: noise, constant control, state and `(Y, Z)`.
pub(crate) struct Candidate {
    pub w: BrownianEnsemble,
    pub traj: ControlledTrajectory,
    pub report: SolverReport,
    pub z_truncation: f64,
}

pub(crate) fn build_candidate(config: &ExperimentConfig, model: &DynModel) -> Result<Candidate, RunError> {
    let grid = config.grid.time_grid().stage("grid")?;
    let np = config.grid.n_paths;
    let w = generate_brownian(np, grid, model.noise_dim(), config.seed).stage("brownian ensemble")?;
    let control = ControlProcess::constant(model.control_domain(), np, grid, &config.candidate.control).stage("candidate control")?;
    let x = simulate_forward_sde(model, &config.candidate.x0, &control, &w).stage("forward simulation")?;
    let z_truncation = z_truncation(config, model, grid);
    let (traj, report) = solve_bsde_lsmc(model, &x, &control, &w, &lsmc_config(config), z_truncation).stage("lsmc solver")?;
    Ok(Candidate {
        w,
        traj,
        report,
        z_truncation,
    })
}

/// Mean and standard error of component `c` over paths at time index `k`.
pub(crate) fn moment(paths: &Paths, k: usize, c: usize) -> Estimate {
    Estimate::from_samples(&paths.component(k, c))
}

pub(crate) fn estimate_json(e: &Estimate) -> serde_json::Value {
    serde_json::json!({ "mean": e.mean, "std_error": e.std_error })
}
