//! End-to-end checks on the scalar example with `b = 0`, `sigma = u`,
//! `f = g(z) + u^2`, `Phi = arctan` and `U = {0, 1}`, whose optimal control
//! is `u = 0` with state `(0, 0, 0)` and adjoints `(p, q, P, Q) = (1, 0, 0, 0)`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::adjoint::{assemble_first_order, solve_adjoints, AdjointBundle};
use crate::bsde::{solve_bsde_lsmc, ControlledTrajectory, LsmcConfig, SolverReport};
use crate::error::{invalid, Result};
use crate::model::{ControlSystem, SystemDerivatives};
use crate::models::ExampleModel;
use crate::path_engine::{generate_brownian, simulate_forward_sde, BrownianEnsemble, ControlProcess, FlowCoefficients};
use crate::quadrature::gauss_legendre_16;
use crate::regression::BasisConfig;
use crate::smp::{check_global_smp, check_local_smp, local_smp_gradient, LocalSmpReport, SmpViolationReport};
use crate::stats::Estimate;
use crate::{Paths, TimeGrid};

/// Worst margins of the structural conditions; each is `>= 0` when the
/// condition holds (strict ones `> 0`).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExampleConditionReport {
    /// `-|Phi(0)|`.
    pub terminal_at_zero: f64,
    /// `min Phi'`.
    pub slope_lower: f64,
    /// `1 - max Phi'`.
    pub slope_upper: f64,
    /// `1 - max |Phi''|`, strict.
    pub curvature: f64,
    /// `-|g(0)|`.
    pub generator_at_zero: f64,
    /// `g(1)`, strict.
    pub generator_at_one: f64,
    /// `-g'(0)`, strict.
    pub generator_slope_at_zero: f64,
    /// `1/2 - max_{[0, 1]} |g|`.
    pub generator_bound: f64,
    /// `min g(Phi'(x) u) + (1 + Phi''(x) / 2) u^2` over the grid and `u != 0`, strict.
    pub integrand_nonzero_control: f64,
    /// `max |integrand|` at `u = 0`.
    pub integrand_zero_control: f64,
    pub pass: bool,
}

/// Evaluates the conditions on `resolution` points of `[-x_range, x_range]`
/// and of `[0, 1]`.
pub fn validate_example_conditions(model: &ExampleModel, resolution: usize, x_range: f64) -> ExampleConditionReport {
    let resolution = resolution.max(2);
    let grid = |lo: f64, hi: f64| (0..resolution).map(move |i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64);
    let (mut slope_min, mut slope_max, mut curv_max) = (f64::INFINITY, f64::NEG_INFINITY, 0.0_f64);
    let (mut integrand_min, mut integrand_zero) = (f64::INFINITY, 0.0_f64);
    let controls: Vec<f64> = model.domain.test_points(resolution).into_iter().map(|u| u[0]).collect();
    for x in grid(-x_range, x_range) {
        let (d1, d2) = (model.terminal_derivative(x), model.terminal_second_derivative(x));
        slope_min = slope_min.min(d1);
        slope_max = slope_max.max(d1);
        curv_max = curv_max.max(d2.abs());
        for &u in &controls {
            let value = model.g.value(d1 * u) + (1.0 + 0.5 * d2) * u * u;
            if u == 0.0 {
                integrand_zero = integrand_zero.max(value.abs());
            } else {
                integrand_min = integrand_min.min(value);
            }
        }
    }
    let g_max = grid(0.0, 1.0).fold(0.0_f64, |m, z| m.max(model.g.value(z).abs()));
    let mut report = ExampleConditionReport {
        terminal_at_zero: -model.terminal(&[0.0]).abs(),
        slope_lower: slope_min,
        slope_upper: 1.0 - slope_max,
        curvature: 1.0 - curv_max,
        generator_at_zero: -model.g.value(0.0).abs(),
        generator_at_one: model.g.value(1.0),
        generator_slope_at_zero: -model.g.derivative(0.0),
        generator_bound: 0.5 - g_max,
        integrand_nonzero_control: if integrand_min.is_finite() { integrand_min } else { 0.0 },
        integrand_zero_control: integrand_zero,
        pass: false,
    };
    report.pass = report.terminal_at_zero == 0.0
        && report.slope_lower >= 0.0
        && report.slope_upper >= 0.0
        && report.curvature > 0.0
        && report.generator_at_zero == 0.0
        && report.generator_at_one > 0.0
        && report.generator_slope_at_zero > 0.0
        && report.generator_bound >= 0.0
        && report.integrand_nonzero_control > 0.0
        && report.integrand_zero_control == 0.0;
    report
}

/// Candidate state and cost of one control.
#[derive(Debug, Clone, PartialEq)]
pub struct CostRun {
    pub trajectory: ControlledTrajectory,
    pub report: SolverReport,
    pub cost: Estimate,
}

/// `J(u) = Y_0^u` by forward simulation and LSMC.
pub fn evaluate_cost(
    model: &ExampleModel,
    control: &ControlProcess,
    w: &BrownianEnsemble,
    lsmc: &LsmcConfig,
    z_truncation: f64,
) -> Result<CostRun> {
    if (0..control.n_steps()).any(|k| (0..control.n_paths()).any(|p| !model.domain.contains(control.at(p, k)))) {
        return Err(invalid("control leaves the example's domain"));
    }
    let x = simulate_forward_sde(model, &[0.0], control, w)?;
    let (trajectory, report) = solve_bsde_lsmc(model, &x, control, w, lsmc, z_truncation)?;
    let cost = Estimate {
        mean: report.y0[0],
        std_error: report.y0_std_error[0],
    };
    Ok(CostRun {
        trajectory,
        report,
        cost,
    })
}

/// [`evaluate_cost`] of a constant control on a fresh ensemble.
pub fn evaluate_constant_cost(
    model: &ExampleModel,
    value: f64,
    n_paths: usize,
    grid: TimeGrid,
    seed: u64,
    lsmc: &LsmcConfig,
) -> Result<(CostRun, BrownianEnsemble)> {
    let w = generate_brownian(n_paths, grid, 1, seed)?;
    let control = ControlProcess::constant(model.domain.clone(), n_paths, grid, &[value])?;
    let truncation = model.constants().default_z_truncation(grid.horizon());
    Ok((evaluate_cost(model, &control, &w, lsmc, truncation)?, w))
}

/// `J(u)` through the change of measure `dP^u = E(alpha . W) dP` with
/// `alpha_s = int_0^1 g'(Phi'(X) u + theta (Z - Phi'(X) u)) dtheta`:
/// `J(u) = E[int_0^T L_s {g(Phi'(X_s) u_s) + (1 + Phi''(X_s) / 2) u_s^2} ds]`,
/// `L` the stochastic exponential, integrated on the grid.
pub fn girsanov_cost(model: &ExampleModel, run: &CostRun, w: &BrownianEnsemble) -> Estimate {
    let grid = w.grid();
    let dt = grid.dt();
    let traj = &run.trajectory;
    let samples: Vec<f64> = (0..traj.n_paths())
        .map(|path| {
            let (mut log_weight, mut total) = (0.0, 0.0);
            for k in 0..grid.n_steps() {
                let x = traj.x.scalar(path, k);
                let u = traj.u.at(path, k)[0];
                let z = traj.z.scalar(path, k);
                let slope = model.terminal_derivative(x);
                let base = slope * u;
                let integrand = model.g.value(base) + (1.0 + 0.5 * model.terminal_second_derivative(x)) * u * u;
                total += log_weight.exp() * integrand * dt;
                let alpha = gauss_legendre_16(|theta| model.g.derivative(base + theta * (z - base)));
                log_weight += alpha * w.increment(path, k)[0] - 0.5 * alpha * alpha * dt;
            }
            total
        })
        .collect();
    Estimate::from_samples(&samples)
}

/// Adjoints along the simulated optimal candidate and their deviation from
/// `(p, q, P, Q) = (1, 0, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleAdjointReport {
    pub adjoints: AdjointBundle,
    pub p_deviation: f64,
    pub q_deviation: f64,
    pub p2_deviation: f64,
    pub q2_deviation: f64,
    /// Residual of `(p, q) = (1, 0)` substituted into the first-order data.
    pub analytic_residual: f64,
}

impl ExampleAdjointReport {
    pub fn within(&self, tol: f64) -> bool {
        self.p_deviation <= tol && self.q_deviation <= tol && self.p2_deviation <= tol && self.q2_deviation <= tol
    }
}

/// Residual of `p = 1`, `q = 0` in the first-order adjoint equation along
/// the trajectory: `|Phi_x - 1| + |A 1 + f_x|` (the `q` terms vanish).
pub fn analytic_adjoint_residual(model: &ExampleModel, traj: &ControlledTrajectory, grid: TimeGrid) -> Result<f64> {
    let data = assemble_first_order(model, traj, grid)?;
    let mut worst = data.terminal.as_slice().iter().fold(0.0_f64, |m, v| m.max((v - 1.0).abs()));
    let (mut a, mut beta, mut c) = ([0.0], [0.0], [0.0]);
    for k in 0..grid.n_steps() {
        for path in 0..traj.n_paths() {
            data.coefficients.eval(path, k, &mut a, &mut beta, &mut c);
            worst = worst.max((a[0] + data.driver.scalar(path, k)).abs());
        }
    }
    Ok(worst)
}

pub fn example_adjoints(
    model: &ExampleModel,
    run: &CostRun,
    w: &BrownianEnsemble,
    basis: &BasisConfig,
) -> Result<ExampleAdjointReport> {
    let adjoints = solve_adjoints(model, &run.trajectory, w, basis)?;
    let deviation = |paths: &Paths, target: f64| paths.as_slice().iter().fold(0.0_f64, |m, v| m.max((v - target).abs()));
    Ok(ExampleAdjointReport {
        p_deviation: deviation(&adjoints.p, 1.0),
        q_deviation: deviation(&adjoints.q, 0.0),
        p2_deviation: deviation(&adjoints.p2, 0.0),
        q2_deviation: deviation(&adjoints.q2, 0.0),
        analytic_residual: analytic_adjoint_residual(model, &run.trajectory, w.grid())?,
        adjoints,
    })
}

/// `H(u) - H(0) = g(u) + u^2` at the analytic adjoints, per control.
pub fn analytic_hamiltonian_gaps(model: &ExampleModel) -> Vec<(f64, f64)> {
    model
        .domain
        .test_points(2)
        .into_iter()
        .map(|u| (u[0], model.g.value(u[0]) + u[0] * u[0]))
        .collect()
}

/// Analytic gaps together with the simulated global check.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GlobalSmpConfirmation {
    pub analytic_gaps: Vec<(f64, f64)>,
    pub simulated: SmpViolationReport,
    pub pass: bool,
}

pub fn confirm_global_smp(
    model: &ExampleModel,
    run: &CostRun,
    adjoints: &AdjointBundle,
    grid: TimeGrid,
    tolerance: f64,
) -> Result<GlobalSmpConfirmation> {
    let analytic_gaps = analytic_hamiltonian_gaps(model);
    let controls = model.domain.test_points(2);
    let simulated = check_global_smp(model, &run.trajectory, adjoints, grid, &controls, tolerance, 32)?;
    let pass = analytic_gaps.iter().all(|(_, gap)| *gap >= 0.0) && simulated.is_empty();
    Ok(GlobalSmpConfirmation {
        analytic_gaps,
        simulated,
        pass,
    })
}

/// Local condition on the convex hull `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvexHullReport {
    pub candidate: f64,
    /// `[g'(Z) p + q + 2 u_bar] (1 - u_bar)` at the analytic trajectory.
    pub analytic_left_side: f64,
    pub simulated: LocalSmpReport,
    /// Whether the local condition fails, i.e. the candidate is not optimal on the hull.
    pub violated: bool,
}

/// Evaluates the local condition for the constant candidate `candidate` on
/// the convex hull. The analytic side uses `(X, Y, Z) = (0, 0, 0)` and
/// `(p, q) = (1, 0)`; the simulated side runs the pipeline with the given
/// ensemble.
pub fn convex_hull_counterexample(
    candidate: f64,
    w: &BrownianEnsemble,
    lsmc: &LsmcConfig,
    basis: &BasisConfig,
    tolerance: f64,
) -> Result<ConvexHullReport> {
    let model = ExampleModel::convex_hull();
    let grid = w.grid();
    let analytic_left_side = (model.g.derivative(0.0) + 2.0 * candidate) * (1.0 - candidate);
    let control = ControlProcess::constant(model.domain.clone(), w.n_paths(), grid, &[candidate])?;
    let truncation = model.constants().default_z_truncation(grid.horizon());
    let run = evaluate_cost(&model, &control, w, lsmc, truncation)?;
    let adjoints = solve_adjoints(&model, &run.trajectory, w, basis)?;
    let gradient = local_smp_gradient(&model, &run.trajectory, &adjoints, grid)?;
    let simulated = check_local_smp(&run.trajectory, &gradient, &[vec![1.0]], tolerance)?;
    Ok(ConvexHullReport {
        candidate,
        analytic_left_side,
        violated: !simulated.pass,
        simulated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_example_satisfies_its_conditions() {
        let report = validate_example_conditions(&ExampleModel::default(), 4001, 20.0);
        assert!(report.pass, "{report:?}");
        // Phi'(0) = 1 attains the upper bound.
        assert_eq!(report.slope_upper, 0.0);
        assert_eq!(report.generator_at_one, 0.5);
        assert_eq!(report.generator_slope_at_zero, 0.5);
    }

    #[test]
    fn one_sided_slopes_of_generator_agree_at_zero() {
        let g = ExampleModel::default().g;
        let h = 1e-7;
        let right = (g.value(h) - g.value(0.0)) / h;
        let left = (g.value(0.0) - g.value(-h)) / h;
        assert!((right + 0.5).abs() < 1e-6 && (left + 0.5).abs() < 1e-6);
    }

    #[test]
    fn analytic_gaps_are_zero_and_three_halves() {
        let gaps = analytic_hamiltonian_gaps(&ExampleModel::default());
        assert_eq!(gaps, vec![(0.0, 0.0), (1.0, 1.5)]);
    }

    #[test]
    fn zero_control_cost_is_exactly_zero() {
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let (run, _) = evaluate_constant_cost(&ExampleModel::default(), 0.0, 500, grid, 3, &LsmcConfig::default()).unwrap();
        assert!(run.trajectory.x.max_abs() == 0.0);
        assert!(run.trajectory.y.max_abs() <= 1e-10 && run.trajectory.z.max_abs() <= 1e-10);
        assert!(run.cost.mean.abs() <= 1e-10);
    }

    #[test]
    fn controls_outside_the_domain_are_rejected() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let model = ExampleModel::default();
        let w = generate_brownian(3, grid, 1, 0).unwrap();
        let half = ControlProcess::constant(ExampleModel::convex_hull().domain, 3, grid, &[0.5]).unwrap();
        assert!(evaluate_cost(&model, &half, &w, &LsmcConfig::default(), 10.0).is_err());
    }

    #[test]
    fn unit_candidate_has_vanishing_hull_factor() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let w = generate_brownian(400, grid, 1, 4).unwrap();
        let report = convex_hull_counterexample(1.0, &w, &LsmcConfig::default(), &BasisConfig::default(), 1e-9).unwrap();
        assert_eq!(report.analytic_left_side, 0.0);
        assert_eq!(report.simulated.worst_margin, 0.0);
        assert!(!report.violated);
    }
}
