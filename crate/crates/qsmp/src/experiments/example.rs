use qsmp_core::example::{
    confirm_global_smp, convex_hull_counterexample, evaluate_cost, example_adjoints, girsanov_cost, validate_example_conditions,
};
use qsmp_core::models::ExampleModel;
use qsmp_core::path_engine::{generate_brownian, ControlProcess};
use serde_json::json;

use super::{basis, estimate_json, lsmc_config, z_truncation, RunError, Stage};
use crate::config::ExperimentConfig;
use crate::output::{Check, CsvTable, ExperimentOutput};

const HULL_TOLERANCE: f64 = 0.05;

pub(super) fn run(config: &ExperimentConfig) -> Result<ExperimentOutput, RunError> {
    let model = ExampleModel::default();
    let grid = config.grid.time_grid().stage("grid")?;
    let np = config.grid.n_paths;
    let lsmc = lsmc_config(config);
    let basis = basis(config);
    let w = generate_brownian(np, grid, 1, config.seed).stage("brownian ensemble")?;
    let truncation = z_truncation(config, &model, grid);
    let mut checks = Vec::new();

    let conditions = validate_example_conditions(&model, 4001, 20.0);
    checks.push(Check::gating(
        "structural conditions",
        "Phi(0) = 0, 0 <= Phi' <= 1, |Phi''| < 1, g(0) = 0, g(1) > 0, g'(0) < 0, |g| <= 1/2, positive cost integrand",
        conditions.pass,
        serde_json::to_value(&conditions).unwrap_or_default(),
    ));

    let constant = |v: f64| ControlProcess::constant(model.domain.clone(), np, grid, &[v]);
    let zero = evaluate_cost(&model, &constant(0.0).stage("zero control")?, &w, &lsmc, truncation).stage("cost of zero control")?;
    let one = evaluate_cost(&model, &constant(1.0).stage("unit control")?, &w, &lsmc, truncation).stage("cost of unit control")?;
    checks.push(Check::gating(
        "optimal cost",
        "J(0) = 0 exactly for the optimal control",
        zero.cost.mean.abs() <= 1e-8,
        json!({ "j0": zero.cost.mean }),
    ));
    checks.push(Check::gating(
        "suboptimal cost",
        "J(1) > 0 by more than three standard errors",
        one.cost.mean > 3.0 * one.cost.std_error,
        estimate_json(&one.cost),
    ));

    let reweighted = girsanov_cost(&model, &one, &w);
    let combined = one.cost.std_error.hypot(reweighted.std_error);
    checks.push(Check::gating(
        "change-of-measure cost",
        "J(1) from the reweighted path functional agrees with the regression value",
        (one.cost.mean - reweighted.mean).abs() <= 3.0 * combined,
        json!({ "lsmc": estimate_json(&one.cost), "reweighted": estimate_json(&reweighted) }),
    ));
    let reweighted_zero = girsanov_cost(&model, &zero, &w);

    let adj = example_adjoints(&model, &zero, &w, &basis).stage("adjoints of zero control")?;
    checks.push(Check::gating(
        "analytic adjoints",
        "(p, q) = (1, 0) and (P, Q) = (0, 0) within 0.05",
        adj.within(0.05),
        json!({
            "p_minus_one": adj.p_deviation,
            "q": adj.q_deviation,
            "P": adj.p2_deviation,
            "Q": adj.q2_deviation,
        }),
    ));
    checks.push(Check::gating(
        "analytic adjoint residual",
        "(p, q) = (1, 0) solves the first-order adjoint equation",
        adj.analytic_residual <= 1e-12,
        json!({ "residual": adj.analytic_residual }),
    ));

    let tolerance = config.smp.tolerance.unwrap_or(0.05);
    let confirmation = confirm_global_smp(&model, &zero, &adj.adjoints, grid, tolerance).stage("global maximum principle")?;
    let gap_one = confirmation.analytic_gaps.iter().find(|(u, _)| *u == 1.0).map(|(_, g)| *g);
    checks.push(Check::gating(
        "global maximum principle",
        "H(u) - H(0) = g(u) + u^2 >= 0 on U = {0, 1}, no simulated violations",
        confirmation.pass && gap_one == Some(1.5),
        serde_json::to_value(&confirmation).unwrap_or_default(),
    ));

    let hull = convex_hull_counterexample(0.0, &w, &lsmc, &basis, HULL_TOLERANCE).stage("convex hull at zero")?;
    let mean_gradient = hull.simulated.mean_gradient[0];
    checks.push(Check::gating(
        "convex hull counterexample",
        "on U = [0, 1] the local condition at u = 0 equals -1/2 and fails",
        hull.violated && (mean_gradient + 0.5).abs() <= HULL_TOLERANCE && hull.analytic_left_side == -0.5,
        json!({
            "analytic": hull.analytic_left_side,
            "mean_gradient": mean_gradient,
            "worst_margin": hull.simulated.worst_margin,
            "violating_cells": hull.simulated.violating_cells,
        }),
    ));
    let hull_one = convex_hull_counterexample(1.0, &w, &lsmc, &basis, HULL_TOLERANCE).stage("convex hull at one")?;
    checks.push(Check::gating(
        "convex hull factor at one",
        "the local condition at u = 1 vanishes identically",
        hull_one.analytic_left_side == 0.0 && hull_one.simulated.worst_margin == 0.0,
        json!({ "analytic": hull_one.analytic_left_side, "worst_margin": hull_one.simulated.worst_margin }),
    ));

    let mut costs = CsvTable::new("example_costs", "cost of the constant controls", &["control", "method", "estimate", "std_error"]);
    costs.push(vec![0.0.into(), "lsmc".into(), zero.cost.mean.into(), zero.cost.std_error.into()]);
    costs.push(vec![0.0.into(), "reweighted".into(), reweighted_zero.mean.into(), reweighted_zero.std_error.into()]);
    costs.push(vec![1.0.into(), "lsmc".into(), one.cost.mean.into(), one.cost.std_error.into()]);
    costs.push(vec![1.0.into(), "reweighted".into(), reweighted.mean.into(), reweighted.std_error.into()]);

    let mut gaps = CsvTable::new("example_hamiltonian_gaps", "H(u) - H(0) at the analytic adjoints", &["control", "gap"]);
    for (u, g) in &confirmation.analytic_gaps {
        gaps.push(vec![(*u).into(), (*g).into()]);
    }

    Ok(ExperimentOutput {
        checks,
        data: json!({
            "j0": estimate_json(&zero.cost),
            "j1": estimate_json(&one.cost),
            "j1_reweighted": estimate_json(&reweighted),
            "z_truncation": truncation,
            "p0": adj.adjoints.first_report.y0,
            "P0": adj.adjoints.second_report.y0,
        }),
        tables: vec![costs, gaps],
    })
}
