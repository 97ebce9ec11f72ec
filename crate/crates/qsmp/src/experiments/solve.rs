use qsmp_core::bsde::{solve_linear_bsde_weighted, verify_apriori_bounds, ScalarLinearBsde, WeightedOptions};
use qsmp_core::linalg;
use serde_json::json;

use super::{basis, build_candidate, moment, RunError, Stage};
use crate::config::{ExperimentConfig, ModelSpec};
use crate::output::{Check, CsvTable, ExperimentOutput};

pub(super) fn run(config: &ExperimentConfig) -> Result<ExperimentOutput, RunError> {
    let model = config.model.build();
    let c = build_candidate(config, model.as_ref())?;
    let grid = c.w.grid();
    let d = model.noise_dim();

    let mut table = CsvTable::new(
        "bsde_solution",
        "least-squares Monte Carlo solution along the candidate",
        &["step", "time", "y_mean", "y_std_error", "z_norm_mean"],
    );
    for k in 0..grid.n_times() {
        let y = moment(&c.traj.y, k, 0);
        let z_norm = if k < grid.n_steps() {
            let total: f64 = (0..c.traj.z.n_paths()).map(|p| linalg::norm(c.traj.z.at(p, k))).sum();
            (total / c.traj.z.n_paths() as f64).into()
        } else {
            crate::output::Cell::Empty
        };
        table.push(vec![k.into(), grid.time(k).into(), y.mean.into(), y.std_error.into(), z_norm]);
    }

    let y0 = c.report.y0[0];
    let se = c.report.y0_std_error[0];
    let mut checks = vec![Check::gating(
        "finite solution",
        "least-squares Monte Carlo backward induction",
        c.traj.y.as_slice().iter().chain(c.traj.z.as_slice()).all(|v| v.is_finite()),
        json!({ "y0": y0, "y0_std_error": se }),
    )];

    let apriori = verify_apriori_bounds(&c.traj, model.as_ref(), &c.w, &basis(config), None).stage("a-priori bounds")?;
    checks.push(Check::informational(
        "a-priori bound",
        "sup |Y| plus the BMO norm of Z.W below the model's surrogate bound",
        !apriori.exceeded,
        serde_json::to_value(apriori).unwrap_or_default(),
    ));

    if let ModelSpec::ScalarLinear(params) = &config.model {
        let linear = params.model();
        let np = c.w.n_paths();
        let x = &c.traj.x;
        let terminal = (0..np).map(|p| linear.terminal_at(x.scalar(p, grid.n_steps()))).collect();
        let data = ScalarLinearBsde::from_fn(np, grid.n_steps(), d, terminal, |p, k, l, m, f| {
            let xv = x.scalar(p, k);
            *l = linear.lambda_at(xv);
            m[0] = linear.mu_at(xv);
            *f = linear.phi_at(xv);
        });
        let weighted = solve_linear_bsde_weighted(&data, &c.w, x, &WeightedOptions { basis: basis(config), mu_bound: None })
            .stage("weighted linear solver")?;
        let (wy, wse) = (weighted.report.y0[0], weighted.report.y0_std_error[0]);
        let combined = se.hypot(wse);
        checks.push(Check::gating(
            "solvers agree",
            "regression and weighted-representation solvers estimate the same Y0",
            (y0 - wy).abs() <= 3.0 * combined,
            json!({ "lsmc": y0, "lsmc_std_error": se, "weighted": wy, "weighted_std_error": wse }),
        ));
        if params.is_constant() {
            let (l, f, xi, t) = (params.lambda[0], params.phi[0], params.terminal[0], grid.horizon());
            let exact = if l == 0.0 { xi + f * t } else { xi * (l * t).exp() + f * ((l * t).exp() - 1.0) / l };
            let tol = 0.01 * exact.abs();
            checks.push(Check::gating(
                "closed form",
                "constant coefficients: Y0 = xi e^(lambda T) + phi (e^(lambda T) - 1) / lambda",
                (y0 - exact).abs() <= tol && (wy - exact).abs() <= tol,
                json!({ "exact": exact, "lsmc": y0, "weighted": wy }),
            ));
        }
    }
    if matches!(config.model, ModelSpec::Example | ModelSpec::ExampleHull) && config.candidate.control == [0.0] {
        checks.push(Check::gating(
            "zero cost of zero control",
            "degenerate data give Y = Z = 0 exactly",
            y0.abs() <= 1e-8,
            json!({ "y0": y0 }),
        ));
    }

    Ok(ExperimentOutput {
        checks,
        data: json!({
            "y0": y0,
            "y0_std_error": se,
            "clip_rate": c.report.clip_rate,
            "z_truncation": c.z_truncation,
            "max_fixed_point_iterations_used": c.report.max_iterations_used,
        }),
        tables: vec![table],
    })
}
