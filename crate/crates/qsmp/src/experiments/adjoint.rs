use qsmp_core::adjoint::solve_adjoints;
use qsmp_core::example::analytic_adjoint_residual;
use qsmp_core::models::ExampleModel;
use qsmp_core::Paths;
use serde_json::json;

use super::{basis, build_candidate, RunError, Stage};
use crate::config::{ExperimentConfig, ModelSpec};
use crate::output::{Cell, Check, CsvTable, ExperimentOutput};

fn mean_cell(paths: &Paths, k: usize, c: usize) -> Cell {
    if k < paths.n_times() {
        let v = paths.component(k, c);
        (v.iter().sum::<f64>() / v.len() as f64).into()
    } else {
        Cell::Empty
    }
}

fn deviation(paths: &Paths, target: f64) -> f64 {
    paths.as_slice().iter().fold(0.0_f64, |m, v| m.max((v - target).abs()))
}

pub(super) fn run(config: &ExperimentConfig) -> Result<ExperimentOutput, RunError> {
    let model = config.model.build();
    let c = build_candidate(config, model.as_ref())?;
    let grid = c.w.grid();
    let adj = solve_adjoints(model.as_ref(), &c.traj, &c.w, &basis(config)).stage("adjoint solver")?;

    // Path means of every component of p, q, P, Q; q and Q stop one step early.
    let groups: [(&str, &Paths); 4] = [("p", &adj.p), ("q", &adj.q), ("P", &adj.p2), ("Q", &adj.q2)];
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend(groups.iter().flat_map(|(name, paths)| (0..paths.dim()).map(move |i| format!("{name}_{i}_mean"))));
    let mut table = CsvTable::new("adjoint_means", "first- and second-order adjoint processes along the candidate", &header);
    for k in 0..grid.n_times() {
        let mut row = vec![k.into(), grid.time(k).into()];
        for (_, paths) in groups {
            row.extend((0..paths.dim()).map(|i| mean_cell(paths, k, i)));
        }
        table.push(row);
    }

    let finite = [&adj.p, &adj.q, &adj.p2, &adj.q2].iter().all(|p| p.as_slice().iter().all(|v| v.is_finite()));
    let asymmetry = adj.max_asymmetry();
    let mut checks = vec![
        Check::gating("finite adjoints", "adjoint BSDEs solved on the candidate", finite, json!({ "sup_abs_p": adj.sup_abs_p })),
        Check::gating(
            "symmetric second-order adjoint",
            "P and Q are symmetric",
            asymmetry <= 1e-10,
            json!({ "max_asymmetry": asymmetry }),
        ),
    ];
    if matches!(config.model, ModelSpec::Example | ModelSpec::ExampleHull) && config.candidate.control == [0.0] {
        let devs = json!({
            "p_minus_one": deviation(&adj.p, 1.0),
            "q": deviation(&adj.q, 0.0),
            "P": deviation(&adj.p2, 0.0),
            "Q": deviation(&adj.q2, 0.0),
        });
        let pass = devs.as_object().is_some_and(|m| m.values().all(|v| v.as_f64().is_some_and(|x| x <= 0.05)));
        checks.push(Check::gating("analytic adjoints", "(p, q) = (1, 0) and (P, Q) = (0, 0) along the zero control", pass, devs));
        let example = match config.model {
            ModelSpec::ExampleHull => ExampleModel::convex_hull(),
            _ => ExampleModel::default(),
        };
        let residual = analytic_adjoint_residual(&example, &c.traj, grid).stage("analytic residual")?;
        checks.push(Check::gating(
            "analytic residual",
            "(p, q) = (1, 0) solves the first-order adjoint equation",
            residual <= 1e-12,
            json!({ "residual": residual }),
        ));
    }

    Ok(ExperimentOutput {
        checks,
        data: json!({
            "p0": adj.first_report.y0,
            "p0_std_error": adj.first_report.y0_std_error,
            "P0": adj.second_report.y0,
            "P0_std_error": adj.second_report.y0_std_error,
            "sup_abs_p": adj.sup_abs_p,
        }),
        tables: vec![table],
    })
}
