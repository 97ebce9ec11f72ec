use qsmp_core::adjoint::solve_adjoints;
use qsmp_core::model::ControlDomain;
use qsmp_core::smp::{check_global_smp, check_local_smp, default_smp_tolerance, local_smp_gradient, sample_hamiltonian_identity};
use serde_json::json;

use super::{basis, build_candidate, RunError, Stage};
use crate::config::ExperimentConfig;
use crate::output::{Check, CsvTable, ExperimentOutput};

fn join(u: &[f64]) -> String {
    u.iter().map(|v| crate::output::format_float(*v)).collect::<Vec<_>>().join(";")
}

pub(super) fn run(config: &ExperimentConfig) -> Result<ExperimentOutput, RunError> {
    let model = config.model.build();
    let domain = model.control_domain();
    let c = build_candidate(config, model.as_ref())?;
    let grid = c.w.grid();
    let adjoints = solve_adjoints(model.as_ref(), &c.traj, &c.w, &basis(config)).stage("adjoint solver")?;
    let tolerance = config.smp.tolerance.unwrap_or_else(|| default_smp_tolerance(&adjoints));
    let controls = config.smp.test_controls.clone().unwrap_or_else(|| domain.test_points(config.smp.per_axis));

    let global = check_global_smp(model.as_ref(), &c.traj, &adjoints, grid, &controls, tolerance, config.smp.max_recorded)
        .stage("global maximum principle")?;
    let mut table = CsvTable::new(
        "smp_violations",
        "cells where a test control lowers the Hamiltonian below the candidate",
        &["path", "step", "time", "control", "gap"],
    );
    for v in &global.violations {
        table.push(vec![v.path.into(), v.step.into(), v.time.into(), join(&v.control).into(), v.gap.into()]);
    }
    let mut checks = vec![Check::gating(
        "global maximum principle",
        "H(u) - H(u_bar) >= -tolerance at every cell and test control",
        global.is_empty(),
        json!({
            "tolerance": tolerance,
            "cells": global.cells,
            "violating_cells": global.violating_cells,
            "min_gap": global.min_gap,
            "mean_gap": global.mean_gap,
        }),
    )];

    let identity = sample_hamiltonian_identity(model.as_ref(), config.smp.identity_points, config.seed);
    checks.push(Check::gating(
        "Hamiltonian difference identity",
        "H(u) - H(u_bar) equals the auxiliary spike source",
        identity <= 1e-12,
        json!({ "points": config.smp.identity_points, "max_error": identity }),
    ));

    let mut local_json = serde_json::Value::Null;
    if matches!(domain, ControlDomain::Box { .. }) && model.control_sensitivity().is_some() {
        let gradient = local_smp_gradient(model.as_ref(), &c.traj, &adjoints, grid).stage("local gradient")?;
        let local = check_local_smp(&c.traj, &gradient, &controls, tolerance).stage("local maximum principle")?;
        checks.push(Check::gating(
            "local maximum principle",
            "<grad_u H, u - u_bar> >= -tolerance on the convex domain",
            local.pass,
            serde_json::to_value(&local).unwrap_or_default(),
        ));
        local_json = serde_json::to_value(local).unwrap_or_default();
    }

    Ok(ExperimentOutput {
        checks,
        data: json!({
            "test_controls": controls,
            "tolerance": tolerance,
            "global": {
                "cells": global.cells,
                "controls": global.controls,
                "violating_cells": global.violating_cells,
                "violation_fraction": global.violation_fraction,
                "min_gap": global.min_gap,
                "mean_gap": global.mean_gap,
            },
            "local": local_json,
            "candidate_y0": c.report.y0[0],
        }),
        tables: vec![table],
    })
}
