use qsmp_core::path_engine::{generate_brownian, simulate_forward_sde, ControlProcess};
use qsmp_core::stats::{self, Estimate};
use serde_json::json;

use super::{estimate_json, moment, RunError, Stage};
use crate::config::ExperimentConfig;
use crate::output::{Check, CsvTable, ExperimentOutput};

const SNAPSHOT_PATHS: usize = 8;

pub(super) fn run(config: &ExperimentConfig) -> Result<ExperimentOutput, RunError> {
    let model = config.model.build();
    let grid = config.grid.time_grid().stage("grid")?;
    let np = config.grid.n_paths;
    let w = generate_brownian(np, grid, model.noise_dim(), config.seed).stage("brownian ensemble")?;
    let control = ControlProcess::constant(model.control_domain(), np, grid, &config.candidate.control).stage("candidate control")?;
    let x = simulate_forward_sde(model.as_ref(), &config.candidate.x0, &control, &w).stage("forward simulation")?;

    let mut states = CsvTable::new(
        "state_moments",
        "forward state under the candidate control",
        &["step", "time", "component", "mean", "std_error", "min", "max"],
    );
    for k in 0..grid.n_times() {
        for c in 0..model.state_dim() {
            let values = x.component(k, c);
            let e = Estimate::from_samples(&values);
            let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
            states.push(vec![k.into(), grid.time(k).into(), c.into(), e.mean.into(), e.std_error.into(), lo.into(), hi.into()]);
        }
    }

    // W_T ~ N(0, T) componentwise.
    let bm = w.brownian_paths();
    let last = grid.n_steps();
    let horizon = grid.horizon();
    let mut checks = Vec::new();
    let mut noise = Vec::new();
    for i in 0..model.noise_dim() {
        let terminal = bm.component(last, i);
        let e = Estimate::from_samples(&terminal);
        let var = stats::sample_variance(&terminal, e.mean);
        let var_se = horizon * (2.0 / (np as f64 - 1.0)).sqrt();
        let pass = e.mean.abs() <= 4.0 * e.std_error && (var - horizon).abs() <= 4.0 * var_se;
        checks.push(Check::gating(
            &format!("terminal Brownian moments, noise {i}"),
            "Brownian increments with mean zero and variance dt",
            pass,
            json!({ "mean": e.mean, "std_error": e.std_error, "variance": var, "variance_std_error": var_se, "horizon": horizon }),
        ));
        noise.push(json!({ "component": i, "terminal_mean": e.mean, "terminal_variance": var }));
    }
    let finite = x.as_slice().iter().all(|v| v.is_finite());
    checks.push(Check::gating("finite state", "forward Euler-Maruyama scheme", finite, json!({ "max_abs": x.max_abs() })));

    let mut snapshot = CsvTable::new(
        "brownian_snapshot",
        "Brownian increments of the leading paths",
        &["path", "step", "coordinate", "value"],
    );
    for p in 0..np.min(SNAPSHOT_PATHS) {
        for k in 0..grid.n_steps() {
            for (i, v) in w.increment(p, k).iter().enumerate() {
                snapshot.push(vec![p.into(), k.into(), i.into(), (*v).into()]);
            }
        }
    }

    let terminal: Vec<_> = (0..model.state_dim()).map(|c| estimate_json(&moment(&x, last, c))).collect();
    Ok(ExperimentOutput {
        checks,
        data: json!({ "terminal_state": terminal, "noise": noise }),
        tables: vec![states, snapshot],
    })
}
