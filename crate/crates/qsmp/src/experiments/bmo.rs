use qsmp_core::bmo::{
    critical_exponent, energy_inequality_report, estimate_bmo2_norm, john_nirenberg_report, psi, reverse_holder_constant, Conditioner,
    InequalityCheck, MartingalePathSet,
};
use qsmp_core::path_engine::generate_brownian;
use qsmp_core::regression::BasisConfig;
use qsmp_core::{Paths, TimeGrid};
use rayon::prelude::*;
use serde_json::json;

use super::{RunError, Stage};
use crate::config::ExperimentConfig;
use crate::output::{Check, CsvTable, ExperimentOutput};

/// Bounded integrands `h(t, W_t)` with their sup bound.
const ENSEMBLES: [(&str, f64); 3] = [("constant 0.8", 0.8), ("cos W", 1.0), ("0.6 tanh W + 0.3 sin t", 0.9)];

fn integrand(index: usize, t: f64, w: f64) -> f64 {
    match index {
        0 => 0.8,
        1 => w.cos(),
        _ => 0.6 * w.tanh() + 0.3 * t.sin(),
    }
}

struct EnsembleResult {
    estimated_norm: f64,
    norm_bound: f64,
    energy: Vec<(u32, InequalityCheck)>,
    john_nirenberg: InequalityCheck,
    delta: f64,
}

fn run_ensemble(config: &ExperimentConfig, index: usize, grid: TimeGrid) -> qsmp_core::Result<EnsembleResult> {
    let np = config.grid.n_paths;
    let w = generate_brownian(np, grid, 1, config.seed.wrapping_add(index as u64))?;
    let bm = w.brownian_paths();
    let h = Paths::from_fn(np, grid.n_steps(), 1, |p, k, out| out[0] = integrand(index, grid.time(k), bm.scalar(p, k)));
    let m = MartingalePathSet::from_integrand(&h, &w)?;
    // E[int_t^T h^2 | F_t] <= sup h^2 (T - t).
    let norm_bound = ENSEMBLES[index].1 * grid.horizon().sqrt();
    let estimated_norm = estimate_bmo2_norm(&m, &Conditioner::on(&bm, BasisConfig::default()));
    let energy = config
        .bmo
        .energy_orders
        .iter()
        .map(|n| energy_inequality_report(&m, *n, norm_bound).map(|c| (*n, c)))
        .collect::<qsmp_core::Result<Vec<_>>>()?;
    let delta = config.bmo.delta_fraction / (norm_bound * norm_bound);
    let jn = john_nirenberg_report(&m, delta, norm_bound, &Conditioner::on(&bm, BasisConfig::default()))?;
    Ok(EnsembleResult {
        estimated_norm,
        norm_bound,
        energy,
        john_nirenberg: *jn.at(0),
        delta,
    })
}

pub(super) fn run(config: &ExperimentConfig) -> Result<ExperimentOutput, RunError> {
    let b = &config.bmo;
    let mut checks = Vec::new();

    let mut roundtrip = CsvTable::new(
        "bmo_roundtrip",
        "psi and the critical exponent are mutually inverse",
        &["norm", "critical_exponent", "psi_of_exponent", "abs_error"],
    );
    let count = b.roundtrip_points;
    let (lo, hi) = (b.norm_low.ln(), b.norm_high.ln());
    let mut worst = 0.0_f64;
    for i in 0..count {
        let frac = if count > 1 { i as f64 / (count - 1) as f64 } else { 0.0 };
        let norm = (lo + (hi - lo) * frac).exp();
        let p = critical_exponent(norm);
        let back = psi(p).stage("psi")?;
        let err = (back - norm).abs();
        worst = worst.max(err);
        roundtrip.push(vec![norm.into(), p.into(), back.into(), err.into()]);
    }
    checks.push(Check::gating(
        "critical exponent round trip",
        "psi(critical_exponent(n)) = n",
        worst <= 1e-10,
        json!({ "points": count, "max_abs_error": worst, "range": [b.norm_low, b.norm_high] }),
    ));

    let k = reverse_holder_constant(1.5, 0.0).stage("reverse Hoelder constant")?;
    checks.push(Check::gating(
        "reverse Hoelder constant",
        "K(3/2, 0) = 4",
        (k - 4.0).abs() <= 1e-12,
        json!({ "value": k }),
    ));

    let grid = config.grid.time_grid().stage("grid")?;
    let results = (0..ENSEMBLES.len())
        .into_par_iter()
        .map(|i| run_ensemble(config, i, grid))
        .collect::<qsmp_core::Result<Vec<_>>>()
        .stage("martingale ensembles")?;

    let mut table = CsvTable::new(
        "bmo_inequalities",
        "energy and John-Nirenberg inequalities on bounded-integrand martingales",
        &["ensemble", "inequality", "order", "lhs", "lhs_std_error", "bound", "margin", "pass"],
    );
    let mut ensembles = Vec::new();
    for ((name, _), r) in ENSEMBLES.iter().zip(&results) {
        for (n, c) in &r.energy {
            table.push(vec![(*name).into(), "energy".into(), (*n).into(), c.lhs.into(), c.lhs_std_error.into(), c.bound.into(), c.margin.into(), c.passed.into()]);
        }
        let jn = &r.john_nirenberg;
        table.push(vec![(*name).into(), "john-nirenberg".into(), 0u32.into(), jn.lhs.into(), jn.lhs_std_error.into(), jn.bound.into(), jn.margin.into(), jn.passed.into()]);
        checks.push(Check::gating(
            &format!("energy inequality, {name}"),
            "E[<M>_T^n] <= n! |M|_BMO2^(2n)",
            r.energy.iter().all(|(_, c)| c.passed),
            json!({ "norm_bound": r.norm_bound, "orders": r.energy.iter().map(|(n, c)| json!({ "n": n, "lhs": c.lhs, "bound": c.bound })).collect::<Vec<_>>() }),
        ));
        checks.push(Check::gating(
            &format!("John-Nirenberg inequality, {name}"),
            "E[exp(delta <M>_T)] <= 1 / (1 - delta |M|_BMO2^2) at t = 0",
            jn.passed,
            json!({ "delta": r.delta, "lhs": jn.lhs, "bound": jn.bound }),
        ));
        ensembles.push(json!({
            "name": name,
            "norm_bound": r.norm_bound,
            "estimated_norm": r.estimated_norm,
        }));
    }

    Ok(ExperimentOutput {
        checks,
        data: json!({ "reverse_holder_constant": k, "ensembles": ensembles }),
        tables: vec![roundtrip, table],
    })
}
