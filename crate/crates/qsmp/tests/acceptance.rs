//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Exits 0 after printing unless `QSMP_ACCEPTANCE_STRICT=1`, in which case
//! any failure makes the process exit 1. `QSMP_ACCEPTANCE_ONLY=5,7` runs a
//! subset.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::Matrix3;
use qsmp::{ExperimentConfig, ExperimentKind, ExperimentOutput};
use qsmp_core::bsde::{solve_multidim_linear_bsde, MultiLinearBsde};
use qsmp_core::models::{BenchmarkModel, ExampleModel};
use qsmp_core::path_engine::{generate_brownian, simulate_matrix_flow, ConstantFlowCoefficients};
use qsmp_core::regression::BasisConfig;
use qsmp_core::smp::sample_hamiltonian_identity;
use qsmp_core::{Paths, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const SEED: u64 = 17;

const ZERO_COST_TOL: f64 = 1e-8;
const SE_MULTIPLE: f64 = 3.0;
const ADJOINT_TOL: f64 = 0.05;
const SMP_TOL: f64 = 0.05;
const UNIT_GAP: f64 = 1.5;
const HULL_VALUE: f64 = -0.5;
const HULL_TOL: f64 = 0.05;
const FIRST_ORDER_WINDOW: (f64, f64) = (0.8, 1.2);
const SECOND_ORDER_WINDOW: (f64, f64) = (1.7, 2.3);
const RATIO_SPREAD: f64 = 0.25;
const CLOSED_FORM_REL: f64 = 0.01;
const DEFECT_RATIO_WINDOW: (f64, f64) = (1.5, 2.5);
const ROUNDTRIP_TOL: f64 = 1e-10;
const REVERSE_HOLDER_TOL: f64 = 1e-12;
const IDENTITY_TOL: f64 = 1e-12;
const IDENTITY_POINTS: usize = 1_000;

type SharedCriterion = fn(&ExperimentOutput) -> Verdict;
type Criterion = fn() -> Verdict;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn load(kind: ExperimentKind, toml: &str) -> ExperimentConfig {
    ExperimentConfig::load(toml, Some(kind), Some(SEED)).expect("acceptance configuration is valid")
}

fn run(kind: ExperimentKind, toml: &str) -> ExperimentOutput {
    qsmp::run(&load(kind, toml), None).expect("experiment runs")
}

fn check<'a>(out: &'a ExperimentOutput, name: &str) -> &'a qsmp::Check {
    out.checks.iter().find(|c| c.name == name).unwrap_or_else(|| panic!("no check named {name}"))
}

fn num(v: &Value, pointer: &str) -> f64 {
    v.pointer(pointer).and_then(Value::as_f64).unwrap_or(f64::NAN)
}

fn example_output() -> ExperimentOutput {
    run(
        ExperimentKind::Example,
        "[grid]\nn_paths = 20000\nn_steps = 200\nhorizon = 1.0\n[smp]\ntolerance = 0.05\n",
    )
}

fn criterion_1(out: &ExperimentOutput) -> Verdict {
    let j0 = num(&check(out, "optimal cost").detail, "/j0");
    let j1 = &check(out, "suboptimal cost").detail;
    let (mean, se) = (num(j1, "/mean"), num(j1, "/std_error"));
    Verdict::new(
        j0.abs() <= ZERO_COST_TOL && mean > SE_MULTIPLE * se,
        format!("J(0) = {j0:.3e}, J(1) = {mean:.5} +- {se:.5} ({:.1} SE)", mean / se),
    )
}

fn criterion_2(out: &ExperimentOutput) -> Verdict {
    let d = &check(out, "analytic adjoints").detail;
    let devs = ["/p_minus_one", "/q", "/P", "/Q"].map(|k| num(d, k));
    Verdict::new(
        devs.iter().all(|v| *v <= ADJOINT_TOL),
        format!("sup|p-1| = {:.4}, sup|q| = {:.4}, sup|P| = {:.4}, sup|Q| = {:.4}", devs[0], devs[1], devs[2], devs[3]),
    )
}

fn criterion_3(out: &ExperimentOutput) -> Verdict {
    let d = &check(out, "global maximum principle").detail;
    let violating = d.pointer("/simulated/violating_cells").and_then(Value::as_u64);
    let tolerance = num(d, "/simulated/tolerance");
    let gap_one = d
        .pointer("/analytic_gaps")
        .and_then(Value::as_array)
        .and_then(|gaps| gaps.iter().find(|g| g[0].as_f64() == Some(1.0)))
        .and_then(|g| g[1].as_f64());
    Verdict::new(
        violating == Some(0) && tolerance == SMP_TOL && gap_one == Some(UNIT_GAP),
        format!("violating cells {violating:?} at tolerance {tolerance}, analytic gap at u = 1 {gap_one:?}"),
    )
}

fn criterion_4(out: &ExperimentOutput) -> Verdict {
    let d = &check(out, "convex hull counterexample").detail;
    let (analytic, mean) = (num(d, "/analytic"), num(d, "/mean_gradient"));
    let flagged = d.pointer("/violating_cells").and_then(Value::as_u64).unwrap_or(0) > 0;
    Verdict::new(
        analytic == HULL_VALUE && (mean - HULL_VALUE).abs() <= HULL_TOL && flagged,
        format!("analytic {analytic}, simulated mean {mean:.4}, violation flagged: {flagged}"),
    )
}

fn criterion_5() -> Verdict {
    let out = run(
        ExperimentKind::Spike,
        "[model]\nname = \"benchmark\"\n\
         [grid]\nn_paths = 20000\nn_steps = 512\nhorizon = 1.0\n\
         [spike]\neps = [0.125, 0.0625, 0.03125, 0.015625]\nreplacement = [1.0]\n",
    );
    let report = &out.data["report"];
    let slope = |tag: &str| {
        report["checks"]
            .as_array()
            .and_then(|cs| cs.iter().find(|c| c["tag"] == tag))
            .map_or(f64::NAN, |c| num(c, "/fit/slope"))
    };
    let windows = [
        ("state gap, first order", FIRST_ORDER_WINDOW),
        ("first variation X1", FIRST_ORDER_WINDOW),
        ("state gap, second order", SECOND_ORDER_WINDOW),
        ("second variation X2", SECOND_ORDER_WINDOW),
        ("value gap, first order", FIRST_ORDER_WINDOW),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (tag, (lo, hi)) in windows {
        let s = slope(tag);
        pass &= (lo..=hi).contains(&s);
        parts.push(format!("{tag} {s:.3}"));
    }
    let spread = num(report, "/y2_ratio_spread");
    pass &= spread <= RATIO_SPREAD;
    let residuals: Vec<f64> = report["residual_ratios"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_f64).collect())
        .unwrap_or_default();
    // Ratios are stored from the widest spike to the narrowest.
    let decreasing = residuals.len() >= 4 && residuals.windows(2).all(|w| w[1] < w[0]);
    pass &= decreasing;
    parts.push(format!("Y2/eps spread {spread:.4}"));
    let shown: Vec<String> = residuals.iter().map(|r| format!("{r:.3e}")).collect();
    parts.push(format!("residual/eps [{}] strictly decreasing: {decreasing}", shown.join(", ")));
    Verdict::new(pass, parts.join("; "))
}

fn scalar_linear_toml(lambda: [f64; 2], mu: [f64; 2], phi: [f64; 2], terminal: [f64; 4]) -> String {
    format!(
        "[model]\nname = \"scalar-linear\"\nlambda = {lambda:?}\nmu = {mu:?}\nphi = {phi:?}\nterminal = {terminal:?}\n\
         [grid]\nn_paths = 10000\nn_steps = 100\nhorizon = 1.0\n"
    )
}

fn criterion_6() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut pass = true;
    let mut worst_rel = 0.0_f64;
    let mut worst_se = 0.0_f64;
    for _ in 0..5 {
        let lambda = rng.random_range(-0.5..0.5);
        let mu = rng.random_range(-0.4..0.4);
        let c = rng.random_range(0.5..2.0);
        let out = run(ExperimentKind::SolveBsde, &scalar_linear_toml([lambda, 0.0], [mu, 0.0], [0.0, 0.0], [c, 0.0, 0.0, 0.0]));
        // Deterministic data: Z = 0 and Y_t = c e^{lambda (T - t)}.
        let exact = c * lambda.exp();
        let d = &check(&out, "solvers agree").detail;
        for key in ["/lsmc", "/weighted"] {
            let rel = (num(d, key) - exact).abs() / exact;
            worst_rel = worst_rel.max(rel);
            pass &= rel <= CLOSED_FORM_REL;
        }
    }
    for _ in 0..5 {
        let mut draw = |scale: f64| rng.random_range(-scale..scale);
        let lambda = [draw(0.4), draw(0.3)];
        let mu = [draw(0.3), draw(0.2)];
        let phi = [draw(0.5), draw(0.5)];
        let terminal = [draw(1.0), draw(0.3), draw(0.8), draw(0.2)];
        let out = run(ExperimentKind::SolveBsde, &scalar_linear_toml(lambda, mu, phi, terminal));
        let d = &check(&out, "solvers agree").detail;
        let combined = num(d, "/lsmc_std_error").hypot(num(d, "/weighted_std_error"));
        let gap = (num(d, "/lsmc") - num(d, "/weighted")).abs() / combined;
        worst_se = worst_se.max(gap);
        pass &= gap <= SE_MULTIPLE;
    }
    Verdict::new(
        pass,
        format!("worst closed-form relative error {worst_rel:.2e}, worst solver gap {worst_se:.2} combined SE"),
    )
}

fn flow_coefficients() -> ConstantFlowCoefficients {
    ConstantFlowCoefficients {
        n: 2,
        a: vec![0.3, -0.2, 0.1, -0.4],
        beta: vec![0.2, 0.1],
        c: vec![0.0, 0.1, 0.05, 0.0, 0.1, 0.0, 0.0, -0.1],
    }
}

/// `Y_0 = e^{A^T T} xi + int_0^T e^{A^T s} f ds`, from the exponential of the
/// augmented matrix `[[A^T, f], [0, 0]]`.
fn matrix_ode_oracle(a: &[f64], f: [f64; 2], xi: [f64; 2], horizon: f64) -> [f64; 2] {
    let aug = Matrix3::new(a[0], a[2], f[0], a[1], a[3], f[1], 0.0, 0.0, 0.0) * horizon;
    let e = aug.exp();
    let y = |r: usize| e[(r, 0)] * xi[0] + e[(r, 1)] * xi[1] + e[(r, 2)];
    [y(0), y(1)]
}

fn criterion_7() -> Verdict {
    let coeffs = flow_coefficients();
    let (np, steps, horizon) = (20_000, 100, 1.0);
    let (f, xi) = ([0.2, 0.3], [1.0, 1.5]);
    let grid = TimeGrid::new(horizon, steps).expect("grid");
    let w = generate_brownian(np, grid, 2, SEED).expect("brownian");
    let data = MultiLinearBsde {
        coefficients: &coeffs,
        driver: Paths::filled(np, steps, &f),
        terminal: Paths::filled(np, 1, &xi),
    };
    let sol = solve_multidim_linear_bsde(&data, &w, &w.brownian_paths(), &BasisConfig::default()).expect("multidim solve");
    let exact = matrix_ode_oracle(&coeffs.a, f, xi, horizon);
    let rel = (0..2).map(|r| (sol.report.y0[r] - exact[r]).abs() / exact[r].abs()).fold(0.0, f64::max);

    let defect = |n_steps: usize| {
        let g = TimeGrid::new(horizon, n_steps).expect("grid");
        let w = generate_brownian(2_000, g, 2, SEED).expect("brownian");
        simulate_matrix_flow(&coeffs, &w).expect("flow").inverse_defect()
    };
    let (coarse, fine) = (defect(100), defect(200));
    let ratio = coarse / fine;
    Verdict::new(
        rel <= CLOSED_FORM_REL && (DEFECT_RATIO_WINDOW.0..=DEFECT_RATIO_WINDOW.1).contains(&ratio),
        format!(
            "Y0 = [{:.5}, {:.5}] +- [{:.5}, {:.5}] vs oracle [{:.5}, {:.5}] (rel {rel:.2e}); inverse defect {coarse:.3e} -> {fine:.3e}, ratio {ratio:.3}",
            sol.report.y0[0], sol.report.y0[1], sol.report.y0_std_error[0], sol.report.y0_std_error[1], exact[0], exact[1]
        ),
    )
}

fn criterion_8() -> Verdict {
    let out = run(ExperimentKind::BmoSuite, "[bmo]\nroundtrip_points = 100\nenergy_orders = [1, 2, 3]\n");
    let roundtrip = num(&check(&out, "critical exponent round trip").detail, "/max_abs_error");
    let k = num(&check(&out, "reverse Hoelder constant").detail, "/value");
    let inequalities: Vec<_> = out
        .checks
        .iter()
        .filter(|c| c.name.starts_with("energy inequality") || c.name.starts_with("John-Nirenberg"))
        .collect();
    let all = inequalities.len() == 6 && inequalities.iter().all(|c| c.pass);
    Verdict::new(
        roundtrip <= ROUNDTRIP_TOL && (k - 4.0).abs() <= REVERSE_HOLDER_TOL && all,
        format!(
            "round trip {roundtrip:.2e}, K(1.5, 0) = {k}, {}/{} inequality checks pass",
            inequalities.iter().filter(|c| c.pass).count(),
            inequalities.len()
        ),
    )
}

fn criterion_9() -> Verdict {
    let benchmark = sample_hamiltonian_identity(&BenchmarkModel::default(), IDENTITY_POINTS, SEED);
    let example = sample_hamiltonian_identity(&ExampleModel::default(), IDENTITY_POINTS, SEED);
    Verdict::new(
        benchmark <= IDENTITY_TOL && example <= IDENTITY_TOL,
        format!("max error benchmark {benchmark:.2e}, example {example:.2e}"),
    )
}

fn small_config(kind: ExperimentKind) -> &'static str {
    match kind {
        ExperimentKind::Spike => "[grid]\nn_paths = 1000\nn_steps = 64\n[spike]\neps = [0.125, 0.0625, 0.03125, 0.015625]\n",
        ExperimentKind::Example => "[grid]\nn_paths = 1000\nn_steps = 50\n",
        _ => "[grid]\nn_paths = 1000\nn_steps = 40\n",
    }
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .expect("output directory")
        .map(|e| {
            let path = e.expect("entry").path();
            (path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).expect("file"))
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Verdict {
    let root = tempfile::tempdir().expect("temp dir");
    let mut pass = true;
    let mut compared = 0;
    for kind in ExperimentKind::ALL {
        let config = load(kind, small_config(kind));
        let first = root.path().join(format!("{}-a", kind.name()));
        let second = root.path().join(format!("{}-b", kind.name()));
        qsmp::run_to_dir(&config, &first, Some(1)).expect("first run");
        qsmp::run_to_dir(&config, &second, Some(2)).expect("second run");
        let (a, b) = (read_dir(&first), read_dir(&second));
        compared += a.len();
        pass &= !a.is_empty() && a == b;
    }
    Verdict::new(pass, format!("{compared} files byte-identical across reruns with 1 and 2 jobs: {pass}"))
}

fn main() -> ExitCode {
    let strict = std::env::var("QSMP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<usize>> = std::env::var("QSMP_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let selected = |id: usize| only.as_ref().is_none_or(|ids| ids.contains(&id));

    let mut results = Vec::new();
    let mut report = |id: usize, title: &str, started: Instant, v: Verdict| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        println!("{tag} {id:>2} {title} [{:.1}s]: {}", started.elapsed().as_secs_f64(), v.detail);
        results.push(v.pass);
    };

    if (1..=4).any(selected) {
        let t = Instant::now();
        let example = example_output();
        let shared: [(&str, SharedCriterion); 4] = [
            ("example optimal cost", criterion_1),
            ("example adjoints", criterion_2),
            ("example maximum principle", criterion_3),
            ("convex hull counterexample", criterion_4),
        ];
        for (i, (title, criterion)) in shared.into_iter().enumerate() {
            if selected(i + 1) {
                report(i + 1, title, t, criterion(&example));
            }
        }
    }
    let standalone: [(usize, &str, Criterion); 6] = [
        (5, "spike orders", criterion_5),
        (6, "linear BSDE oracles", criterion_6),
        (7, "multi-dimensional representation", criterion_7),
        (8, "BMO formulas and inequalities", criterion_8),
        (9, "Hamiltonian identity", criterion_9),
        (10, "determinism", criterion_10),
    ];
    for (id, title, criterion) in standalone {
        if selected(id) {
            let t = Instant::now();
            report(id, title, t, criterion());
        }
    }

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if strict && passed != results.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
