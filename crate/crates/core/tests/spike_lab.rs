use proptest::prelude::*;
use qsmp_core::adjoint::{solve_adjoints, AdjointBundle};
use qsmp_core::bsde::{solve_bsde_lsmc, ControlledTrajectory, LsmcConfig, WeightedOptions};
use qsmp_core::model::SystemDerivatives;
use qsmp_core::models::{BenchmarkModel, ExampleModel};
use qsmp_core::path_engine::{generate_brownian, simulate_forward_sde, BrownianEnsemble, ControlProcess};
use qsmp_core::regression::BasisConfig;
use qsmp_core::spike::*;
use qsmp_core::{Paths, TimeGrid};

struct Candidate {
    traj: ControlledTrajectory,
    y0: f64,
    w: BrownianEnsemble,
    adjoints: AdjointBundle,
}

fn candidate<M: SystemDerivatives>(model: &M, x0: f64, np: usize, ns: usize, seed: u64) -> Candidate {
    let grid = TimeGrid::new(1.0, ns).unwrap();
    let w = generate_brownian(np, grid, 1, seed).unwrap();
    let u = ControlProcess::constant(model.control_domain(), np, grid, &[0.0]).unwrap();
    let x = simulate_forward_sde(model, &[x0], &u, &w).unwrap();
    let (traj, report) = solve_bsde_lsmc(model, &x, &u, &w, &LsmcConfig::default(), 50.0).unwrap();
    let adjoints = solve_adjoints(model, &traj, &w, &BasisConfig::default()).unwrap();
    Candidate {
        traj,
        y0: report.y0[0],
        w,
        adjoints,
    }
}

fn weighted() -> WeightedOptions {
    WeightedOptions {
        basis: BasisConfig::default(),
        mu_bound: None,
    }
}

fn spike_of(c: &Candidate, start: usize, width: usize, value: f64) -> SpikePerturbation {
    let grid = c.w.grid();
    let rep = ControlProcess::constant(c.traj.u.domain().clone(), c.w.n_paths(), grid, &[value]).unwrap();
    SpikePerturbation::from_steps(grid, start, width, rep).unwrap()
}

fn max_abs_diff(a: &Paths, b: &Paths) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[test]
fn pure_noise_spike_gives_windowed_brownian_increment() {
    // b = 0 and sigma = u: X1 = W(t ^ (t0 + eps)) - W(t ^ t0), X2 = 0.
    let model = ExampleModel::default();
    let c = candidate(&model, 0.0, 50, 32, 3);
    let spike = spike_of(&c, 8, 4, 1.0);
    let x1 = solve_x1(&model, &c.traj, &spike, &c.w).unwrap();
    let x2 = solve_x2(&model, &c.traj, &spike, &x1, &c.w).unwrap();
    let bm = c.w.brownian_paths();
    for path in 0..50 {
        for k in 0..=32 {
            let expected = bm.scalar(path, k.min(12)) - bm.scalar(path, k.min(8));
            assert!((x1.scalar(path, k) - expected).abs() < 1e-13);
        }
    }
    assert_eq!(x2.max_abs(), 0.0);
}

#[test]
fn pure_drift_spike_gives_deterministic_second_variation() {
    // b = u, sigma = u: b_hat = 1, no state derivatives, so X2 = (t ^ (t0 + eps) - t0)^+.
    let model = BenchmarkModel {
        drift_rate: 0.0,
        vol_rate: 0.0,
        ..BenchmarkModel::default()
    };
    let c = candidate(&model, 0.0, 40, 64, 4);
    let spike = spike_of(&c, 16, 8, 1.0);
    let x1 = solve_x1(&model, &c.traj, &spike, &c.w).unwrap();
    let x2 = solve_x2(&model, &c.traj, &spike, &x1, &c.w).unwrap();
    let dt = 1.0 / 64.0;
    for path in 0..40 {
        for k in 0..=64 {
            let expected = (k.clamp(16, 24) - 16) as f64 * dt;
            assert!((x2.scalar(path, k) - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn unperturbed_spike_gives_zero_variations() {
    let model = BenchmarkModel::default();
    let c = candidate(&model, 0.5, 200, 32, 5);
    let spike = spike_of(&c, 8, 8, 0.0);
    let var = solve_variations(&model, &c.traj, &spike, &c.adjoints, &c.w, &weighted()).unwrap();
    for paths in [&var.x1, &var.x2, &var.y1, &var.z1, &var.y2, &var.z2, &var.yhat.y, &var.yhat.z] {
        assert_eq!(paths.max_abs(), 0.0);
    }
    let res = expansion_residuals(&c.traj, &c.traj, &var).unwrap();
    for p in res.xi.iter().chain(&res.eta).chain(&res.zeta) {
        assert_eq!(p.max_abs(), 0.0);
    }
    assert_eq!(res.value_residual, 0.0);
}

#[test]
fn first_variation_value_is_the_adjoint_relation() {
    let model = BenchmarkModel::default();
    let c = candidate(&model, 0.5, 300, 32, 6);
    let spike = spike_of(&c, 8, 8, 1.0);
    let var = solve_variations(&model, &c.traj, &spike, &c.adjoints, &c.w, &weighted()).unwrap();
    for path in 0..300 {
        assert_eq!(var.y1.scalar(path, 0), 0.0);
        for k in 0..=32 {
            let expected = c.adjoints.p.scalar(path, k) * var.x1.scalar(path, k);
            assert_eq!(var.y1.scalar(path, k), expected);
        }
        // X1(0) = X2(0) = 0, so Y2(0) is the auxiliary value.
        assert_eq!(var.y2.scalar(path, 0), var.yhat.y.scalar(path, 0));
    }
}

#[test]
fn direct_first_variation_solve_starts_at_zero() {
    let model = BenchmarkModel::default();
    let c = candidate(&model, 0.5, 10_000, 128, 7);
    let spike = spike_of(&c, 64, 16, 1.0);
    let x1 = solve_x1(&model, &c.traj, &spike, &c.w).unwrap();
    let sol = solve_y1_direct(&model, &c.traj, &spike, &c.adjoints.p, &c.adjoints.q, &x1, &c.w, &weighted()).unwrap();
    let (y0, se) = (sol.report.y0[0], sol.report.y0_std_error[0]);
    assert!(y0.abs() <= 3.0 * se, "{y0} {se}");
}

// Independent evaluation of the auxiliary value as the expectation of the
// weighted source over the window, with the weight simulated by
// Euler-Maruyama and the source written out for the benchmark coefficients.
#[test]
fn auxiliary_value_matches_weighted_source_expectation() {
    let model = BenchmarkModel::default();
    let c = candidate(&model, 0.5, 10_000, 128, 8);
    let (start, width) = (64, 8);
    let spike = spike_of(&c, start, width, 1.0);
    let sol = solve_yhat(&model, &c.traj, &spike, &c.adjoints, &c.w, &weighted()).unwrap();
    let dt = 1.0 / 128.0;
    let samples: Vec<f64> = (0..10_000)
        .map(|path| {
            let mut weight = 1.0;
            let mut total = 0.0;
            for k in 0..start + width {
                let z = c.traj.z.scalar(path, k);
                let fz = model.z_weight * z.cos();
                if k >= start {
                    let (p, q, big_p) = (
                        c.adjoints.p.scalar(path, k),
                        c.adjoints.q.scalar(path, k),
                        c.adjoints.p2.scalar(path, k),
                    );
                    let f_hat = model.z_weight * ((z + p).sin() - z.sin()) + 1.0;
                    total += weight * (p + q + f_hat + 0.5 * big_p) * dt;
                }
                weight *= 1.0 - model.discount * dt + fz * c.w.increment(path, k)[0];
            }
            total
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let se = (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let y0 = sol.report.y0[0];
    assert!((y0 - mean).abs() <= 2.0 * se, "{y0} {mean} {se}");
}

#[test]
fn benchmark_suite_orders() {
    let model = BenchmarkModel::default();
    let c = candidate(&model, 0.5, 5_000, 512, 9);
    let lsmc = LsmcConfig::default();
    let options = weighted();
    let ctx = SpikeContext {
        model: &model,
        x0: &[0.5],
        base: &c.traj,
        base_y0: c.y0,
        adjoints: &c.adjoints,
        w: &c.w,
        lsmc: &lsmc,
        z_truncation: 50.0,
        weighted: &options,
    };
    let report = run_spike_suite(&ctx, 256, &[64, 32, 16, 8], &[1.0], &SpikeSuiteTolerances::default()).unwrap();
    for check in report.checks.iter().filter(|c| c.required) {
        assert!(check.pass, "{check:?}");
    }
    assert!(report.y2_ratio_spread <= 0.25);
    assert!(report.yhat_ratio_spread <= 0.25);
    for m in &report.metrics {
        assert!(m.state_gap3_sq < 1e-20, "affine coefficients make the expansion exact");
        assert!((m.perturbed_y0 - c.y0 - m.y2_0).abs() <= 0.05 * m.y2_0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn residuals_telescope_exactly(start in 0usize..12, width in 1usize..5, value in -1.0f64..1.0, seed in 0u64..1000) {
        let model = BenchmarkModel::default();
        let c = candidate(&model, 0.5, 60, 16, seed);
        let spike = spike_of(&c, start, width, value);
        let u_eps = build_spiked_control(&c.traj.u, &spike).unwrap();
        let x_eps = simulate_forward_sde(&model, &[0.5], &u_eps, &c.w).unwrap();
        let (perturbed, _) = solve_bsde_lsmc(&model, &x_eps, &u_eps, &c.w, &LsmcConfig::default(), 50.0).unwrap();
        let var = solve_variations(&model, &c.traj, &spike, &c.adjoints, &c.w, &weighted()).unwrap();
        let res = expansion_residuals(&c.traj, &perturbed, &var).unwrap();
        let cases = [
            (&res.xi, &var.x1, &var.x2),
            (&res.eta, &var.y1, &var.y2),
            (&res.zeta, &var.z1, &var.z2),
        ];
        for (levels, first, second) in cases {
            prop_assert_eq!(&levels[0].difference(first).unwrap(), &levels[1]);
            prop_assert_eq!(&levels[1].difference(second).unwrap(), &levels[2]);
        }
        prop_assert!(max_abs_diff(&res.xi[0], &perturbed.x.difference(&c.traj.x).unwrap()) == 0.0);
    }

    #[test]
    fn identical_replacement_gives_zero(start in 0usize..12, width in 0usize..5, seed in 0u64..1000) {
        let model = BenchmarkModel::default();
        let c = candidate(&model, 0.5, 40, 16, seed);
        let spike = spike_of(&c, start, width, 0.0);
        let var = solve_variations(&model, &c.traj, &spike, &c.adjoints, &c.w, &weighted()).unwrap();
        prop_assert_eq!(var.x1.max_abs() + var.x2.max_abs() + var.y2.max_abs() + var.z2.max_abs(), 0.0);
    }
}
