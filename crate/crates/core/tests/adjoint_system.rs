use qsmp_core::adjoint::{assemble_first_order, assemble_second_order_source, solve_adjoints, solve_first_order};
use qsmp_core::bsde::{solve_bsde_lsmc, solve_state_system, ControlledTrajectory, LsmcConfig};
use qsmp_core::model::SystemDerivatives;
use qsmp_core::models::{ExampleModel, ScalarLinearModel};
use qsmp_core::path_engine::{generate_brownian, simulate_forward_sde, BrownianEnsemble, ControlProcess, FlowCoefficients};
use qsmp_core::regression::BasisConfig;
use qsmp_core::TimeGrid;

fn candidate<M: SystemDerivatives>(model: &M, np: usize, ns: usize, seed: u64) -> (ControlledTrajectory, BrownianEnsemble) {
    let grid = TimeGrid::new(1.0, ns).unwrap();
    let w = generate_brownian(np, grid, model.noise_dim(), seed).unwrap();
    let u = ControlProcess::constant(model.control_domain(), np, grid, &vec![0.0; model.control_dim()]).unwrap();
    let x = simulate_forward_sde(model, &vec![0.0; model.state_dim()], &u, &w).unwrap();
    let (traj, _) = solve_bsde_lsmc(model, &x, &u, &w, &LsmcConfig::default(), 50.0).unwrap();
    (traj, w)
}

// Constant coefficients: b = a x, sigma = 1 + s x, f = l y + m z + c0 + c1 x,
// Phi = k1 x + k3 x^2 / 2.
fn constant_model() -> ScalarLinearModel {
    ScalarLinearModel {
        drift_rate: 0.3,
        vol_level: 1.0,
        vol_rate: 0.2,
        lambda: [-0.2, 0.0],
        mu: [0.5, 0.0],
        phi: [0.1, 0.6],
        terminal: [0.0, 1.2, 0.0, 0.8],
    }
}

#[test]
fn example_first_order_data_matches_hand_derivation() {
    let model = ExampleModel::default();
    let grid = TimeGrid::new(1.0, 10).unwrap();
    let w = generate_brownian(50, grid, 1, 1).unwrap();
    let u = ControlProcess::constant(model.domain.clone(), 50, grid, &[0.0]).unwrap();
    let (traj, _) = solve_state_system(&model, &[0.0], &u, &w, &LsmcConfig::default()).unwrap();
    let data = assemble_first_order(&model, &traj, grid).unwrap();
    let (mut a, mut beta, mut c) = ([0.0], [0.0], [0.0]);
    for k in 0..10 {
        data.coefficients.eval(3, k, &mut a, &mut beta, &mut c);
        assert_eq!((a[0], beta[0], c[0]), (0.0, -0.5, 0.0));
        assert_eq!(data.driver.scalar(3, k), 0.0);
    }
    assert!(data.terminal.as_slice().iter().all(|v| *v == 1.0));
}

#[test]
fn constant_scalar_first_order_matches_ode() {
    let model = ScalarLinearModel {
        terminal: [0.0, 1.2, 0.0, 0.0],
        ..constant_model()
    };
    let (traj, w) = candidate(&model, 10_000, 200, 21);
    let adj = solve_first_order(&model, &traj, &w, &BasisConfig::default()).unwrap();
    // A = m s + l + a, driver c1, terminal k1.
    let rate = 0.5 * 0.2 - 0.2 + 0.3;
    let (c1, k1) = (0.6, 1.2);
    for k in [0, 40, 100, 160] {
        let tau = 1.0 - w.grid().time(k);
        let exact = (k1 + c1 / rate) * (rate * tau).exp() - c1 / rate;
        let mean = adj.p.component(k, 0).iter().sum::<f64>() / 10_000.0;
        assert!((mean - exact).abs() <= 0.01 * exact, "k={k} {mean} {exact}");
    }
    assert!(adj.sup_abs_p < 10.0);
}

#[test]
fn constant_scalar_second_order_matches_ode() {
    let model = constant_model();
    let (traj, w) = candidate(&model, 10_000, 200, 22);
    let adj = solve_adjoints(&model, &traj, &w, &BasisConfig::default()).unwrap();
    // No second derivatives in the coefficients, so phi = 0 and
    // P_t = k3 exp(L (T - t)) with L = l + 2 m s + 2 a + s^2.
    let rate = -0.2 + 2.0 * 0.5 * 0.2 + 2.0 * 0.3 + 0.04;
    for k in [0, 80, 180] {
        let exact = 0.8 * (rate * (1.0 - w.grid().time(k))).exp();
        let mean = adj.p2.component(k, 0).iter().sum::<f64>() / 10_000.0;
        assert!((mean - exact).abs() <= 0.01 * exact, "k={k} {mean} {exact}");
    }
}

#[test]
fn example_source_vanishes_along_zero_trajectory() {
    let model = ExampleModel::default();
    let (traj, w) = candidate(&model, 2_000, 20, 4);
    let first = solve_first_order(&model, &traj, &w, &BasisConfig::default()).unwrap();
    let source = assemble_second_order_source(&model, &traj, w.grid(), &first.p, &first.q).unwrap();
    // Upsilon = q (sigma_x = 0) is pure regression noise and g'' = 0 at z = 0.
    assert_eq!(source.phi.max_abs(), 0.0);
    assert!(source.upsilon.max_abs() <= 0.05);
}

#[test]
fn example_adjoints_are_analytic_values() {
    let model = ExampleModel::default();
    let (traj, w) = candidate(&model, 20_000, 100, 5);
    let adj = solve_adjoints(&model, &traj, &w, &BasisConfig::default()).unwrap();
    let p_dev = adj.p.as_slice().iter().fold(0.0_f64, |m, v| m.max((v - 1.0).abs()));
    assert!(p_dev <= 0.05, "{p_dev}");
    assert!(adj.q.max_abs() <= 0.05);
    assert!(adj.p2.max_abs() <= 0.05 && adj.q2.max_abs() <= 0.05);
}
