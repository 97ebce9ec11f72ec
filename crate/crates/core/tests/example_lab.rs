use qsmp_core::bsde::LsmcConfig;
use qsmp_core::example::*;
use qsmp_core::model::ControlDomain;
use qsmp_core::models::ExampleModel;
use qsmp_core::path_engine::{generate_brownian, ControlProcess};
use qsmp_core::regression::BasisConfig;
use qsmp_core::TimeGrid;

fn grid(n_steps: usize) -> TimeGrid {
    TimeGrid::new(1.0, n_steps).unwrap()
}

#[test]
fn zero_control_cost_and_adjoints() {
    let model = ExampleModel::default();
    let (run, w) = evaluate_constant_cost(&model, 0.0, 20_000, grid(100), 1, &LsmcConfig::default()).unwrap();
    assert!(run.cost.mean.abs() <= 1e-10);
    let adj = example_adjoints(&model, &run, &w, &BasisConfig::default()).unwrap();
    assert!(adj.within(0.05), "{adj:?}");
    // Phi_x = 1 at x = 0 and the drift coefficient vanishes: (1, 0) solves exactly.
    assert!(adj.analytic_residual <= 1e-14);
}

#[test]
fn unit_control_costs_more() {
    let model = ExampleModel::default();
    let (run, _) = evaluate_constant_cost(&model, 1.0, 20_000, grid(100), 2, &LsmcConfig::default()).unwrap();
    assert!(run.cost.mean > 3.0 * run.cost.std_error, "{:?}", run.cost);
}

// The change of measure turns J(u) into a plain expectation of a path
// functional; it must agree with the LSMC value.
#[test]
fn girsanov_representation_matches_lsmc() {
    let model = ExampleModel::default();
    let (run, w) = evaluate_constant_cost(&model, 1.0, 20_000, grid(200), 3, &LsmcConfig::default()).unwrap();
    let weighted = girsanov_cost(&model, &run, &w);
    let combined = (run.cost.std_error.powi(2) + weighted.std_error.powi(2)).sqrt();
    assert!((run.cost.mean - weighted.mean).abs() <= 3.0 * combined, "{:?} {:?}", run.cost, weighted);
}

#[test]
fn girsanov_cost_of_zero_control_vanishes() {
    let model = ExampleModel::default();
    let (run, w) = evaluate_constant_cost(&model, 0.0, 1_000, grid(50), 4, &LsmcConfig::default()).unwrap();
    let weighted = girsanov_cost(&model, &run, &w);
    assert_eq!(weighted.mean, 0.0);
}

#[test]
fn global_condition_confirmed() {
    let model = ExampleModel::default();
    let (run, w) = evaluate_constant_cost(&model, 0.0, 10_000, grid(50), 5, &LsmcConfig::default()).unwrap();
    let adj = example_adjoints(&model, &run, &w, &BasisConfig::default()).unwrap();
    let confirmation = confirm_global_smp(&model, &run, &adj.adjoints, w.grid(), 0.05).unwrap();
    assert!(confirmation.pass, "{:?}", confirmation.simulated);
    assert_eq!(confirmation.analytic_gaps, vec![(0.0, 0.0), (1.0, 1.5)]);
}

#[test]
fn convex_hull_candidate_zero_is_rejected() {
    let w = generate_brownian(10_000, grid(50), 1, 6).unwrap();
    let report = convex_hull_counterexample(0.0, &w, &LsmcConfig::default(), &BasisConfig::default(), 0.05).unwrap();
    assert_eq!(report.analytic_left_side, -0.5);
    assert!(report.violated);
    assert!((report.simulated.mean_gradient[0] + 0.5).abs() <= 0.02);
}

#[test]
fn conditions_fail_for_a_small_control_set() {
    // With U = {0, 1/4} the integrand g(Phi' / 4) + (1 + Phi'' / 2) / 16 vanishes at x = 0.
    let model = ExampleModel {
        domain: ControlDomain::finite_scalars(&[0.0, 0.25]),
        ..ExampleModel::default()
    };
    let report = validate_example_conditions(&model, 501, 5.0);
    assert!(!report.pass);
}

#[test]
fn cost_rejects_mismatched_grid() {
    let model = ExampleModel::default();
    let w = generate_brownian(10, grid(8), 1, 7).unwrap();
    let control = ControlProcess::constant(model.domain.clone(), 10, grid(4), &[0.0]).unwrap();
    assert!(evaluate_cost(&model, &control, &w, &LsmcConfig::default(), 10.0).is_err());
}
