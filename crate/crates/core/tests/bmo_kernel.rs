use proptest::prelude::*;
use qsmp_core::bmo::{
    doleans_exponential, energy_inequality_report, estimate_bmo2_norm, john_nirenberg_report, Conditioner, MartingalePathSet,
};
use qsmp_core::path_engine::generate_brownian;
use qsmp_core::regression::BasisConfig;
use qsmp_core::{Paths, TimeGrid};

fn signed_integrand(h: f64, n_paths: usize, steps: usize, seed: u64) -> (MartingalePathSet, Paths) {
    let grid = TimeGrid::new(1.0, steps).unwrap();
    let w = generate_brownian(n_paths, grid, 1, seed).unwrap();
    let bm = w.brownian_paths();
    let integrand = Paths::from_fn(n_paths, steps, 1, |p, k, o| o[0] = if bm.scalar(p, k) >= 0.0 { h } else { -h });
    (MartingalePathSet::from_integrand(&integrand, &w).unwrap(), bm)
}

#[test]
fn bounded_integrand_bracket_is_deterministic() {
    // |h| is constant, so <M>_t = h^2 t on every path.
    let h = 0.9;
    let (m, _) = signed_integrand(h, 300, 25, 1);
    let grid = TimeGrid::new(1.0, 25).unwrap();
    for p in 0..300 {
        for k in 0..=25 {
            assert!((m.bracket().scalar(p, k) - h * h * grid.time(k)).abs() < 1e-14);
        }
    }
    let r = energy_inequality_report(&m, 2, h).unwrap();
    assert!((r.lhs - h.powi(4)).abs() < 1e-13 && r.passed, "{r:?}");
}

#[test]
fn norm_estimate_stays_below_sup_bound() {
    let h = 0.6;
    let (m, bm) = signed_integrand(h, 3_000, 40, 2);
    let est = estimate_bmo2_norm(&m, &Conditioner::on(&bm, BasisConfig::default()));
    assert!(est <= h * 1.001 && est >= 0.99 * h, "{est}");
    let jn = john_nirenberg_report(&m, 0.5 / (h * h), h, &Conditioner::on(&bm, BasisConfig::default())).unwrap();
    assert!(jn.passed);
    assert!((jn.at(0).lhs - 0.5_f64.exp()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn doleans_product_with_negation(h in -1.5..1.5_f64, seed in any::<u64>()) {
        let (m, _) = signed_integrand(h, 8, 12, seed);
        let a = doleans_exponential(&m);
        let b = doleans_exponential(&m.negated());
        for p in 0..8 {
            for k in 0..=12 {
                let target = (-m.bracket().scalar(p, k)).exp();
                prop_assert!((a.scalar(p, k) * b.scalar(p, k) - target).abs() <= 1e-13 * target.max(1.0));
                prop_assert!(a.scalar(p, k) > 0.0);
            }
        }
    }

    #[test]
    fn zero_martingale_has_zero_norm(steps in 1usize..30, seed in any::<u64>()) {
        let (m, bm) = signed_integrand(0.0, 20, steps, seed);
        prop_assert_eq!(estimate_bmo2_norm(&m, &Conditioner::on(&bm, BasisConfig::default())), 0.0);
        prop_assert_eq!(estimate_bmo2_norm(&m, &Conditioner::unconditional()), 0.0);
    }
}
