//! Cross-path least-squares projection onto polynomial features.
//!
//! Features are standardized per call; coordinates with (numerically) zero
//! spread are dropped, so a fully degenerate feature set collapses to the
//! sample mean.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

/// Polynomial basis description.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BasisConfig {
    /// Total degree of the monomials.
    pub degree: usize,
    /// Ridge added to the normal equations (not applied to the intercept).
    pub ridge: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            ridge: 0.0,
        }
    }
}

/// Exponent vectors of all monomials of total degree `<= degree` in `vars`
/// variables, starting with the constant.
fn monomials(vars: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; vars]];
    let mut frontier = vec![vec![0; vars]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for e in &frontier {
            // Raise only coordinates at or after the last nonzero one so
            // every monomial is produced once.
            let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
            for j in start..vars {
                let mut m = e.clone();
                m[j] += 1;
                next.push(m);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Projection operator for one set of features (one time step).
#[derive(Debug, Clone)]
pub struct Projector {
    n_paths: usize,
    n_terms: usize,
    /// Row-major design matrix, `n_paths x n_terms`; empty when intercept-only.
    design: Vec<f64>,
    factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    ridge_used: f64,
}

impl Projector {
    /// `features` holds `n_paths` rows of equal width (possibly zero).
    pub fn new(features: &[f64], n_paths: usize, config: &BasisConfig) -> Self {
        let dim = features.len().checked_div(n_paths).unwrap_or(0);
        let active = active_coordinates(features, dim, n_paths);
        if active.is_empty() || config.degree == 0 || n_paths < 2 {
            return Self::intercept_only(n_paths);
        }
        let vars = active.len();
        let exps = monomials(vars, config.degree);
        let n_terms = exps.len();
        let mut design = vec![0.0; n_paths * n_terms];
        let mut z = vec![0.0; vars];
        for path in 0..n_paths {
            let row = &features[path * dim..(path + 1) * dim];
            for (slot, &(c, m, s)) in z.iter_mut().zip(&active) {
                *slot = (row[c] - m) / s;
            }
            let out = &mut design[path * n_terms..(path + 1) * n_terms];
            for (t, e) in exps.iter().enumerate() {
                let mut v = 1.0;
                for (x, &p) in z.iter().zip(e) {
                    if p > 0 {
                        v *= x.powi(p as i32);
                    }
                }
                out[t] = v;
            }
        }
        let gram = gram_matrix(&design, n_paths, n_terms);
        let (factor, ridge_used) = factorize(gram, config.ridge, n_terms);
        Self {
            n_paths,
            n_terms,
            design,
            factor: Some(factor),
            ridge_used,
        }
    }

    /// Projection onto constants: every fitted value is the sample mean.
    pub fn intercept_only(n_paths: usize) -> Self {
        Self {
            n_paths,
            n_terms: 1,
            design: Vec::new(),
            factor: None,
            ridge_used: 0.0,
        }
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    /// Ridge actually applied after any fallback.
    pub fn ridge_used(&self) -> f64 {
        self.ridge_used
    }

    pub fn is_intercept_only(&self) -> bool {
        self.factor.is_none()
    }

    /// Fitted conditional mean of `target` at every path.
    pub fn fit(&self, target: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; target.len()];
        self.fit_into(target, &mut out);
        out
    }

    pub fn fit_into(&self, target: &[f64], out: &mut [f64]) {
        debug_assert_eq!(target.len(), out.len());
        let Some(factor) = &self.factor else {
            let m = target.iter().sum::<f64>() / target.len() as f64;
            out.iter_mut().for_each(|v| *v = m);
            return;
        };
        let coef = self.coefficients_with(factor, target);
        let k = self.n_terms;
        for (path, o) in out.iter_mut().enumerate().take(self.n_paths) {
            let row = &self.design[path * k..(path + 1) * k];
            *o = row.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
        }
    }

    /// Fits each of the `width` interleaved columns of `targets`
    /// (`n_paths x width`, row-major) and writes the fitted values in place
    /// of `out` with the same layout.
    pub fn fit_columns(&self, targets: &[f64], width: usize, out: &mut [f64]) {
        let mut column = vec![0.0; self.n_paths];
        let mut fitted = vec![0.0; self.n_paths];
        for c in 0..width {
            for (p, v) in column.iter_mut().enumerate() {
                *v = targets[p * width + c];
            }
            self.fit_into(&column, &mut fitted);
            for (p, v) in fitted.iter().enumerate() {
                out[p * width + c] = *v;
            }
        }
    }

    fn coefficients_with(
        &self,
        factor: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        target: &[f64],
    ) -> DVector<f64> {
        let k = self.n_terms;
        let mut rhs = DVector::zeros(k);
        for (path, &y) in target.iter().enumerate().take(self.n_paths) {
            let row = &self.design[path * k..(path + 1) * k];
            for (r, a) in rhs.iter_mut().zip(row) {
                *r += a * y;
            }
        }
        factor.solve(&rhs)
    }
}

/// `(coordinate, mean, std)` of every coordinate with non-negligible spread.
fn active_coordinates(features: &[f64], dim: usize, n_paths: usize) -> Vec<(usize, f64, f64)> {
    let mut active = Vec::new();
    if n_paths < 2 {
        return active;
    }
    for c in 0..dim {
        let mut sum = 0.0;
        for p in 0..n_paths {
            sum += features[p * dim + c];
        }
        let m = sum / n_paths as f64;
        let mut ss = 0.0;
        for p in 0..n_paths {
            let d = features[p * dim + c] - m;
            ss += d * d;
        }
        let s = (ss / n_paths as f64).sqrt();
        if s > 1e-12 * (1.0 + m.abs()) {
            active.push((c, m, s));
        }
    }
    active
}

fn gram_matrix(design: &[f64], n_paths: usize, k: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(k, k);
    for path in 0..n_paths {
        let row = &design[path * k..(path + 1) * k];
        for i in 0..k {
            let a = row[i];
            for j in i..k {
                g[(i, j)] += a * row[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

fn add_ridge(g: &mut DMatrix<f64>, ridge: f64) {
    for i in 1..g.nrows() {
        g[(i, i)] += ridge;
    }
}

/// Cholesky factor of the normal equations, adding a ridge when the Gram
/// matrix is singular or badly conditioned.
fn factorize(
    gram: DMatrix<f64>,
    ridge: f64,
    k: usize,
) -> (nalgebra::Cholesky<f64, nalgebra::Dyn>, f64) {
    let scale = (gram.trace() / k as f64).max(f64::MIN_POSITIVE);
    let mut applied = ridge.max(0.0);
    let mut g = gram.clone();
    add_ridge(&mut g, applied);
    loop {
        if let Some(ch) = nalgebra::Cholesky::new(g.clone()) {
            let diag = ch.l_dirty().diagonal();
            let lo = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            let hi = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if lo * lo > 1e-13 * hi * hi {
                return (ch, applied);
            }
        }
        let next = if applied == 0.0 {
            1e-10 * scale
        } else {
            applied * 100.0
        };
        log::warn!("regression normal equations rank deficient; ridge {next:e} applied");
        g = gram.clone();
        add_ridge(&mut g, next);
        applied = next;
        if applied > 1e6 * scale {
            // Pure intercept fit always factorizes.
            let mut fallback = DMatrix::zeros(k, k);
            fallback[(0, 0)] = gram[(0, 0)].max(1.0);
            for i in 1..k {
                fallback[(i, i)] = 1.0;
            }
            return (nalgebra::Cholesky::new(fallback).expect("diagonal"), applied);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_counts_match_binomials() {
        assert_eq!(monomials(1, 2).len(), 3);
        assert_eq!(monomials(2, 2).len(), 6);
        assert_eq!(monomials(3, 3).len(), 20);
        assert_eq!(monomials(2, 0).len(), 1);
    }

    #[test]
    fn constant_features_collapse_to_mean() {
        let features = vec![0.5; 10];
        let p = Projector::new(&features, 10, &BasisConfig::default());
        assert!(p.is_intercept_only());
        let target: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!(p.fit(&target).iter().all(|v| (*v - 4.5).abs() < 1e-15));
    }

    #[test]
    fn quadratic_target_reproduced_exactly() {
        let xs: Vec<f64> = (0..50).map(|i| -1.0 + 0.04 * i as f64).collect();
        let target: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 3.0 * x * x).collect();
        let p = Projector::new(&xs, 50, &BasisConfig::default());
        let fit = p.fit(&target);
        for (a, b) in fit.iter().zip(&target) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_coordinates_trigger_ridge_not_failure() {
        let xs: Vec<f64> = (0..40)
            .flat_map(|i| {
                let x = i as f64 / 40.0;
                [x, x]
            })
            .collect();
        let p = Projector::new(&xs, 40, &BasisConfig::default());
        assert!(p.ridge_used() > 0.0);
        let target: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let fit = p.fit(&target);
        for (a, b) in fit.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
