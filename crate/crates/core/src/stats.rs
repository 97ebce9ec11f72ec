//! Sample statistics and the log-log order fit.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{invalid, Result};

/// Mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
            };
        }
        let m = mean(values);
        let se = if n > 1 {
            (sample_variance(values, m) / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean: m,
            std_error: se,
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance around `mean`.
pub fn sample_variance(values: &[f64], mean: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
}

pub fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Two-sided 97.5% Student-t quantile.
pub fn student_t_975(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060,
        2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        d if d <= 30 => TABLE[d - 1],
        d if d <= 60 => 2.000 + (2.042 - 2.000) * (60 - d) as f64 / 30.0,
        d if d <= 120 => 1.980 + (2.000 - 1.980) * (120 - d) as f64 / 60.0,
        _ => 1.960,
    }
}

/// Least-squares slope of `log(error)` against `log(eps)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrderFitReport {
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope from the regression residuals.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl OrderFitReport {
    pub fn slope_within(&self, low: f64, high: f64) -> bool {
        self.slope >= low && self.slope <= high
    }
}

/// Fits `error ~ C eps^slope`. Needs at least four positive pairs.
pub fn fit_convergence_order(eps: &[f64], errors: &[f64]) -> Result<OrderFitReport> {
    if eps.len() != errors.len() {
        return Err(invalid("eps and error lists differ in length"));
    }
    if eps.len() < 4 {
        return Err(invalid("order fit needs at least 4 points"));
    }
    if let Some(bad) = eps.iter().chain(errors).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(invalid(alloc::format!(
            "order fit needs positive finite values, got {bad}"
        )));
    }
    let lx: Vec<f64> = eps.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = mean(&lx);
    let my = mean(&ly);
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 0.0 {
        return Err(invalid("order fit needs distinct eps values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    let half = student_t_975(lx.len() - 2) * se;
    Ok(OrderFitReport {
        eps: eps.to_vec(),
        errors: errors.to_vec(),
        slope,
        intercept,
        ci_low: slope - half,
        ci_high: slope + half,
    })
}
