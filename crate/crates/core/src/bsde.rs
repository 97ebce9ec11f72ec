//! Backward solvers.
//!
//! * [`solve_bsde_lsmc`]: least-squares Monte Carlo for the state BSDE with
//!   a (possibly quadratic) generator, implicit in `y`, explicit in `z`.
//! * [`solve_linear_bsde_weighted`]: scalar linear BSDE
//!   `dY = -(lambda Y + mu.Z + phi) dt + Z.dW` through the weight
//!   `Gamma~ = exp(int lambda) E(int mu.dW)`.
//! * [`solve_multidim_linear_bsde`]: `R^n`-valued linear BSDE with generator
//!   `A^T Y + sum_i (beta^i I + C^i)^T Z^i + f` through the flow pair.
//!
//! Conditional expectations are cross-path regressions on user-supplied
//! per-time features (normally the forward state).

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::bmo::{estimate_bmo2_norm, Conditioner, MartingalePathSet};
use crate::error::{invalid, shape, Error, Result};
use crate::linalg;
use crate::model::{ControlSystem, SystemDerivatives};
use crate::path_engine::{check_ensemble, check_finite, simulate_matrix_flow, BrownianEnsemble, ControlProcess, FlowCoefficients};
use crate::regression::{BasisConfig, Projector};
use crate::stats::{self, Estimate};
use crate::Paths;

/// Adapted solution `(X, Y, Z)` of the state system for one control.
///
/// `x` and `y` live on all grid times, `z` on the steps (`z_k` is used on
/// `[t_k, t_{k+1})`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlledTrajectory {
    pub x: Paths,
    pub y: Paths,
    pub z: Paths,
    pub u: ControlProcess,
}

impl ControlledTrajectory {
    pub fn n_paths(&self) -> usize {
        self.x.n_paths()
    }

    pub fn n_steps(&self) -> usize {
        self.z.n_times()
    }
}

/// Knobs of the regression solver.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LsmcConfig {
    pub basis: BasisConfig,
    /// Norm clip for `Z`; `None` uses the model's a-priori surrogate.
    pub z_truncation: Option<f64>,
    pub max_fixed_point_iterations: usize,
    pub fixed_point_tolerance: f64,
}

impl Default for LsmcConfig {
    fn default() -> Self {
        Self {
            basis: BasisConfig::default(),
            z_truncation: None,
            max_fixed_point_iterations: 10,
            fixed_point_tolerance: 1e-10,
        }
    }
}

/// Summary of one backward solve.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverReport {
    /// Time-0 value, one entry per component of `Y`.
    pub y0: Vec<f64>,
    pub y0_std_error: Vec<f64>,
    /// Fraction of (path, step) cells where `Z` was clipped.
    pub clip_rate: f64,
    pub z_truncation: Option<f64>,
    /// Largest number of fixed-point iterations used at any cell.
    pub max_iterations_used: usize,
}

/// Second-order Hermite polynomials of a Brownian increment: `dw_i^2 - dt`
/// for `i = j` and `dw_i dw_j` for `i < j`, in row order.
fn hermite_terms(dw: &[f64], dt: f64, out: &mut [f64]) {
    let mut idx = 0;
    for i in 0..dw.len() {
        for j in i..dw.len() {
            out[idx] = if i == j { dw[i] * dw[i] - dt } else { dw[i] * dw[j] };
            idx += 1;
        }
    }
}

/// Regression Monte Carlo for `dY = -f(t, X, Y, Z, u) dt + Z.dW`, `Y_T = Phi(X_T)`.
///
/// At each step, with `E_k` the regression on `X_k`:
/// `Z_k = E_k[(Y_{k+1} - E_k Y_{k+1}) dW_k] / dt` (clipped in norm) and
/// `Y_k = E_k Y_{k+1} + f(t_k, X_k, Y_k, Z_k, u_k) dt` solved by fixed point.
/// The conditional mean is fitted on `Y_{k+1}` minus its estimated first and
/// second-order Hermite components in `dW_k`, which have zero conditional mean.
///
/// The reported standard error is that of the pathwise realized cost
/// `Phi(X_T) + sum_k f_k dt`, whose mean is the time-0 value.
pub fn solve_bsde_lsmc<M: ControlSystem + ?Sized>(
    model: &M,
    x: &Paths,
    u: &ControlProcess,
    w: &BrownianEnsemble,
    config: &LsmcConfig,
    z_truncation: f64,
) -> Result<(ControlledTrajectory, SolverReport)> {
    check_ensemble(model, u, w)?;
    let grid = w.grid();
    let (np, n, d) = (w.n_paths(), model.state_dim(), model.noise_dim());
    if x.n_paths() != np || x.n_times() != grid.n_times() || x.dim() != n {
        return Err(shape("state paths do not match the ensemble"));
    }
    if !(z_truncation > 0.0) {
        return Err(invalid("z truncation must be positive"));
    }
    let dt = grid.dt();
    let last = grid.n_steps();
    let mut y = Paths::zeros(np, grid.n_times(), 1);
    let mut z = Paths::zeros(np, last, d);
    for path in 0..np {
        y.set_scalar(path, last, model.terminal(x.at(path, last)));
    }
    let mut realized: Vec<f64> = y.component(last, 0);
    let mut clipped = 0usize;
    let mut max_iter = 0usize;
    let mut target = vec![0.0; np];
    let mut zk = vec![0.0; np * d];
    let mut zfit = vec![0.0; np * d];
    let pairs = d * (d + 1) / 2;
    let mut hk = vec![0.0; np * pairs];
    let mut hfit = vec![0.0; np * pairs];
    // E[H^2] per Hermite term.
    let hermite_norms: Vec<f64> = (0..d)
        .flat_map(|i| (i..d).map(move |j| if i == j { 2.0 * dt * dt } else { dt * dt }))
        .collect();
    for k in (0..last).rev() {
        let t = grid.time(k);
        let proj = Projector::new(x.time_slice(k), np, &config.basis);
        let next = y.component(k + 1, 0);
        let mean = proj.fit(&next);
        for path in 0..np {
            let dev = next[path] - mean[path];
            let dw = w.increment(path, k);
            for i in 0..d {
                zk[path * d + i] = dev * dw[i] / dt;
            }
        }
        proj.fit_columns(&zk, d, &mut zfit);
        for path in 0..np {
            let zp = &mut zfit[path * d..(path + 1) * d];
            let norm = linalg::norm(zp);
            if norm > z_truncation {
                clipped += 1;
                zp.iter_mut().for_each(|v| *v *= z_truncation / norm);
            }
            target[path] = next[path] - linalg::dot(zp, w.increment(path, k));
        }
        for path in 0..np {
            let dev = next[path] - mean[path];
            hermite_terms(w.increment(path, k), dt, &mut hk[path * pairs..(path + 1) * pairs]);
            for (h, n) in hk[path * pairs..(path + 1) * pairs].iter_mut().zip(&hermite_norms) {
                *h *= dev / n;
            }
        }
        proj.fit_columns(&hk, pairs, &mut hfit);
        let mut terms = vec![0.0; pairs];
        for path in 0..np {
            hermite_terms(w.increment(path, k), dt, &mut terms);
            target[path] -= linalg::dot(&hfit[path * pairs..(path + 1) * pairs], &terms);
        }
        // Subtracting the martingale increment leaves the conditional mean
        // unchanged and removes the first-order noise from the fit.
        let mean = proj.fit(&target);
        for path in 0..np {
            let zp = &zfit[path * d..(path + 1) * d];
            let xk = x.at(path, k);
            let uk = u.at(path, k);
            let mut yk = mean[path];
            let mut converged = false;
            let mut residual = f64::INFINITY;
            for it in 1..=config.max_fixed_point_iterations {
                let updated = mean[path] + model.generator(t, xk, yk, zp, uk) * dt;
                residual = (updated - yk).abs();
                yk = updated;
                if residual <= config.fixed_point_tolerance * (1.0 + yk.abs()) {
                    max_iter = max_iter.max(it);
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NonConvergent { step: k, residual });
            }
            check_finite(&[yk], "Y", path, k)?;
            y.set_scalar(path, k, yk);
            z.at_mut(path, k).copy_from_slice(zp);
            target[path] = yk;
            realized[path] += model.generator(t, xk, yk, zp, uk) * dt;
        }
    }
    let y0 = stats::mean(&target);
    let se = Estimate::from_samples(&realized).std_error;
    let traj = ControlledTrajectory {
        x: x.clone(),
        y,
        z,
        u: u.clone(),
    };
    Ok((
        traj,
        SolverReport {
            y0: vec![y0],
            y0_std_error: vec![se],
            clip_rate: clipped as f64 / (np * last) as f64,
            z_truncation: Some(z_truncation),
            max_iterations_used: max_iter,
        },
    ))
}

/// Convenience wrapper: simulate `X` and solve with the configured (or
/// surrogate) truncation.
pub fn solve_state_system<M: SystemDerivatives + ?Sized>(
    model: &M,
    x0: &[f64],
    u: &ControlProcess,
    w: &BrownianEnsemble,
    config: &LsmcConfig,
) -> Result<(ControlledTrajectory, SolverReport)> {
    let x = crate::path_engine::simulate_forward_sde(model, x0, u, w)?;
    let trunc = config
        .z_truncation
        .unwrap_or_else(|| model.constants().default_z_truncation(w.grid().horizon()));
    solve_bsde_lsmc(model, &x, u, w, config, trunc)
}

/// Data of the scalar linear BSDE. Coefficients live on steps, the terminal
/// value on paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarLinearBsde {
    pub lambda: Paths,
    pub mu: Paths,
    pub phi: Paths,
    pub terminal: Vec<f64>,
}

impl ScalarLinearBsde {
    /// Evaluates `(lambda, mu, phi)` per path and step through `coeffs`,
    /// which fills `(lambda, mu, phi)` given `(path, step)`.
    pub fn from_fn(
        n_paths: usize,
        n_steps: usize,
        d: usize,
        terminal: Vec<f64>,
        mut coeffs: impl FnMut(usize, usize, &mut f64, &mut [f64], &mut f64),
    ) -> Self {
        let mut lambda = Paths::zeros(n_paths, n_steps, 1);
        let mut mu = Paths::zeros(n_paths, n_steps, d);
        let mut phi = Paths::zeros(n_paths, n_steps, 1);
        for k in 0..n_steps {
            for path in 0..n_paths {
                let (mut l, mut f) = (0.0, 0.0);
                coeffs(path, k, &mut l, mu.at_mut(path, k), &mut f);
                lambda.set_scalar(path, k, l);
                phi.set_scalar(path, k, f);
            }
        }
        Self {
            lambda,
            mu,
            phi,
            terminal,
        }
    }

    /// Same coefficients, `(phi, xi)` multiplied by `factor`.
    pub fn scaled_data(&self, factor: f64) -> Self {
        Self {
            lambda: self.lambda.clone(),
            mu: self.mu.clone(),
            phi: self.phi.scaled(factor),
            terminal: self.terminal.iter().map(|v| v * factor).collect(),
        }
    }
}

/// `Gamma = E(int mu.dW)` and `Gamma~ = exp(int lambda dt) Gamma` per path
/// and grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialWeight {
    pub gamma: Paths,
    pub gamma_tilde: Paths,
}

const LOG_WEIGHT_LIMIT: f64 = 700.0;

fn log_weight_step(lambda: f64, mu: &[f64], dw: &[f64], dt: f64) -> (f64, f64) {
    let stoch = linalg::dot(mu, dw) - 0.5 * linalg::norm_sq(mu) * dt;
    (stoch, stoch + lambda * dt)
}

pub fn exponential_weight(lambda: &Paths, mu: &Paths, w: &BrownianEnsemble) -> Result<ExponentialWeight> {
    let grid = w.grid();
    let np = w.n_paths();
    let dt = grid.dt();
    let mut gamma = Paths::zeros(np, grid.n_times(), 1);
    let mut gamma_tilde = Paths::zeros(np, grid.n_times(), 1);
    for path in 0..np {
        let (mut lg, mut lgt) = (0.0, 0.0);
        gamma.set_scalar(path, 0, 1.0);
        gamma_tilde.set_scalar(path, 0, 1.0);
        for k in 0..grid.n_steps() {
            let (a, b) = log_weight_step(lambda.scalar(path, k), mu.at(path, k), w.increment(path, k), dt);
            lg += a;
            lgt += b;
            if lg.abs() > LOG_WEIGHT_LIMIT || lgt.abs() > LOG_WEIGHT_LIMIT {
                return Err(Error::WeightOverflow { path, step: k + 1 });
            }
            gamma.set_scalar(path, k + 1, lg.exp());
            gamma_tilde.set_scalar(path, k + 1, lgt.exp());
        }
    }
    Ok(ExponentialWeight { gamma, gamma_tilde })
}

/// Options of the weighted solver.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct WeightedOptions {
    pub basis: BasisConfig,
    /// Norm clip applied to `mu` before building the weight.
    pub mu_bound: Option<f64>,
}

/// Solution of a linear BSDE: `y` has the dimension of the equation on every
/// grid time, `z` stores `(component r, noise i)` at `r * d + i` per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBsdeSolution {
    pub y: Paths,
    pub z: Paths,
    pub report: SolverReport,
}

fn check_scalar_data(data: &ScalarLinearBsde, w: &BrownianEnsemble) -> Result<()> {
    let (np, ns, d) = (w.n_paths(), w.grid().n_steps(), w.dim());
    let ok = data.lambda.n_paths() == np
        && data.lambda.n_times() == ns
        && data.lambda.dim() == 1
        && data.phi.n_paths() == np
        && data.phi.n_times() == ns
        && data.phi.dim() == 1
        && data.mu.n_paths() == np
        && data.mu.n_times() == ns
        && data.mu.dim() == d
        && data.terminal.len() == np;
    if ok {
        Ok(())
    } else {
        Err(shape("linear BSDE data does not match the ensemble"))
    }
}

/// Scalar linear BSDE by the weighted representation
/// `Y_t = E[(Gamma~_T / Gamma~_t) xi + int_t^T (Gamma~_s / Gamma~_t) phi_s ds | F_t]`.
///
/// The ratio inside the expectation is accumulated backward along each path
/// and then regressed on `features` at `t`. `Z` follows from the product rule
/// `d(Gamma~ Y) = -Gamma~ phi dt + Gamma~ (Y mu + Z).dW`: with
/// `V = (Gamma~_{k+1}/Gamma~_k) Y_{k+1}`,
/// `Z_k = E_k[(V - E_k V) dW_k] / dt - (E_k V + phi_k dt) mu_k`.
pub fn solve_linear_bsde_weighted(
    data: &ScalarLinearBsde,
    w: &BrownianEnsemble,
    features: &Paths,
    options: &WeightedOptions,
) -> Result<LinearBsdeSolution> {
    check_scalar_data(data, w)?;
    let grid = w.grid();
    let (np, d, dt) = (w.n_paths(), w.dim(), grid.dt());
    let last = grid.n_steps();
    if features.n_paths() != np || features.n_times() < last {
        return Err(shape("features must cover every path and step"));
    }

    // Clipped mu and the one-step weight ratios.
    let mut clipped = 0usize;
    let mut mu = data.mu.clone();
    if let Some(bound) = options.mu_bound {
        for k in 0..last {
            for path in 0..np {
                let m = mu.at_mut(path, k);
                let norm = linalg::norm(m);
                if norm > bound {
                    clipped += 1;
                    m.iter_mut().for_each(|v| *v *= bound / norm);
                }
            }
        }
        if clipped > 0 {
            log::warn!("mu clipped at {bound} on {clipped} cells");
        }
    }
    let mut ratio = Paths::zeros(np, last, 1);
    for path in 0..np {
        let mut log_total = 0.0;
        for k in 0..last {
            let (_, lr) = log_weight_step(data.lambda.scalar(path, k), mu.at(path, k), w.increment(path, k), dt);
            log_total += lr;
            if log_total.abs() > LOG_WEIGHT_LIMIT {
                return Err(Error::WeightOverflow { path, step: k + 1 });
            }
            ratio.set_scalar(path, k, lr.exp());
        }
    }

    let mut y = Paths::zeros(np, grid.n_times(), 1);
    let mut z = Paths::zeros(np, last, d);
    y.set_component(last, 0, &data.terminal);
    let mut s = data.terminal.clone();
    let mut v = vec![0.0; np];
    let mut cross = vec![0.0; np * d];
    let mut cross_fit = vec![0.0; np * d];
    for k in (0..last).rev() {
        for path in 0..np {
            let r = ratio.scalar(path, k);
            s[path] = data.phi.scalar(path, k) * dt + r * s[path];
            v[path] = r * y.scalar(path, k + 1);
        }
        let proj = Projector::new(features.time_slice(k), np, &options.basis);
        let yk = proj.fit(&s);
        let m = proj.fit(&v);
        for path in 0..np {
            let dw = w.increment(path, k);
            for i in 0..d {
                cross[path * d + i] = (v[path] - m[path]) * dw[i] / dt;
            }
        }
        proj.fit_columns(&cross, d, &mut cross_fit);
        for path in 0..np {
            check_finite(&[yk[path]], "Y", path, k)?;
            y.set_scalar(path, k, yk[path]);
            let mk = mu.at(path, k);
            let zk = z.at_mut(path, k);
            let implied = m[path] + data.phi.scalar(path, k) * dt;
            for i in 0..d {
                zk[i] = cross_fit[path * d + i] - implied * mk[i];
            }
        }
    }
    let est = Estimate::from_samples(&s);
    Ok(LinearBsdeSolution {
        report: SolverReport {
            y0: vec![stats::mean(&y.component(0, 0))],
            y0_std_error: vec![est.std_error],
            clip_rate: clipped as f64 / (np * last) as f64,
            z_truncation: options.mu_bound,
            max_iterations_used: 0,
        },
        y,
        z,
    })
}

/// Data of the `R^n`-valued linear BSDE: flow coefficients `(A, beta, C)`,
/// driver `f` (`n` per path and step) and terminal value (`n` per path,
/// stored as a single time).
#[derive(Debug, Clone)]
pub struct MultiLinearBsde<C> {
    pub coefficients: C,
    pub driver: Paths,
    pub terminal: Paths,
}

/// Multi-dimensional linear BSDE through the flow representation
/// `Y_t = E[Lambda_t^T X_T^T xi + int_t^T Lambda_t^T X_s^T f_s ds | F_t]`.
///
/// `Z^i = (X_t^T)^-1 psi^i - (D^i)^T Y_t`, where `psi` is the integrand of the
/// martingale `X^T Y + int X^T f`. With `V = (X_{k+1} Lambda_k)^T Y_{k+1}`,
/// `(X_t^T)^-1 psi^i dt` is the regression of `(V - E_k V) dW^i_k`, and the
/// `Y_t` in the correction is the one-step value `E_k V + f_k dt`.
pub fn solve_multidim_linear_bsde<C: FlowCoefficients + ?Sized>(
    data: &MultiLinearBsde<&C>,
    w: &BrownianEnsemble,
    features: &Paths,
    basis: &BasisConfig,
) -> Result<LinearBsdeSolution> {
    let coeffs = data.coefficients;
    let n = coeffs.dim();
    let d = coeffs.noise_dim();
    let grid = w.grid();
    let (np, dt, last) = (w.n_paths(), grid.dt(), grid.n_steps());
    if data.driver.n_paths() != np || data.driver.n_times() != last || data.driver.dim() != n {
        return Err(shape("driver does not match the ensemble"));
    }
    if data.terminal.n_paths() != np || data.terminal.dim() != n {
        return Err(shape("terminal value does not match the ensemble"));
    }
    if features.n_paths() != np || features.n_times() < last {
        return Err(shape("features must cover every path and step"));
    }
    let pair = simulate_matrix_flow(coeffs, w)?;
    let nn = n * n;

    let mut y = Paths::zeros(np, grid.n_times(), n);
    let mut z = Paths::zeros(np, last, n * d);
    let mut acc = vec![0.0; np * n];
    let mut tmp = vec![0.0; n];
    for path in 0..np {
        let xi = data.terminal.at(path, 0);
        y.at_mut(path, last).copy_from_slice(xi);
        linalg::matvec_t(pair.x.at(path, last), xi, n, n, &mut tmp);
        acc[path * n..(path + 1) * n].copy_from_slice(&tmp);
    }
    let mut target = vec![0.0; np * n];
    let mut fitted = vec![0.0; np * n];
    let mut v = vec![0.0; np * n];
    let mut vmean = vec![0.0; np * n];
    let mut cross = vec![0.0; np * n * d];
    let mut cross_fit = vec![0.0; np * n * d];
    let mut g = vec![0.0; nn];
    let mut dmat = vec![0.0; d * nn];
    let mut dty = vec![0.0; n];
    let mut implied = vec![0.0; n];
    for k in (0..last).rev() {
        for path in 0..np {
            let xk = pair.x.at(path, k);
            linalg::matvec_t(xk, data.driver.at(path, k), n, n, &mut tmp);
            let a = &mut acc[path * n..(path + 1) * n];
            for (o, t) in a.iter_mut().zip(&tmp) {
                *o += t * dt;
            }
            linalg::matvec_t(pair.lambda.at(path, k), a, n, n, &mut target[path * n..(path + 1) * n]);
            linalg::matmul(pair.x.at(path, k + 1), pair.lambda.at(path, k), n, n, n, &mut g);
            linalg::matvec_t(&g, y.at(path, k + 1), n, n, &mut v[path * n..(path + 1) * n]);
        }
        let proj = Projector::new(features.time_slice(k), np, basis);
        proj.fit_columns(&target, n, &mut fitted);
        proj.fit_columns(&v, n, &mut vmean);
        for path in 0..np {
            let dw = w.increment(path, k);
            for r in 0..n {
                let dev = v[path * n + r] - vmean[path * n + r];
                for i in 0..d {
                    cross[(path * n + r) * d + i] = dev * dw[i] / dt;
                }
            }
        }
        proj.fit_columns(&cross, n * d, &mut cross_fit);
        for path in 0..np {
            let yk = &fitted[path * n..(path + 1) * n];
            check_finite(yk, "Y", path, k)?;
            y.at_mut(path, k).copy_from_slice(yk);
            coeffs.noise_matrices(path, k, &mut dmat);
            let drv = data.driver.at(path, k);
            for r in 0..n {
                implied[r] = vmean[path * n + r] + drv[r] * dt;
            }
            let zk = z.at_mut(path, k);
            for i in 0..d {
                linalg::matvec_t(&dmat[i * nn..(i + 1) * nn], &implied, n, n, &mut dty);
                for r in 0..n {
                    zk[r * d + i] = cross_fit[(path * n + r) * d + i] - dty[r];
                }
            }
        }
    }
    let mut y0 = Vec::with_capacity(n);
    let mut se = Vec::with_capacity(n);
    for r in 0..n {
        let comp: Vec<f64> = (0..np).map(|p| target[p * n + r]).collect();
        y0.push(stats::mean(&y.component(0, r)));
        se.push(Estimate::from_samples(&comp).std_error);
    }
    Ok(LinearBsdeSolution {
        y,
        z,
        report: SolverReport {
            y0,
            y0_std_error: se,
            clip_rate: 0.0,
            z_truncation: None,
            max_iterations_used: 0,
        },
    })
}

/// A-priori bound check for a solved trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AprioriReport {
    pub sup_abs_y: f64,
    pub z_bmo2_estimate: f64,
    pub candidate_bound: f64,
    pub exceeded: bool,
}

/// Reports `sup |Y|` and the grid-time BMO2 estimate of `Z.W`, flagging when
/// their sum exceeds `candidate_bound` (default: the model's surrogate).
pub fn verify_apriori_bounds<M: SystemDerivatives + ?Sized>(
    traj: &ControlledTrajectory,
    model: &M,
    w: &BrownianEnsemble,
    basis: &BasisConfig,
    candidate_bound: Option<f64>,
) -> Result<AprioriReport> {
    let sup_abs_y = traj.y.max_abs();
    let m = MartingalePathSet::from_integrand(&traj.z, w)?;
    let z_bmo2_estimate = estimate_bmo2_norm(&m, &Conditioner::on(&traj.x, *basis));
    let candidate_bound =
        candidate_bound.unwrap_or_else(|| model.constants().apriori_surrogate(w.grid().horizon()));
    Ok(AprioriReport {
        sup_abs_y,
        z_bmo2_estimate,
        candidate_bound,
        exceeded: sup_abs_y + z_bmo2_estimate > candidate_bound,
    })
}
