//! Spike variations and the expansion-order experiments.
//!
//! A spike replaces the candidate control `u_bar` by another admissible
//! control on the grid-aligned window `E = [t0, t0 + eps)`. Along the
//! candidate trajectory the first and second-order variational processes
//! are simulated by Euler-Maruyama on the same Brownian ensemble as the
//! candidate (common random numbers):
//!
//! ```text
//! dX1 = b_x X1 dt + sum_i [sigma_x^i X1 + sigma^i_hat 1_E] dW^i
//! dX2 = [b_x X2 + b_hat 1_E + 1/2 b_xx X1 X1] dt
//!       + sum_i [sigma_x^i X2 + sigma_x^i_hat X1 1_E + 1/2 sigma_xx^i X1 X1] dW^i
//! ```
//!
//! `(Y1, Z1)` and `(Y2, Z2)` follow pointwise from the adjoint processes,
//! except for the auxiliary pair `(Y_hat, Z_hat)`, a scalar linear BSDE with
//! source supported on `E`.
//!
//! Hatted quantities are differences between the replacement and the
//! candidate control at the candidate state, e.g.
//! `b_hat = b(t, X_bar, u) - b(t, X_bar, u_bar)`, and `Delta^i = sigma^i_hat^T p`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::adjoint::{AdjointBundle, LocalDerivatives};
use crate::bsde::{
    solve_bsde_lsmc, solve_linear_bsde_weighted, ControlledTrajectory, LinearBsdeSolution, LsmcConfig, ScalarLinearBsde,
    WeightedOptions,
};
use crate::error::{invalid, shape, Result};
use crate::linalg;
use crate::model::SystemDerivatives;
use crate::path_engine::{check_finite, simulate_forward_sde, BrownianEnsemble, ControlProcess};
pub use crate::stats::{fit_convergence_order, OrderFitReport};
use crate::stats;
use crate::{Paths, TimeGrid};

/// Spike window and replacement control.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikePerturbation {
    start_step: usize,
    width_steps: usize,
    replacement: ControlProcess,
}

impl SpikePerturbation {
    /// Window `[t0, t0 + eps)`; both ends must lie on the grid.
    pub fn new(grid: TimeGrid, t0: f64, eps: f64, replacement: ControlProcess) -> Result<Self> {
        let start_step = grid.steps_in(t0)?;
        let width_steps = grid.steps_in(eps)?;
        Self::from_steps(grid, start_step, width_steps, replacement)
    }

    pub fn from_steps(grid: TimeGrid, start_step: usize, width_steps: usize, replacement: ControlProcess) -> Result<Self> {
        if start_step + width_steps > grid.n_steps() {
            return Err(invalid("spike window leaves the horizon"));
        }
        if replacement.n_steps() != grid.n_steps() {
            return Err(shape("replacement control does not match the grid"));
        }
        Ok(Self {
            start_step,
            width_steps,
            replacement,
        })
    }

    /// Spike to the constant control `value`.
    pub fn constant(grid: TimeGrid, t0: f64, eps: f64, base: &ControlProcess, value: &[f64]) -> Result<Self> {
        let replacement = ControlProcess::constant(base.domain().clone(), base.n_paths(), grid, value)?;
        Self::new(grid, t0, eps, replacement)
    }

    pub fn start_step(&self) -> usize {
        self.start_step
    }

    pub fn width_steps(&self) -> usize {
        self.width_steps
    }

    pub fn replacement(&self) -> &ControlProcess {
        &self.replacement
    }

    pub fn eps(&self, grid: TimeGrid) -> f64 {
        self.width_steps as f64 * grid.dt()
    }

    /// Whether step `k` lies in the window.
    pub fn contains(&self, k: usize) -> bool {
        k >= self.start_step && k < self.start_step + self.width_steps
    }
}

/// `u_bar` outside the window, the replacement inside.
pub fn build_spiked_control(base: &ControlProcess, spike: &SpikePerturbation) -> Result<ControlProcess> {
    let rep = spike.replacement();
    if rep.n_paths() != base.n_paths() || rep.n_steps() != base.n_steps() || rep.dim() != base.dim() {
        return Err(shape("replacement control does not match the candidate"));
    }
    let mut values = base.values().clone();
    for k in spike.start_step..spike.start_step + spike.width_steps {
        for path in 0..base.n_paths() {
            values.at_mut(path, k).copy_from_slice(rep.at(path, k));
        }
    }
    ControlProcess::new(base.domain().clone(), values)
}

/// Coefficient differences between the replacement and the candidate control
/// at one cell: `b_hat` (`n`), `sigma_hat` (`n x d`), `sigma_x_hat` (`d`
/// blocks of `n x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeIncrement {
    n: usize,
    d: usize,
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub diffusion_x: Vec<f64>,
    scratch: Vec<f64>,
}

impl SpikeIncrement {
    pub fn new(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            drift: vec![0.0; n],
            diffusion: vec![0.0; n * d],
            diffusion_x: vec![0.0; d * n * n],
            scratch: vec![0.0; (d * n * n).max(n * d)],
        }
    }

    pub fn eval<M: SystemDerivatives + ?Sized>(&mut self, model: &M, t: f64, x: &[f64], u_bar: &[f64], u: &[f64]) {
        let (n, d) = (self.n, self.d);
        model.drift(t, x, u, &mut self.drift);
        model.drift(t, x, u_bar, &mut self.scratch[..n]);
        for (o, s) in self.drift.iter_mut().zip(&self.scratch[..n]) {
            *o -= s;
        }
        model.diffusion(t, x, u, &mut self.diffusion);
        model.diffusion(t, x, u_bar, &mut self.scratch[..n * d]);
        for (o, s) in self.diffusion.iter_mut().zip(&self.scratch[..n * d]) {
            *o -= s;
        }
        model.diffusion_x(t, x, u, &mut self.diffusion_x);
        model.diffusion_x(t, x, u_bar, &mut self.scratch[..d * n * n]);
        for (o, s) in self.diffusion_x.iter_mut().zip(&self.scratch[..d * n * n]) {
            *o -= s;
        }
    }

    /// `sigma^i_hat`, column `i` of the diffusion difference.
    pub fn sigma_hat(&self, i: usize, out: &mut [f64]) {
        linalg::column(&self.diffusion, self.n, self.d, i, out);
    }

    pub fn sigma_x_hat(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.diffusion_x[i * nn..(i + 1) * nn]
    }

    /// `Delta^i = sigma^i_hat^T p`.
    pub fn delta(&self, p: &[f64], out: &mut [f64]) {
        linalg::matvec_t(&self.diffusion, p, self.n, self.d, out);
    }
}

/// Source of the auxiliary equation at one cell inside the window:
/// `p^T b_hat + sum_i q^i^T sigma^i_hat + f_hat(Delta) + 1/2 sum_i sigma^i_hat^T P sigma^i_hat`,
/// with `f_hat(Delta) = f(t, x, y, z + Delta, u) - f(t, x, y, z, u_bar)`.
#[allow(clippy::too_many_arguments)]
pub fn auxiliary_source<M: SystemDerivatives + ?Sized>(
    model: &M,
    inc: &SpikeIncrement,
    t: f64,
    x: &[f64],
    y: f64,
    z: &[f64],
    u_bar: &[f64],
    u: &[f64],
    p: &[f64],
    q: &[f64],
    p2: &[f64],
) -> f64 {
    let (n, d) = (inc.n, inc.d);
    let mut delta = vec![0.0; d];
    inc.delta(p, &mut delta);
    let shifted: Vec<f64> = z.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let f_hat = model.generator(t, x, y, &shifted, u) - model.generator(t, x, y, z, u_bar);
    let mut col = vec![0.0; n];
    let mut quad = 0.0;
    for i in 0..d {
        inc.sigma_hat(i, &mut col);
        quad += linalg::quadratic_form(p2, &col, &col);
    }
    linalg::dot(p, &inc.drift) + linalg::dot(q, &inc.diffusion) + f_hat + 0.5 * quad
}

fn cell(traj: &ControlledTrajectory, path: usize, k: usize) -> (&[f64], f64, &[f64], &[f64]) {
    (traj.x.at(path, k), traj.y.scalar(path, k), traj.z.at(path, k), traj.u.at(path, k))
}

fn check_inputs<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    w: &BrownianEnsemble,
) -> Result<()> {
    let grid = w.grid();
    if traj.n_paths() != w.n_paths() || traj.n_steps() != grid.n_steps() || w.dim() != model.noise_dim() {
        return Err(shape("trajectory does not match the ensemble"));
    }
    if spike.replacement.n_paths() != w.n_paths() || spike.replacement.n_steps() != grid.n_steps() {
        return Err(shape("spike does not match the ensemble"));
    }
    Ok(())
}

/// First-order variational state `X1`.
pub fn solve_x1<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    w: &BrownianEnsemble,
) -> Result<Paths> {
    check_inputs(model, traj, spike, w)?;
    let grid = w.grid();
    let (n, d, np, dt) = (model.state_dim(), model.noise_dim(), w.n_paths(), grid.dt());
    let mut x1 = Paths::zeros(np, grid.n_times(), n);
    let mut bx = vec![0.0; n * n];
    let mut sx = vec![0.0; d * n * n];
    let mut inc = SpikeIncrement::new(n, d);
    let mut next = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut col = vec![0.0; n];
    for path in 0..np {
        for k in 0..grid.n_steps() {
            let t = grid.time(k);
            let (x, _, _, ub) = cell(traj, path, k);
            model.drift_x(t, x, ub, &mut bx);
            model.diffusion_x(t, x, ub, &mut sx);
            let cur = x1.at(path, k);
            let dw = w.increment(path, k);
            next.copy_from_slice(cur);
            linalg::matvec(&bx, cur, n, n, &mut tmp);
            for (o, v) in next.iter_mut().zip(&tmp) {
                *o += v * dt;
            }
            for i in 0..d {
                linalg::matvec(&sx[i * n * n..(i + 1) * n * n], cur, n, n, &mut tmp);
                for (o, v) in next.iter_mut().zip(&tmp) {
                    *o += v * dw[i];
                }
            }
            if spike.contains(k) {
                inc.eval(model, t, x, ub, spike.replacement.at(path, k));
                for i in 0..d {
                    inc.sigma_hat(i, &mut col);
                    for (o, v) in next.iter_mut().zip(&col) {
                        *o += v * dw[i];
                    }
                }
            }
            check_finite(&next, "X1", path, k + 1)?;
            x1.at_mut(path, k + 1).copy_from_slice(&next);
        }
    }
    Ok(x1)
}

/// Second-order variational state `X2`.
pub fn solve_x2<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    x1: &Paths,
    w: &BrownianEnsemble,
) -> Result<Paths> {
    check_inputs(model, traj, spike, w)?;
    let grid = w.grid();
    let (n, d, np, dt) = (model.state_dim(), model.noise_dim(), w.n_paths(), grid.dt());
    if x1.n_paths() != np || x1.n_times() != grid.n_times() || x1.dim() != n {
        return Err(shape("X1 does not match the ensemble"));
    }
    let nn = n * n;
    let mut derivs = LocalDerivatives::new(n, d);
    let mut inc = SpikeIncrement::new(n, d);
    let mut x2 = Paths::zeros(np, grid.n_times(), n);
    let mut next = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for path in 0..np {
        for k in 0..grid.n_steps() {
            let t = grid.time(k);
            let (x, _, _, ub) = cell(traj, path, k);
            model.drift_x(t, x, ub, &mut derivs.drift_x);
            model.diffusion_x(t, x, ub, &mut derivs.diffusion_x);
            model.drift_xx(t, x, ub, &mut derivs.drift_xx);
            model.diffusion_xx(t, x, ub, &mut derivs.diffusion_xx);
            let cur = x2.at(path, k);
            let v1 = x1.at(path, k);
            let dw = w.increment(path, k);
            let inside = spike.contains(k);
            if inside {
                inc.eval(model, t, x, ub, spike.replacement.at(path, k));
            }
            next.copy_from_slice(cur);
            linalg::matvec(&derivs.drift_x, cur, n, n, &mut tmp);
            for a in 0..n {
                let mut drift = tmp[a] + 0.5 * linalg::quadratic_form(derivs.b_xx(a), v1, v1);
                if inside {
                    drift += inc.drift[a];
                }
                next[a] += drift * dt;
            }
            for i in 0..d {
                linalg::matvec(derivs.sigma_x(i), cur, n, n, &mut tmp);
                for a in 0..n {
                    tmp[a] += 0.5 * linalg::quadratic_form(derivs.sigma_xx(a, i), v1, v1);
                }
                if inside {
                    let sxh = &inc.diffusion_x[i * nn..(i + 1) * nn];
                    for a in 0..n {
                        tmp[a] += linalg::dot(&sxh[a * n..(a + 1) * n], v1);
                    }
                }
                for (o, v) in next.iter_mut().zip(&tmp) {
                    *o += v * dw[i];
                }
            }
            check_finite(&next, "X2", path, k + 1)?;
            x2.at_mut(path, k + 1).copy_from_slice(&next);
        }
    }
    Ok(x2)
}

/// `Y1 = p^T X1` on every grid time and
/// `Z1^i = p^T sigma^i_hat 1_E + (p^T sigma_x^i + q^i^T) X1` on the steps.
pub fn compute_y1z1<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    grid: TimeGrid,
    p: &Paths,
    q: &Paths,
    x1: &Paths,
) -> Result<(Paths, Paths)> {
    let (n, d, np) = (model.state_dim(), model.noise_dim(), traj.n_paths());
    if p.n_times() != grid.n_times() || x1.n_times() != grid.n_times() || q.n_times() != grid.n_steps() || p.n_paths() != np {
        return Err(shape("adjoint or X1 does not match the grid"));
    }
    let mut y1 = Paths::zeros(np, grid.n_times(), 1);
    let mut z1 = Paths::zeros(np, grid.n_steps(), d);
    let mut sx = vec![0.0; d * n * n];
    let mut inc = SpikeIncrement::new(n, d);
    let mut row = vec![0.0; n];
    let mut delta = vec![0.0; d];
    for path in 0..np {
        for k in 0..grid.n_times() {
            let (pk, v1) = (p.at(path, k), x1.at(path, k));
            y1.set_scalar(path, k, linalg::dot(pk, v1));
            if k == grid.n_steps() {
                continue;
            }
            let t = grid.time(k);
            let (x, _, _, ub) = cell(traj, path, k);
            model.diffusion_x(t, x, ub, &mut sx);
            let qk = q.at(path, k);
            if spike.contains(k) {
                inc.eval(model, t, x, ub, spike.replacement.at(path, k));
                inc.delta(pk, &mut delta);
            } else {
                delta.iter_mut().for_each(|v| *v = 0.0);
            }
            let zk = z1.at_mut(path, k);
            for i in 0..d {
                linalg::matvec_t(&sx[i * n * n..(i + 1) * n * n], pk, n, n, &mut row);
                for a in 0..n {
                    row[a] += qk[a * d + i];
                }
                zk[i] = delta[i] + linalg::dot(&row, v1);
            }
        }
    }
    Ok((y1, z1))
}

/// Auxiliary pair `(Y_hat, Z_hat)`: the scalar linear BSDE with
/// `lambda = f_y`, `mu = f_z`, zero terminal value and
/// [`auxiliary_source`] on the window, solved with
/// [`solve_linear_bsde_weighted`] on the candidate state.
pub fn solve_yhat<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    adjoints: &AdjointBundle,
    w: &BrownianEnsemble,
    options: &WeightedOptions,
) -> Result<LinearBsdeSolution> {
    let data = auxiliary_data(model, traj, spike, adjoints, w.grid())?;
    solve_linear_bsde_weighted(&data, w, &traj.x, options)
}

/// Data of the auxiliary equation.
pub fn auxiliary_data<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    adjoints: &AdjointBundle,
    grid: TimeGrid,
) -> Result<ScalarLinearBsde> {
    let (n, d, np) = (model.state_dim(), model.noise_dim(), traj.n_paths());
    if adjoints.p.n_paths() != np || adjoints.p.n_times() != grid.n_times() {
        return Err(shape("adjoints do not match the trajectory"));
    }
    let mut grad = vec![0.0; n + 1 + d];
    let mut inc = SpikeIncrement::new(n, d);
    Ok(ScalarLinearBsde::from_fn(np, grid.n_steps(), d, vec![0.0; np], |path, k, lambda, mu, phi| {
        let t = grid.time(k);
        let (x, y, z, ub) = cell(traj, path, k);
        model.generator_grad(t, x, y, z, ub, &mut grad);
        *lambda = grad[n];
        mu.copy_from_slice(&grad[n + 1..]);
        *phi = if spike.contains(k) {
            let u = spike.replacement.at(path, k);
            inc.eval(model, t, x, ub, u);
            auxiliary_source(
                model,
                &inc,
                t,
                x,
                y,
                z,
                ub,
                u,
                adjoints.p.at(path, k),
                adjoints.q.at(path, k),
                adjoints.p2.at(path, k),
            )
        } else {
            0.0
        };
    }))
}

/// `Y2 = Y_hat + p^T X2 + 1/2 X1^T P X1` on the grid times and
/// `Z2^i = Z_hat^i + Z_tilde^i` on the steps, where
///
/// ```text
/// Z_tilde^i = (p^T sigma_x^i + q^i^T) X2
///           + 1/2 X1^T [sigma_x^i^T P + P sigma_x^i + Q^i + sum_a p^a sigma_xx^{ai}] X1
///           + (sigma^i_hat^T P + p^T sigma_x^i_hat) X1 1_E.
/// ```
#[allow(clippy::too_many_arguments)]
pub fn compute_y2z2<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    grid: TimeGrid,
    yhat: &LinearBsdeSolution,
    adjoints: &AdjointBundle,
    x1: &Paths,
    x2: &Paths,
) -> Result<(Paths, Paths)> {
    let (n, d, np) = (model.state_dim(), model.noise_dim(), traj.n_paths());
    let nn = n * n;
    if yhat.y.n_times() != grid.n_times() || x2.n_times() != grid.n_times() || x1.n_times() != grid.n_times() {
        return Err(shape("auxiliary pair or variations do not match the grid"));
    }
    let mut y2 = Paths::zeros(np, grid.n_times(), 1);
    let mut z2 = Paths::zeros(np, grid.n_steps(), d);
    let mut derivs = LocalDerivatives::new(n, d);
    let mut inc = SpikeIncrement::new(n, d);
    let mut row = vec![0.0; n];
    let mut mat = vec![0.0; nn];
    let mut tmp = vec![0.0; nn];
    let mut col = vec![0.0; n];
    for path in 0..np {
        for k in 0..grid.n_times() {
            let (pk, big_p) = (adjoints.p.at(path, k), adjoints.p2.at(path, k));
            let (v1, v2) = (x1.at(path, k), x2.at(path, k));
            y2.set_scalar(
                path,
                k,
                yhat.y.scalar(path, k) + linalg::dot(pk, v2) + 0.5 * linalg::quadratic_form(big_p, v1, v1),
            );
            if k == grid.n_steps() {
                continue;
            }
            let t = grid.time(k);
            let (x, _, _, ub) = cell(traj, path, k);
            model.diffusion_x(t, x, ub, &mut derivs.diffusion_x);
            model.diffusion_xx(t, x, ub, &mut derivs.diffusion_xx);
            let inside = spike.contains(k);
            if inside {
                inc.eval(model, t, x, ub, spike.replacement.at(path, k));
            }
            let qk = adjoints.q.at(path, k);
            let big_q = adjoints.q2.at(path, k);
            let zh = yhat.z.at(path, k);
            let zk = z2.at_mut(path, k);
            for i in 0..d {
                let sx = derivs.sigma_x(i);
                linalg::matvec_t(sx, pk, n, n, &mut row);
                for a in 0..n {
                    row[a] += qk[a * d + i];
                }
                let mut value = zh[i] + linalg::dot(&row, v2);
                // sigma_x^T P + P sigma_x + Q^i + sum_a p^a sigma_xx^{ai}
                linalg::transpose(sx, n, n, &mut tmp);
                linalg::matmul(&tmp, big_p, n, n, n, &mut mat);
                linalg::matmul(big_p, sx, n, n, n, &mut tmp);
                for r in 0..nn {
                    mat[r] += tmp[r] + big_q[i * nn + r];
                }
                for a in 0..n {
                    for (o, h) in mat.iter_mut().zip(derivs.sigma_xx(a, i)) {
                        *o += pk[a] * h;
                    }
                }
                value += 0.5 * linalg::quadratic_form(&mat, v1, v1);
                if inside {
                    inc.sigma_hat(i, &mut col);
                    linalg::matvec_t(big_p, &col, n, n, &mut row);
                    let mut lin = linalg::dot(&row, v1);
                    linalg::matvec(inc.sigma_x_hat(i), v1, n, n, &mut row);
                    lin += linalg::dot(pk, &row);
                    value += lin;
                }
                zk[i] = value;
            }
        }
    }
    Ok((y2, z2))
}

/// Features `(X_bar, X1)` stacked per path and time.
pub fn stacked_features(a: &Paths, b: &Paths) -> Result<Paths> {
    if a.n_paths() != b.n_paths() || a.n_times() != b.n_times() {
        return Err(shape("feature sets differ in shape"));
    }
    let (da, db) = (a.dim(), b.dim());
    Ok(Paths::from_fn(a.n_paths(), a.n_times(), da + db, |path, k, out| {
        out[..da].copy_from_slice(a.at(path, k));
        out[da..].copy_from_slice(b.at(path, k));
    }))
}

/// Solves the first-order backward variational equation directly:
/// linear BSDE with `lambda = f_y`, `mu = f_z`,
/// `phi = f_x^T X1 - (f_z^T Delta + sum_i sigma^i_hat^T q^i) 1_E` and
/// terminal value `Phi_x(X_T)^T X1(T)`, regressed on `(X_bar, X1)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_y1_direct<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    p: &Paths,
    q: &Paths,
    x1: &Paths,
    w: &BrownianEnsemble,
    options: &WeightedOptions,
) -> Result<LinearBsdeSolution> {
    let grid = w.grid();
    let (n, d, np, last) = (model.state_dim(), model.noise_dim(), traj.n_paths(), grid.n_steps());
    let mut grad = vec![0.0; n + 1 + d];
    let mut inc = SpikeIncrement::new(n, d);
    let mut delta = vec![0.0; d];
    let mut phi_x = vec![0.0; n];
    let terminal: Vec<f64> = (0..np)
        .map(|path| {
            model.terminal_grad(traj.x.at(path, last), &mut phi_x);
            linalg::dot(&phi_x, x1.at(path, last))
        })
        .collect();
    let data = ScalarLinearBsde::from_fn(np, last, d, terminal, |path, k, lambda, mu, phi| {
        let t = grid.time(k);
        let (x, y, z, ub) = cell(traj, path, k);
        model.generator_grad(t, x, y, z, ub, &mut grad);
        *lambda = grad[n];
        mu.copy_from_slice(&grad[n + 1..]);
        let mut value = linalg::dot(&grad[..n], x1.at(path, k));
        if spike.contains(k) {
            inc.eval(model, t, x, ub, spike.replacement.at(path, k));
            inc.delta(p.at(path, k), &mut delta);
            value -= linalg::dot(&grad[n + 1..], &delta) + linalg::dot(&inc.diffusion, q.at(path, k));
        }
        *phi = value;
    });
    let features = stacked_features(&traj.x, x1)?;
    solve_linear_bsde_weighted(&data, w, &features, options)
}

/// Variational processes of one spike.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalSolution {
    pub x1: Paths,
    pub x2: Paths,
    pub y1: Paths,
    pub z1: Paths,
    pub y2: Paths,
    pub z2: Paths,
    pub yhat: LinearBsdeSolution,
}

pub fn solve_variations<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    spike: &SpikePerturbation,
    adjoints: &AdjointBundle,
    w: &BrownianEnsemble,
    options: &WeightedOptions,
) -> Result<VariationalSolution> {
    let grid = w.grid();
    let x1 = solve_x1(model, traj, spike, w)?;
    let x2 = solve_x2(model, traj, spike, &x1, w)?;
    let (y1, z1) = compute_y1z1(model, traj, spike, grid, &adjoints.p, &adjoints.q, &x1)?;
    let yhat = solve_yhat(model, traj, spike, adjoints, w, options)?;
    let (y2, z2) = compute_y2z2(model, traj, spike, grid, &yhat, adjoints, &x1, &x2)?;
    Ok(VariationalSolution {
        x1,
        x2,
        y1,
        z1,
        y2,
        z2,
        yhat,
    })
}

/// Expansion residuals `xi^j`, `eta^j`, `zeta^j` (`j = 1, 2, 3`) and the
/// time-0 value residual `Y^eps_0 - Y_bar_0 - Y1(0) - Y2(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionResiduals {
    pub xi: [Paths; 3],
    pub eta: [Paths; 3],
    pub zeta: [Paths; 3],
    pub value_residual: f64,
}

/// Telescoping residuals between the perturbed and the candidate solution.
pub fn expansion_residuals(
    base: &ControlledTrajectory,
    perturbed: &ControlledTrajectory,
    var: &VariationalSolution,
) -> Result<ExpansionResiduals> {
    let xi1 = perturbed.x.difference(&base.x)?;
    let xi2 = xi1.difference(&var.x1)?;
    let xi3 = xi2.difference(&var.x2)?;
    let eta1 = perturbed.y.difference(&base.y)?;
    let eta2 = eta1.difference(&var.y1)?;
    let eta3 = eta2.difference(&var.y2)?;
    let zeta1 = perturbed.z.difference(&base.z)?;
    let zeta2 = zeta1.difference(&var.z1)?;
    let zeta3 = zeta2.difference(&var.z2)?;
    let value_residual = stats::mean(&eta3.component(0, 0));
    Ok(ExpansionResiduals {
        xi: [xi1, xi2, xi3],
        eta: [eta1, eta2, eta3],
        zeta: [zeta1, zeta2, zeta3],
        value_residual,
    })
}

/// Everything the spike experiment needs besides the spike itself.
#[derive(Debug, Clone, Copy)]
pub struct SpikeContext<'a, M: ?Sized> {
    pub model: &'a M,
    pub x0: &'a [f64],
    pub base: &'a ControlledTrajectory,
    pub base_y0: f64,
    pub adjoints: &'a AdjointBundle,
    pub w: &'a BrownianEnsemble,
    pub lsmc: &'a LsmcConfig,
    pub z_truncation: f64,
    pub weighted: &'a WeightedOptions,
}

/// Moment functionals of one spike experiment.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpikeMetrics {
    pub eps: f64,
    pub width_steps: usize,
    /// `E[sup |xi^1|^2]`.
    pub state_gap_sq: f64,
    /// `E[sup |X1|^2]`.
    pub x1_sq: f64,
    /// `E[sup |xi^2|^2]`.
    pub state_gap2_sq: f64,
    /// `E[sup |X2|^2]`.
    pub x2_sq: f64,
    /// `E[sup |xi^3|^2]`.
    pub state_gap3_sq: f64,
    /// `E[sup |eta^1|^2] + E[int |zeta^1|^2]`.
    pub value_gap_sq: f64,
    /// `E[sup |Y1|^2] + E[int |Z1|^2]`.
    pub y1_sq: f64,
    /// `E[sup |eta^2|^2] + E[int |zeta^2|^2]`.
    pub value_gap2_sq: f64,
    /// Same with the candidate's `Gamma = E(int f_z dW)` weights.
    pub value_gap2_weighted: f64,
    pub perturbed_y0: f64,
    pub perturbed_y0_std_error: f64,
    pub y1_0: f64,
    pub y2_0: f64,
    pub yhat_0: f64,
    pub yhat_0_std_error: f64,
    /// `Y^eps_0 - Y_bar_0 - Y1(0) - Y2(0)`.
    pub value_residual: f64,
}

fn mean_sq(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
}

/// Runs one spike: perturbed state system, variational processes and the
/// moment functionals.
pub fn run_spike<M: SystemDerivatives + ?Sized>(ctx: &SpikeContext<'_, M>, spike: &SpikePerturbation) -> Result<SpikeMetrics> {
    let (model, base, w) = (ctx.model, ctx.base, ctx.w);
    let grid = w.grid();
    let (np, dt, last) = (w.n_paths(), grid.dt(), grid.n_steps());
    let u_eps = build_spiked_control(&base.u, spike)?;
    let x_eps = simulate_forward_sde(model, ctx.x0, &u_eps, w)?;
    let (perturbed, report) = solve_bsde_lsmc(model, &x_eps, &u_eps, w, ctx.lsmc, ctx.z_truncation)?;
    drop(x_eps);
    let var = solve_variations(model, base, spike, ctx.adjoints, w, ctx.weighted)?;

    let n = model.state_dim();
    let d = model.noise_dim();
    let mut sup = [vec![0.0_f64; np], vec![0.0; np], vec![0.0; np], vec![0.0; np], vec![0.0; np]];
    let mut eta_sup = [vec![0.0_f64; np], vec![0.0; np], vec![0.0; np]];
    let mut zeta_int = [vec![0.0_f64; np], vec![0.0; np], vec![0.0; np]];
    let mut weighted_sup = vec![0.0_f64; np];
    let mut weighted_int = vec![0.0_f64; np];
    let mut log_gamma = vec![0.0_f64; np];
    let mut grad = vec![0.0; n + 1 + d];
    let mut gap = vec![0.0; n];
    for k in 0..grid.n_times() {
        for path in 0..np {
            let (xb, xe) = (base.x.at(path, k), perturbed.x.at(path, k));
            let (v1, v2) = (var.x1.at(path, k), var.x2.at(path, k));
            for a in 0..n {
                gap[a] = xe[a] - xb[a];
            }
            sup[0][path] = sup[0][path].max(linalg::norm(&gap));
            sup[1][path] = sup[1][path].max(linalg::norm(v1));
            for a in 0..n {
                gap[a] -= v1[a];
            }
            sup[2][path] = sup[2][path].max(linalg::norm(&gap));
            sup[3][path] = sup[3][path].max(linalg::norm(v2));
            for a in 0..n {
                gap[a] -= v2[a];
            }
            sup[4][path] = sup[4][path].max(linalg::norm(&gap));

            let e1 = perturbed.y.scalar(path, k) - base.y.scalar(path, k);
            let y1 = var.y1.scalar(path, k);
            let e2 = e1 - y1;
            let gamma = log_gamma[path].exp();
            eta_sup[0][path] = eta_sup[0][path].max(e1.abs());
            eta_sup[1][path] = eta_sup[1][path].max(y1.abs());
            eta_sup[2][path] = eta_sup[2][path].max(e2.abs());
            weighted_sup[path] = weighted_sup[path].max(gamma * e2 * e2);

            if k < last {
                let (zb, ze, z1) = (base.z.at(path, k), perturbed.z.at(path, k), var.z1.at(path, k));
                let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
                for i in 0..d {
                    let g1 = ze[i] - zb[i];
                    s1 += g1 * g1;
                    s2 += z1[i] * z1[i];
                    s3 += (g1 - z1[i]) * (g1 - z1[i]);
                }
                zeta_int[0][path] += s1 * dt;
                zeta_int[1][path] += s2 * dt;
                zeta_int[2][path] += s3 * dt;
                weighted_int[path] += gamma * s3 * dt;
                let (x, y, z, ub) = cell(base, path, k);
                model.generator_grad(grid.time(k), x, y, z, ub, &mut grad);
                let fz = &grad[n + 1..];
                log_gamma[path] += linalg::dot(fz, w.increment(path, k)) - 0.5 * linalg::norm_sq(fz) * dt;
            }
        }
    }

    let y1_0 = stats::mean(&var.y1.component(0, 0));
    let y2_0 = stats::mean(&var.y2.component(0, 0));
    let perturbed_y0 = report.y0[0];
    Ok(SpikeMetrics {
        eps: spike.eps(grid),
        width_steps: spike.width_steps(),
        state_gap_sq: mean_sq(&sup[0]),
        x1_sq: mean_sq(&sup[1]),
        state_gap2_sq: mean_sq(&sup[2]),
        x2_sq: mean_sq(&sup[3]),
        state_gap3_sq: mean_sq(&sup[4]),
        value_gap_sq: mean_sq(&eta_sup[0]) + stats::mean(&zeta_int[0]),
        y1_sq: mean_sq(&eta_sup[1]) + stats::mean(&zeta_int[1]),
        value_gap2_sq: mean_sq(&eta_sup[2]) + stats::mean(&zeta_int[2]),
        value_gap2_weighted: stats::mean(&weighted_sup) + stats::mean(&weighted_int),
        perturbed_y0,
        perturbed_y0_std_error: report.y0_std_error[0],
        y1_0,
        y2_0,
        yhat_0: var.yhat.report.y0[0],
        yhat_0_std_error: var.yhat.report.y0_std_error[0],
        value_residual: perturbed_y0 - ctx.base_y0 - y1_0 - y2_0,
    })
}

/// One fitted order with its acceptance window.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrderCheck {
    pub tag: String,
    pub expected_slope: f64,
    pub low: f64,
    pub high: f64,
    /// Informational checks do not affect the suite verdict.
    pub required: bool,
    pub fit: Option<OrderFitReport>,
    pub pass: bool,
}

/// Acceptance windows of the spike suite.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpikeSuiteTolerances {
    /// Half-width around slope 1.
    pub first_order: f64,
    /// Half-width around slope 2.
    pub second_order: f64,
    /// Largest allowed `(max - min) / mean` of `Y2(0) / eps`.
    pub ratio_spread: f64,
}

impl Default for SpikeSuiteTolerances {
    fn default() -> Self {
        Self {
            first_order: 0.2,
            second_order: 0.3,
            ratio_spread: 0.25,
        }
    }
}

/// Verdict of the spike-order suite over an `eps` ladder.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpikeSuiteReport {
    /// Sorted by decreasing `eps`.
    pub metrics: Vec<SpikeMetrics>,
    pub checks: Vec<OrderCheck>,
    pub y2_ratio_spread: f64,
    pub yhat_ratio_spread: f64,
    /// `|Y^eps_0 - Y_bar_0 - Y1(0) - Y2(0)| / eps` along the ladder.
    pub residual_ratios: Vec<f64>,
    pub residual_decreasing: bool,
    pub pass: bool,
}

/// `(max - min) / mean` of the absolute values.
pub fn ratio_spread(values: &[f64]) -> f64 {
    let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / stats::mean(&abs)
}

/// Whether every entry is strictly below its predecessor.
pub fn strictly_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn order_check(tag: &str, eps: &[f64], errors: &[f64], expected: f64, half_width: f64, required: bool) -> OrderCheck {
    let (low, high) = (expected - half_width, expected + half_width);
    let fit = fit_convergence_order(eps, errors).ok();
    let pass = fit.as_ref().is_some_and(|f| f.slope_within(low, high));
    OrderCheck {
        tag: tag.into(),
        expected_slope: expected,
        low,
        high,
        required,
        fit,
        pass,
    }
}

/// Fits the expansion orders over the ladder and applies the tolerances.
pub fn summarize_spike_suite(mut metrics: Vec<SpikeMetrics>, tol: &SpikeSuiteTolerances) -> SpikeSuiteReport {
    metrics.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let eps: Vec<f64> = metrics.iter().map(|m| m.eps).collect();
    let column = |f: fn(&SpikeMetrics) -> f64| -> Vec<f64> { metrics.iter().map(f).collect() };
    let (one, two) = (tol.first_order, tol.second_order);
    let checks = vec![
        order_check("state gap, first order", &eps, &column(|m| m.state_gap_sq), 1.0, one, true),
        order_check("first variation X1", &eps, &column(|m| m.x1_sq), 1.0, one, true),
        order_check("state gap, second order", &eps, &column(|m| m.state_gap2_sq), 2.0, two, true),
        order_check("second variation X2", &eps, &column(|m| m.x2_sq), 2.0, two, true),
        order_check("value gap, first order", &eps, &column(|m| m.value_gap_sq), 1.0, one, true),
        order_check("first variation Y1, Z1", &eps, &column(|m| m.y1_sq), 1.0, one, false),
        order_check("value gap, second order", &eps, &column(|m| m.value_gap2_sq), 2.0, two, false),
        order_check("value gap, second order, weighted", &eps, &column(|m| m.value_gap2_weighted), 2.0, 2.0 * two, false),
    ];
    let y2_ratios: Vec<f64> = metrics.iter().map(|m| m.y2_0 / m.eps).collect();
    let yhat_ratios: Vec<f64> = metrics.iter().map(|m| m.yhat_0 / m.eps).collect();
    let residual_ratios: Vec<f64> = metrics.iter().map(|m| m.value_residual.abs() / m.eps).collect();
    let y2_ratio_spread = ratio_spread(&y2_ratios);
    let yhat_ratio_spread = ratio_spread(&yhat_ratios);
    let residual_decreasing = strictly_decreasing(&residual_ratios);
    let pass = metrics.len() >= 4
        && checks.iter().filter(|c| c.required).all(|c| c.pass)
        && y2_ratio_spread <= tol.ratio_spread
        && residual_decreasing;
    SpikeSuiteReport {
        metrics,
        checks,
        y2_ratio_spread,
        yhat_ratio_spread,
        residual_ratios,
        residual_decreasing,
        pass,
    }
}

/// Runs the ladder `widths` (in steps) sequentially from `start_step` with a
/// constant replacement control and summarizes it.
pub fn run_spike_suite<M: SystemDerivatives + ?Sized>(
    ctx: &SpikeContext<'_, M>,
    start_step: usize,
    widths: &[usize],
    replacement: &[f64],
    tol: &SpikeSuiteTolerances,
) -> Result<SpikeSuiteReport> {
    let grid = ctx.w.grid();
    let control = ControlProcess::constant(ctx.base.u.domain().clone(), ctx.w.n_paths(), grid, replacement)?;
    let mut metrics = Vec::with_capacity(widths.len());
    for &width in widths {
        let spike = SpikePerturbation::from_steps(grid, start_step, width, control.clone())?;
        metrics.push(run_spike(ctx, &spike)?);
    }
    Ok(summarize_spike_suite(metrics, tol))
}
