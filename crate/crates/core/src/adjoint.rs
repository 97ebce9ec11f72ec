//! First and second-order adjoint processes along a candidate trajectory.
//!
//! The first-order pair `(p, q)` solves
//!
//! ```text
//! -dp = [A^T p + sum_i (f_{z_i} I + (sigma_x^i)^T) q^i + f_x] dt - sum_i q^i dW^i,
//! A = sum_i f_{z_i} sigma_x^i + f_y I + b_x,      p_T = Phi_x(X_T),
//! ```
//!
//! and the second-order pair `(P, Q)` solves the symmetric-matrix equation
//!
//! ```text
//! -dP = [L(P) + sum_i K_i(Q^i) + phi] dt - sum_i Q^i dW^i,   P_T = Phi_xx(X_T),
//! L(P)   = f_y P + sum_i f_{z_i} (sigma_x^i^T P + P sigma_x^i) + b_x^T P + P b_x
//!          + sum_i sigma_x^i^T P sigma_x^i,
//! K_i(Q) = f_{z_i} Q + sigma_x^i^T Q + Q sigma_x^i,
//! ```
//!
//! with source `phi = sum_a b_xx^a p^a + sum_{a,j} sigma_xx^{aj} (f_{z_j} p^a + q^{aj})
//! + G D^2f G^T`, `G = (I, p, Upsilon)` and `Upsilon^j = sigma_x^j^T p + q^j`.
//!
//! Both are mapped onto [`solve_multidim_linear_bsde`]; the matrix equation
//! is written in the orthonormal coordinates of [`SymmetricBasis`], so `P`
//! and every `Q^i` are symmetric by construction.
//!
//! Layouts: `p` is `n` per time; `q` and `upsilon` are `n x d` (entry
//! `(a, i)` at `a * d + i`); `P` is `n x n`; `Q` is `d` blocks of `n x n`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use crate::bsde::{solve_multidim_linear_bsde, ControlledTrajectory, MultiLinearBsde, SolverReport};
use crate::error::{shape, Result};
use crate::linalg::{self, SymmetricBasis};
use crate::model::SystemDerivatives;
use crate::path_engine::{check_finite, BrownianEnsemble, FlowCoefficients};
use crate::regression::BasisConfig;
use crate::{Paths, TimeGrid};

/// Coefficient derivatives at one `(t, x, y, z, u)`.
///
/// Layouts follow [`SystemDerivatives`].
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDerivatives {
    n: usize,
    d: usize,
    pub drift_x: Vec<f64>,
    pub diffusion_x: Vec<f64>,
    pub drift_xx: Vec<f64>,
    pub diffusion_xx: Vec<f64>,
    pub generator_grad: Vec<f64>,
    pub generator_hessian: Vec<f64>,
}

impl LocalDerivatives {
    pub fn new(n: usize, d: usize) -> Self {
        let m = n + 1 + d;
        Self {
            n,
            d,
            drift_x: vec![0.0; n * n],
            diffusion_x: vec![0.0; d * n * n],
            drift_xx: vec![0.0; n * n * n],
            diffusion_xx: vec![0.0; n * d * n * n],
            generator_grad: vec![0.0; m],
            generator_hessian: vec![0.0; m * m],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn noise_dim(&self) -> usize {
        self.d
    }

    /// First derivatives only.
    pub fn eval_first<M: SystemDerivatives + ?Sized>(&mut self, model: &M, t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64]) {
        model.drift_x(t, x, u, &mut self.drift_x);
        model.diffusion_x(t, x, u, &mut self.diffusion_x);
        model.generator_grad(t, x, y, z, u, &mut self.generator_grad);
    }

    pub fn eval<M: SystemDerivatives + ?Sized>(&mut self, model: &M, t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64]) {
        self.eval_first(model, t, x, y, z, u);
        model.drift_xx(t, x, u, &mut self.drift_xx);
        model.diffusion_xx(t, x, u, &mut self.diffusion_xx);
        model.generator_hessian(t, x, y, z, u, &mut self.generator_hessian);
    }

    pub fn f_x(&self) -> &[f64] {
        &self.generator_grad[..self.n]
    }

    pub fn f_y(&self) -> f64 {
        self.generator_grad[self.n]
    }

    pub fn f_z(&self) -> &[f64] {
        &self.generator_grad[self.n + 1..]
    }

    /// Jacobian of the diffusion column `i`.
    pub fn sigma_x(&self, i: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.diffusion_x[i * nn..(i + 1) * nn]
    }

    /// Hessian of the drift component `a`.
    pub fn b_xx(&self, a: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.drift_xx[a * nn..(a + 1) * nn]
    }

    /// Hessian of the diffusion entry `(a, j)`.
    pub fn sigma_xx(&self, a: usize, j: usize) -> &[f64] {
        let nn = self.n * self.n;
        let block = a * self.d + j;
        &self.diffusion_xx[block * nn..(block + 1) * nn]
    }
}

/// Evaluates `derivs` at cell `(path, k)` of `traj`.
pub(crate) fn eval_at_cell<M: SystemDerivatives + ?Sized>(
    derivs: &mut LocalDerivatives,
    model: &M,
    traj: &ControlledTrajectory,
    t: f64,
    path: usize,
    k: usize,
    second_order: bool,
) {
    let (x, y, z, u) = (traj.x.at(path, k), traj.y.scalar(path, k), traj.z.at(path, k), traj.u.at(path, k));
    if second_order {
        derivs.eval(model, t, x, y, z, u);
    } else {
        derivs.eval_first(model, t, x, y, z, u);
    }
}

/// Flow coefficients stored per path and step.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedFlowCoefficients {
    n: usize,
    d: usize,
    a: Paths,
    beta: Paths,
    c: Paths,
}

impl TabulatedFlowCoefficients {
    /// Fills `(A, beta, C)` for every path and step with `f(path, k, a, beta, c)`.
    pub fn tabulate(
        n: usize,
        d: usize,
        n_paths: usize,
        n_steps: usize,
        mut f: impl FnMut(usize, usize, &mut [f64], &mut [f64], &mut [f64]),
    ) -> Self {
        let nn = n * n;
        let mut a = Paths::zeros(n_paths, n_steps, nn);
        let mut beta = Paths::zeros(n_paths, n_steps, d);
        let mut c = Paths::zeros(n_paths, n_steps, d * nn);
        let mut ab = vec![0.0; nn];
        let mut bb = vec![0.0; d];
        let mut cb = vec![0.0; d * nn];
        for k in 0..n_steps {
            for path in 0..n_paths {
                f(path, k, &mut ab, &mut bb, &mut cb);
                a.at_mut(path, k).copy_from_slice(&ab);
                beta.at_mut(path, k).copy_from_slice(&bb);
                c.at_mut(path, k).copy_from_slice(&cb);
            }
        }
        Self { n, d, a, beta, c }
    }
}

impl FlowCoefficients for TabulatedFlowCoefficients {
    fn dim(&self) -> usize {
        self.n
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn eval(&self, path: usize, step: usize, a: &mut [f64], beta: &mut [f64], c: &mut [f64]) {
        a.copy_from_slice(self.a.at(path, step));
        beta.copy_from_slice(self.beta.at(path, step));
        c.copy_from_slice(self.c.at(path, step));
    }
}

fn check_trajectory<M: SystemDerivatives + ?Sized>(model: &M, traj: &ControlledTrajectory, w: &BrownianEnsemble) -> Result<()> {
    let grid = w.grid();
    let (np, n, d) = (w.n_paths(), model.state_dim(), model.noise_dim());
    if w.dim() != d {
        return Err(shape("ensemble dimension differs from the model noise"));
    }
    let ok = traj.x.n_paths() == np
        && traj.x.n_times() == grid.n_times()
        && traj.x.dim() == n
        && traj.y.n_paths() == np
        && traj.y.n_times() == grid.n_times()
        && traj.z.n_paths() == np
        && traj.z.n_times() == grid.n_steps()
        && traj.z.dim() == d
        && traj.u.n_paths() == np
        && traj.u.n_steps() == grid.n_steps();
    if ok {
        Ok(())
    } else {
        Err(shape("trajectory does not match the ensemble"))
    }
}

/// Data of the first-order adjoint equation as a multi-dimensional linear BSDE.
pub fn assemble_first_order<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    grid: TimeGrid,
) -> Result<MultiLinearBsde<TabulatedFlowCoefficients>> {
    let (n, d, np, last) = (model.state_dim(), model.noise_dim(), traj.n_paths(), grid.n_steps());
    if traj.z.n_times() != last || traj.x.n_times() != grid.n_times() {
        return Err(shape("trajectory does not match the grid"));
    }
    let nn = n * n;
    let mut derivs = LocalDerivatives::new(n, d);
    let mut driver = Paths::zeros(np, last, n);
    let coefficients = TabulatedFlowCoefficients::tabulate(n, d, np, last, |path, k, a, beta, c| {
        eval_at_cell(&mut derivs, model, traj, grid.time(k), path, k, false);
        a.copy_from_slice(&derivs.drift_x);
        let fy = derivs.f_y();
        for r in 0..n {
            a[r * n + r] += fy;
        }
        for i in 0..d {
            let fz = derivs.f_z()[i];
            for (o, s) in a.iter_mut().zip(derivs.sigma_x(i)) {
                *o += fz * s;
            }
            beta[i] = fz;
        }
        c.copy_from_slice(&derivs.diffusion_x[..d * nn]);
        driver.at_mut(path, k).copy_from_slice(derivs.f_x());
    });
    let mut terminal = Paths::zeros(np, 1, n);
    for path in 0..np {
        model.terminal_grad(traj.x.at(path, last), terminal.at_mut(path, 0));
    }
    Ok(MultiLinearBsde {
        coefficients,
        driver,
        terminal,
    })
}

/// Solution `(p, q)` of the first-order adjoint equation.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderAdjoint {
    pub p: Paths,
    pub q: Paths,
    pub report: SolverReport,
    /// `max |p|` over paths and times (boundedness surrogate).
    pub sup_abs_p: f64,
}

pub fn solve_first_order<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    w: &BrownianEnsemble,
    basis: &BasisConfig,
) -> Result<FirstOrderAdjoint> {
    check_trajectory(model, traj, w)?;
    let data = assemble_first_order(model, traj, w.grid())?;
    let sol = solve_multidim_linear_bsde(
        &MultiLinearBsde {
            coefficients: &data.coefficients,
            driver: data.driver,
            terminal: data.terminal,
        },
        w,
        &traj.x,
        basis,
    )?;
    Ok(FirstOrderAdjoint {
        sup_abs_p: sol.y.max_abs(),
        p: sol.y,
        q: sol.z,
        report: sol.report,
    })
}

/// `Upsilon^j = sigma_x^j^T p + q^j` for one cell.
pub fn upsilon_cell(derivs: &LocalDerivatives, p: &[f64], q: &[f64], out: &mut [f64]) {
    let (n, d) = (derivs.n, derivs.d);
    let mut col = vec![0.0; n];
    for j in 0..d {
        linalg::matvec_t(derivs.sigma_x(j), p, n, n, &mut col);
        for a in 0..n {
            out[a * d + j] = col[a] + q[a * d + j];
        }
    }
}

/// The source `phi` of the second-order equation at one cell.
pub fn second_order_source_cell(derivs: &LocalDerivatives, p: &[f64], q: &[f64], upsilon: &[f64], out: &mut [f64]) {
    let (n, d) = (derivs.n, derivs.d);
    let nn = n * n;
    out[..nn].iter_mut().for_each(|v| *v = 0.0);
    let fz = derivs.f_z();
    for a in 0..n {
        for (o, h) in out.iter_mut().zip(derivs.b_xx(a)) {
            *o += h * p[a];
        }
        for j in 0..d {
            let weight = fz[j] * p[a] + q[a * d + j];
            for (o, h) in out.iter_mut().zip(derivs.sigma_xx(a, j)) {
                *o += h * weight;
            }
        }
    }
    // G D^2f G^T with G = (I, p, Upsilon), an n x (n + 1 + d) matrix.
    let m = n + 1 + d;
    let mut g = vec![0.0; n * m];
    for a in 0..n {
        g[a * m + a] = 1.0;
        g[a * m + n] = p[a];
        for j in 0..d {
            g[a * m + n + 1 + j] = upsilon[a * d + j];
        }
    }
    let mut gh = vec![0.0; n * m];
    linalg::matmul(&g, &derivs.generator_hessian, n, m, m, &mut gh);
    for a in 0..n {
        for b in 0..n {
            out[a * n + b] += linalg::dot(&gh[a * m..(a + 1) * m], &g[b * m..(b + 1) * m]);
        }
    }
}

/// Source `phi` and `Upsilon` along the trajectory, both on the steps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSource {
    pub phi: Paths,
    pub upsilon: Paths,
}

pub fn assemble_second_order_source<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    grid: TimeGrid,
    p: &Paths,
    q: &Paths,
) -> Result<AdjointSource> {
    let (n, d, np, last) = (model.state_dim(), model.noise_dim(), traj.n_paths(), grid.n_steps());
    if p.n_paths() != np || p.n_times() < last || p.dim() != n || q.n_paths() != np || q.n_times() != last || q.dim() != n * d {
        return Err(shape("first-order adjoint does not match the trajectory"));
    }
    let mut derivs = LocalDerivatives::new(n, d);
    let mut phi = Paths::zeros(np, last, n * n);
    let mut upsilon = Paths::zeros(np, last, n * d);
    for k in 0..last {
        for path in 0..np {
            eval_at_cell(&mut derivs, model, traj, grid.time(k), path, k, true);
            let (pk, qk) = (p.at(path, k), q.at(path, k));
            upsilon_cell(&derivs, pk, qk, upsilon.at_mut(path, k));
            second_order_source_cell(&derivs, pk, qk, upsilon.at(path, k), phi.at_mut(path, k));
            check_finite(phi.at(path, k), "second-order source", path, k)?;
        }
    }
    Ok(AdjointSource { phi, upsilon })
}

/// `L(P)` of the second-order equation for one cell.
pub fn second_order_state_map(derivs: &LocalDerivatives, pm: &[f64], out: &mut [f64]) {
    let (n, d) = (derivs.n, derivs.d);
    let nn = n * n;
    let mut t1 = vec![0.0; nn];
    let mut t2 = vec![0.0; nn];
    let mut st = vec![0.0; nn];
    let fy = derivs.f_y();
    for (o, v) in out.iter_mut().zip(pm) {
        *o = fy * v;
    }
    // b_x^T P + P b_x
    linalg::transpose(&derivs.drift_x, n, n, &mut st);
    linalg::matmul(&st, pm, n, n, n, &mut t1);
    linalg::matmul(pm, &derivs.drift_x, n, n, n, &mut t2);
    for r in 0..nn {
        out[r] += t1[r] + t2[r];
    }
    for i in 0..d {
        let sx = derivs.sigma_x(i);
        let fz = derivs.f_z()[i];
        linalg::transpose(sx, n, n, &mut st);
        linalg::matmul(&st, pm, n, n, n, &mut t1);
        linalg::matmul(pm, sx, n, n, n, &mut t2);
        for r in 0..nn {
            out[r] += fz * (t1[r] + t2[r]);
        }
        // sigma_x^T P sigma_x
        linalg::matmul(&t1, sx, n, n, n, &mut t2);
        for r in 0..nn {
            out[r] += t2[r];
        }
    }
}

/// `sigma_x^i^T Q + Q sigma_x^i`, the non-scalar part of `K_i`.
pub fn second_order_noise_map(derivs: &LocalDerivatives, i: usize, qm: &[f64], out: &mut [f64]) {
    let n = derivs.n;
    let nn = n * n;
    let sx = derivs.sigma_x(i);
    let mut st = vec![0.0; nn];
    let mut t1 = vec![0.0; nn];
    linalg::transpose(sx, n, n, &mut st);
    linalg::matmul(&st, qm, n, n, n, &mut t1);
    linalg::matmul(qm, sx, n, n, n, out);
    for r in 0..nn {
        out[r] += t1[r];
    }
}

/// Data of the second-order adjoint equation in symmetric coordinates.
pub fn assemble_second_order<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    grid: TimeGrid,
    source: &AdjointSource,
) -> Result<MultiLinearBsde<TabulatedFlowCoefficients>> {
    let (n, d, np, last) = (model.state_dim(), model.noise_dim(), traj.n_paths(), grid.n_steps());
    if source.phi.n_paths() != np || source.phi.n_times() != last {
        return Err(shape("source does not match the trajectory"));
    }
    let basis = SymmetricBasis::new(n);
    let m = basis.len();
    let mm = m * m;
    let mut derivs = LocalDerivatives::new(n, d);
    let mut op = vec![0.0; mm];
    let mut driver = Paths::zeros(np, last, m);
    let coefficients = TabulatedFlowCoefficients::tabulate(m, d, np, last, |path, k, a, beta, c| {
        eval_at_cell(&mut derivs, model, traj, grid.time(k), path, k, false);
        // A^T = matrix of L, so A is its transpose.
        basis.operator_matrix(|e, out| second_order_state_map(&derivs, e, out), &mut op);
        linalg::transpose(&op, m, m, a);
        for i in 0..d {
            beta[i] = derivs.f_z()[i];
            basis.operator_matrix(|e, out| second_order_noise_map(&derivs, i, e, out), &mut op);
            linalg::transpose(&op, m, m, &mut c[i * mm..(i + 1) * mm]);
        }
        basis.coordinates(source.phi.at(path, k), driver.at_mut(path, k));
    });
    let mut terminal = Paths::zeros(np, 1, m);
    let mut hess = vec![0.0; n * n];
    for path in 0..np {
        model.terminal_hessian(traj.x.at(path, last), &mut hess);
        basis.coordinates(&hess, terminal.at_mut(path, 0));
    }
    Ok(MultiLinearBsde {
        coefficients,
        driver,
        terminal,
    })
}

/// Solution `(P, Q)` of the second-order adjoint equation.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderAdjoint {
    /// `P`, `n x n` per grid time.
    pub p2: Paths,
    /// `Q^1, ..., Q^d`, each `n x n`, per step.
    pub q2: Paths,
    pub report: SolverReport,
}

pub fn solve_second_order<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    source: &AdjointSource,
    w: &BrownianEnsemble,
    basis: &BasisConfig,
) -> Result<SecondOrderAdjoint> {
    check_trajectory(model, traj, w)?;
    let grid = w.grid();
    let data = assemble_second_order(model, traj, grid, source)?;
    let sol = solve_multidim_linear_bsde(
        &MultiLinearBsde {
            coefficients: &data.coefficients,
            driver: data.driver,
            terminal: data.terminal,
        },
        w,
        &traj.x,
        basis,
    )?;
    let (n, d, np) = (model.state_dim(), model.noise_dim(), traj.n_paths());
    let sym = SymmetricBasis::new(n);
    let m = sym.len();
    let nn = n * n;
    let mut p2 = Paths::zeros(np, grid.n_times(), nn);
    let mut q2 = Paths::zeros(np, grid.n_steps(), d * nn);
    let mut coords = vec![0.0; m];
    for k in 0..grid.n_times() {
        for path in 0..np {
            sym.matrix(sol.y.at(path, k), p2.at_mut(path, k));
            if k < grid.n_steps() {
                let z = sol.z.at(path, k);
                let out = q2.at_mut(path, k);
                for i in 0..d {
                    for (r, c) in coords.iter_mut().enumerate() {
                        *c = z[r * d + i];
                    }
                    sym.matrix(&coords, &mut out[i * nn..(i + 1) * nn]);
                }
            }
        }
    }
    Ok(SecondOrderAdjoint {
        p2,
        q2,
        report: sol.report,
    })
}

/// All adjoint processes along one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointBundle {
    pub p: Paths,
    pub q: Paths,
    pub p2: Paths,
    pub q2: Paths,
    pub upsilon: Paths,
    pub first_report: SolverReport,
    pub second_report: SolverReport,
    pub sup_abs_p: f64,
}

impl AdjointBundle {
    /// Largest `||P - P^T||` over paths and times.
    pub fn max_asymmetry(&self) -> f64 {
        let nn = self.p2.dim();
        let n = (nn as f64).sqrt().round() as usize;
        let mut worst = 0.0_f64;
        for k in 0..self.p2.n_times() {
            for path in 0..self.p2.n_paths() {
                worst = worst.max(linalg::asymmetry(self.p2.at(path, k), n));
            }
        }
        worst
    }
}

/// Solves both adjoint equations along `traj`.
pub fn solve_adjoints<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    w: &BrownianEnsemble,
    basis: &BasisConfig,
) -> Result<AdjointBundle> {
    let first = solve_first_order(model, traj, w, basis)?;
    let source = assemble_second_order_source(model, traj, w.grid(), &first.p, &first.q)?;
    let second = solve_second_order(model, traj, &source, w, basis)?;
    Ok(AdjointBundle {
        p: first.p,
        q: first.q,
        p2: second.p2,
        q2: second.q2,
        upsilon: source.upsilon,
        first_report: first.report,
        second_report: second.report,
        sup_abs_p: first.sup_abs_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bsde::{solve_bsde_lsmc, LsmcConfig};
    use crate::models::{CoupledSmoothModel, ScalarLinearModel};
    use crate::path_engine::{generate_brownian, simulate_forward_sde, ControlProcess};

    fn trajectory<M: SystemDerivatives>(model: &M, np: usize, ns: usize, seed: u64) -> (ControlledTrajectory, BrownianEnsemble) {
        let grid = TimeGrid::new(1.0, ns).unwrap();
        let w = generate_brownian(np, grid, model.noise_dim(), seed).unwrap();
        let zero = vec![0.0; model.control_dim()];
        let u = ControlProcess::constant(model.control_domain(), np, grid, &zero).unwrap();
        let x0 = vec![0.0; model.state_dim()];
        let x = simulate_forward_sde(model, &x0, &u, &w).unwrap();
        let (traj, _) = solve_bsde_lsmc(model, &x, &u, &w, &LsmcConfig::default(), 50.0).unwrap();
        (traj, w)
    }

    #[test]
    fn zero_derivative_model_gives_constant_p() {
        let model = ScalarLinearModel {
            vol_level: 1.0,
            terminal: [0.0, 1.7, 0.0, 0.0],
            ..ScalarLinearModel::default()
        };
        let (traj, w) = trajectory(&model, 300, 20, 1);
        let adj = solve_adjoints(&model, &traj, &w, &BasisConfig::default()).unwrap();
        assert!(adj.p.as_slice().iter().all(|v| (v - 1.7).abs() < 1e-10));
        assert!(adj.q.max_abs() < 1e-10);
        assert!(adj.p2.max_abs() < 1e-12 && adj.q2.max_abs() < 1e-12);
    }

    #[test]
    fn source_picks_the_xx_entry_in_one_dimension() {
        let mut derivs = LocalDerivatives::new(1, 1);
        derivs.generator_hessian[0] = 0.8;
        let mut out = [0.0];
        second_order_source_cell(&derivs, &[3.0], &[0.4], &[5.0], &mut out);
        assert_eq!(out[0], 0.8);
    }

    #[test]
    fn source_vanishes_without_second_derivatives() {
        let derivs = LocalDerivatives::new(2, 3);
        let mut out = [1.0; 4];
        second_order_source_cell(&derivs, &[1.0, -2.0], &[0.3; 6], &[0.7; 6], &mut out);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn source_is_symmetric_for_coupled_model() {
        let model = CoupledSmoothModel::random(3, 2, 1, 5);
        let mut derivs = LocalDerivatives::new(3, 2);
        derivs.eval(&model, 0.3, &[0.1, -0.4, 0.2], 0.5, &[0.3, -0.1], &[0.2]);
        let p = [0.4, -1.0, 0.6];
        let q = [0.1, 0.2, -0.3, 0.4, 0.0, 0.5];
        let mut ups = [0.0; 6];
        upsilon_cell(&derivs, &p, &q, &mut ups);
        let mut phi = [0.0; 9];
        second_order_source_cell(&derivs, &p, &q, &ups, &mut phi);
        assert!(linalg::asymmetry(&phi, 3) < 1e-12);
    }

    #[test]
    fn state_map_preserves_symmetry() {
        let model = CoupledSmoothModel::random(3, 2, 1, 8);
        let mut derivs = LocalDerivatives::new(3, 2);
        derivs.eval(&model, 0.1, &[0.2, 0.1, -0.3], -0.2, &[0.1, 0.4], &[0.0]);
        let pm = [1.0, 0.3, -0.2, 0.3, 2.0, 0.5, -0.2, 0.5, -1.0];
        let mut out = [0.0; 9];
        second_order_state_map(&derivs, &pm, &mut out);
        assert!(linalg::asymmetry(&out, 3) < 1e-12);
        second_order_noise_map(&derivs, 1, &pm, &mut out);
        assert!(linalg::asymmetry(&out, 3) < 1e-12);
    }

    #[test]
    fn coupled_model_adjoints_are_symmetric_and_finite() {
        let model = CoupledSmoothModel::random(2, 2, 1, 3);
        let (traj, w) = trajectory(&model, 400, 10, 2);
        let adj = solve_adjoints(&model, &traj, &w, &BasisConfig::default()).unwrap();
        assert_eq!(adj.max_asymmetry(), 0.0);
        assert!(adj.sup_abs_p.is_finite());
        let n = 2;
        let mut grad = [0.0; 2];
        let mut hess = [0.0; 4];
        for path in 0..400 {
            model.terminal_grad(traj.x.at(path, 10), &mut grad);
            assert_eq!(adj.p.at(path, 10), &grad);
            model.terminal_hessian(traj.x.at(path, 10), &mut hess);
            let p2 = adj.p2.at(path, 10);
            for r in 0..n * n {
                assert!((p2[r] - hess[r]).abs() < 1e-12);
            }
        }
    }
}
