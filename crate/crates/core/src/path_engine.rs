//! Brownian ensembles, Euler-Maruyama simulation of the state equation, and
//! the matrix flow `X` with its inverse flow `Lambda`:
//!
//! ```text
//! dX      = A X dt + sum_i D^i X dW^i,                           X_0 = I
//! dLambda = Lambda (-A + sum_i (D^i)^2) dt - sum_i Lambda D^i dW^i,  Lambda_0 = I
//! ```
//!
//! with `D^i = beta^i I + C^i`.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, shape, Error, Result};
use crate::linalg;
use crate::model::{ControlDomain, ControlSystem};
use crate::regression::{BasisConfig, Projector};
use crate::{Paths, TimeGrid};

/// Brownian increments per path and step, reproducible from the seed.
///
/// Path `i` draws from the ChaCha8 stream `i` of the seed, so any subset of
/// paths can be regenerated independently (and in parallel) bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianEnsemble {
    grid: TimeGrid,
    seed: u64,
    increments: Paths,
}

/// Increments of one path for `n_steps` steps of size `dt`.
pub fn brownian_path_increments(seed: u64, path: usize, n_steps: usize, dim: usize, dt: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    let sd = dt.sqrt();
    (0..n_steps * dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect()
}

/// Draws `n_paths` independent `dim`-dimensional Brownian paths on `grid`.
pub fn generate_brownian(n_paths: usize, grid: TimeGrid, dim: usize, seed: u64) -> Result<BrownianEnsemble> {
    if n_paths == 0 || dim == 0 {
        return Err(invalid("Brownian ensemble needs at least one path and one dimension"));
    }
    let mut increments = Paths::zeros(n_paths, grid.n_steps(), dim);
    for path in 0..n_paths {
        let incs = brownian_path_increments(seed, path, grid.n_steps(), dim, grid.dt());
        for (k, chunk) in incs.chunks_exact(dim).enumerate() {
            increments.at_mut(path, k).copy_from_slice(chunk);
        }
    }
    Ok(BrownianEnsemble {
        grid,
        seed,
        increments,
    })
}

impl BrownianEnsemble {
    /// Wraps externally generated increments (`dim` values per step).
    pub fn from_increments(grid: TimeGrid, seed: u64, increments: Paths) -> Result<Self> {
        if increments.n_times() != grid.n_steps() {
            return Err(shape("one increment per grid step expected"));
        }
        Ok(Self {
            grid,
            seed,
            increments,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.increments.dim()
    }

    pub fn n_paths(&self) -> usize {
        self.increments.n_paths()
    }

    #[inline]
    pub fn increment(&self, path: usize, k: usize) -> &[f64] {
        self.increments.at(path, k)
    }

    pub fn increments(&self) -> &Paths {
        &self.increments
    }

    /// Cumulative paths `W_{t_k}`, starting at 0.
    pub fn brownian_paths(&self) -> Paths {
        let (np, d) = (self.n_paths(), self.dim());
        let mut w = Paths::zeros(np, self.grid.n_times(), d);
        for k in 0..self.grid.n_steps() {
            for path in 0..np {
                let next: Vec<f64> = w
                    .at(path, k)
                    .iter()
                    .zip(self.increment(path, k))
                    .map(|(a, b)| a + b)
                    .collect();
                w.at_mut(path, k + 1).copy_from_slice(&next);
            }
        }
        w
    }

    /// The same paths on the grid with half as many steps.
    pub fn coarsened(&self) -> Result<Self> {
        let n = self.grid.n_steps();
        if !n.is_multiple_of(2) {
            return Err(invalid("coarsening needs an even number of steps"));
        }
        let grid = TimeGrid::new(self.grid.horizon(), n / 2)?;
        let (np, d) = (self.n_paths(), self.dim());
        let increments = Paths::from_fn(np, n / 2, d, |path, k, out| {
            let a = self.increment(path, 2 * k);
            let b = self.increment(path, 2 * k + 1);
            for c in 0..d {
                out[c] = a[c] + b[c];
            }
        });
        Ok(Self {
            grid,
            seed: self.seed,
            increments,
        })
    }

    /// The first `n_paths` paths.
    pub fn truncated(&self, n_paths: usize) -> Self {
        let n_paths = n_paths.min(self.n_paths());
        let d = self.dim();
        let increments = Paths::from_fn(n_paths, self.grid.n_steps(), d, |path, k, out| {
            out.copy_from_slice(self.increment(path, k))
        });
        Self {
            grid: self.grid,
            seed: self.seed,
            increments,
        }
    }
}

/// Control values per path and step, lying in the domain `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProcess {
    domain: ControlDomain,
    values: Paths,
}

impl ControlProcess {
    /// `values` holds one `k`-vector per path and step.
    pub fn new(domain: ControlDomain, values: Paths) -> Result<Self> {
        if values.dim() != domain.dim() {
            return Err(shape("control dimension differs from the domain"));
        }
        for k in 0..values.n_times() {
            for path in 0..values.n_paths() {
                if !domain.contains(values.at(path, k)) {
                    return Err(invalid(alloc::format!(
                        "control value {:?} at path {path}, step {k} lies outside U",
                        values.at(path, k)
                    )));
                }
            }
        }
        Ok(Self { domain, values })
    }

    pub fn constant(domain: ControlDomain, n_paths: usize, grid: TimeGrid, value: &[f64]) -> Result<Self> {
        Self::new(domain, Paths::filled(n_paths, grid.n_steps(), value))
    }

    pub fn from_fn(
        domain: ControlDomain,
        n_paths: usize,
        grid: TimeGrid,
        f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Self> {
        let k = domain.dim();
        Self::new(domain, Paths::from_fn(n_paths, grid.n_steps(), k, f))
    }

    pub fn domain(&self) -> &ControlDomain {
        &self.domain
    }

    pub fn values(&self) -> &Paths {
        &self.values
    }

    pub fn n_paths(&self) -> usize {
        self.values.n_paths()
    }

    pub fn n_steps(&self) -> usize {
        self.values.n_times()
    }

    pub fn dim(&self) -> usize {
        self.values.dim()
    }

    /// Control on step `[t_k, t_{k+1})`.
    #[inline]
    pub fn at(&self, path: usize, k: usize) -> &[f64] {
        self.values.at(path, k)
    }
}

pub(crate) fn check_finite(values: &[f64], what: &'static str, path: usize, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what, path, step })
    }
}

pub(crate) fn check_ensemble<M: ControlSystem + ?Sized>(
    model: &M,
    u: &ControlProcess,
    w: &BrownianEnsemble,
) -> Result<()> {
    if w.dim() != model.noise_dim() {
        return Err(shape("Brownian dimension differs from the model noise dimension"));
    }
    if u.dim() != model.control_dim() {
        return Err(shape("control dimension differs from the model"));
    }
    if u.n_paths() != w.n_paths() || u.n_steps() != w.grid().n_steps() {
        return Err(shape("control process does not match the ensemble"));
    }
    Ok(())
}

/// Euler-Maruyama for `dX = b dt + sigma dW`, `X_0 = x0`.
pub fn simulate_forward_sde<M: ControlSystem + ?Sized>(
    model: &M,
    x0: &[f64],
    u: &ControlProcess,
    w: &BrownianEnsemble,
) -> Result<Paths> {
    let n = model.state_dim();
    let d = model.noise_dim();
    if x0.len() != n {
        return Err(shape("initial state has the wrong dimension"));
    }
    check_ensemble(model, u, w)?;
    let grid = w.grid();
    let dt = grid.dt();
    let np = w.n_paths();
    let mut x = Paths::zeros(np, grid.n_times(), n);
    let mut b = vec![0.0; n];
    let mut sigma = vec![0.0; n * d];
    let mut next = vec![0.0; n];
    for path in 0..np {
        x.at_mut(path, 0).copy_from_slice(x0);
    }
    for k in 0..grid.n_steps() {
        let t = grid.time(k);
        for path in 0..np {
            let xk = x.at(path, k);
            let uk = u.at(path, k);
            model.drift(t, xk, uk, &mut b);
            model.diffusion(t, xk, uk, &mut sigma);
            let dw = w.increment(path, k);
            for i in 0..n {
                next[i] = xk[i] + b[i] * dt + linalg::dot(&sigma[i * d..(i + 1) * d], dw);
            }
            check_finite(&next, "state", path, k + 1)?;
            x.at_mut(path, k + 1).copy_from_slice(&next);
        }
    }
    Ok(x)
}

/// Coefficients `(A, beta, C)` of the matrix flow, evaluated per path and step.
///
/// Layouts: `a` is `n x n`, `beta` has `d` entries, `c` is `d` blocks of `n x n`.
pub trait FlowCoefficients {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn eval(&self, path: usize, step: usize, a: &mut [f64], beta: &mut [f64], c: &mut [f64]);

    /// `D^i = beta^i I + C^i` for every `i`, as `d` blocks of `n x n`.
    fn noise_matrices(&self, path: usize, step: usize, out: &mut [f64]) {
        let n = self.dim();
        let d = self.noise_dim();
        let mut a = vec![0.0; n * n];
        let mut beta = vec![0.0; d];
        self.eval(path, step, &mut a, &mut beta, out);
        for (i, b) in beta.iter().enumerate() {
            for r in 0..n {
                out[i * n * n + r * n + r] += b;
            }
        }
    }
}

/// Coefficients that do not depend on path or time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantFlowCoefficients {
    pub n: usize,
    pub a: Vec<f64>,
    pub beta: Vec<f64>,
    pub c: Vec<f64>,
}

impl ConstantFlowCoefficients {
    pub fn zero(n: usize, d: usize) -> Self {
        Self {
            n,
            a: vec![0.0; n * n],
            beta: vec![0.0; d],
            c: vec![0.0; d * n * n],
        }
    }
}

impl FlowCoefficients for ConstantFlowCoefficients {
    fn dim(&self) -> usize {
        self.n
    }
    fn noise_dim(&self) -> usize {
        self.beta.len()
    }
    fn eval(&self, _path: usize, _step: usize, a: &mut [f64], beta: &mut [f64], c: &mut [f64]) {
        a.copy_from_slice(&self.a);
        beta.copy_from_slice(&self.beta);
        c.copy_from_slice(&self.c);
    }
}

/// The flow `X` and its inverse flow `Lambda`, each `n x n` per path and time.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFlowPair {
    n: usize,
    pub x: Paths,
    pub lambda: Paths,
}

impl MatrixFlowPair {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// `max ||Lambda_t X_t - I||_F` over paths and grid times.
    pub fn inverse_defect(&self) -> f64 {
        let n = self.n;
        let mut prod = vec![0.0; n * n];
        let mut id = vec![0.0; n * n];
        linalg::set_identity(&mut id, n);
        let mut worst = 0.0_f64;
        for k in 0..self.x.n_times() {
            for path in 0..self.x.n_paths() {
                linalg::matmul(self.lambda.at(path, k), self.x.at(path, k), n, n, n, &mut prod);
                worst = worst.max(linalg::distance(&prod, &id));
            }
        }
        worst
    }
}

/// Euler-Maruyama for the flow pair driven by `w`.
pub fn simulate_matrix_flow<C: FlowCoefficients + ?Sized>(coeffs: &C, w: &BrownianEnsemble) -> Result<MatrixFlowPair> {
    let n = coeffs.dim();
    let d = coeffs.noise_dim();
    if w.dim() != d {
        return Err(shape("flow noise dimension differs from the ensemble"));
    }
    let grid = w.grid();
    let dt = grid.dt();
    let np = w.n_paths();
    let nn = n * n;
    let mut x = Paths::zeros(np, grid.n_times(), nn);
    let mut lambda = Paths::zeros(np, grid.n_times(), nn);
    let mut id = vec![0.0; nn];
    linalg::set_identity(&mut id, n);
    for path in 0..np {
        x.at_mut(path, 0).copy_from_slice(&id);
        lambda.at_mut(path, 0).copy_from_slice(&id);
    }
    let mut a = vec![0.0; nn];
    let mut beta = vec![0.0; d];
    let mut c = vec![0.0; d * nn];
    let mut dmat = vec![0.0; d * nn];
    let mut drift_l = vec![0.0; nn];
    let mut tmp = vec![0.0; nn];
    let mut xn = vec![0.0; nn];
    let mut ln = vec![0.0; nn];
    for k in 0..grid.n_steps() {
        for path in 0..np {
            coeffs.eval(path, k, &mut a, &mut beta, &mut c);
            dmat.copy_from_slice(&c);
            for i in 0..d {
                for r in 0..n {
                    dmat[i * nn + r * n + r] += beta[i];
                }
            }
            // -A + sum_i (D^i)^2
            for (o, v) in drift_l.iter_mut().zip(&a) {
                *o = -v;
            }
            for i in 0..d {
                let di = &dmat[i * nn..(i + 1) * nn];
                linalg::matmul(di, di, n, n, n, &mut tmp);
                for (o, v) in drift_l.iter_mut().zip(&tmp) {
                    *o += v;
                }
            }
            let xk = x.at(path, k);
            let lk = lambda.at(path, k);
            let dw = w.increment(path, k);
            xn.copy_from_slice(xk);
            ln.copy_from_slice(lk);
            linalg::matmul(&a, xk, n, n, n, &mut tmp);
            for (o, v) in xn.iter_mut().zip(&tmp) {
                *o += v * dt;
            }
            linalg::matmul(lk, &drift_l, n, n, n, &mut tmp);
            for (o, v) in ln.iter_mut().zip(&tmp) {
                *o += v * dt;
            }
            for i in 0..d {
                let di = &dmat[i * nn..(i + 1) * nn];
                linalg::matmul(di, xk, n, n, n, &mut tmp);
                for (o, v) in xn.iter_mut().zip(&tmp) {
                    *o += v * dw[i];
                }
                linalg::matmul(lk, di, n, n, n, &mut tmp);
                for (o, v) in ln.iter_mut().zip(&tmp) {
                    *o -= v * dw[i];
                }
            }
            check_finite(&xn, "flow X", path, k + 1)?;
            check_finite(&ln, "inverse flow", path, k + 1)?;
            x.at_mut(path, k + 1).copy_from_slice(&xn);
            lambda.at_mut(path, k + 1).copy_from_slice(&ln);
        }
    }
    Ok(MatrixFlowPair { n, x, lambda })
}

/// Conditional moments `E[sup_{s >= t} |X_s X_t^-1|^p | F_t]` per probed grid time.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReverseHolderReport {
    pub exponent: f64,
    pub steps: Vec<usize>,
    /// Maximum over paths of the regression estimate at each probed step.
    pub moments: Vec<f64>,
    pub max_moment: f64,
    pub bound: Option<f64>,
    pub passed: bool,
}

fn spectral_norm(m: &[f64], n: usize) -> f64 {
    if n == 1 {
        return m[0].abs();
    }
    let mat = DMatrix::from_row_slice(n, n, m);
    mat.singular_values().iter().fold(0.0_f64, |a, v| a.max(*v))
}

/// Probes the reverse Hoelder property of the flow at every `stride`-th grid
/// time, conditioning on `features` (or unconditionally). Matrix norms are
/// spectral.
pub fn flow_reverse_holder_probe(
    pair: &MatrixFlowPair,
    exponent: f64,
    features: Option<&Paths>,
    basis: &BasisConfig,
    stride: usize,
    bound: Option<f64>,
) -> Result<ReverseHolderReport> {
    if !(exponent > 1.0) {
        return Err(Error::Domain {
            function: "flow_reverse_holder_probe",
            value: exponent,
            expected: "p > 1",
        });
    }
    let n = pair.n;
    let nn = n * n;
    let np = pair.x.n_paths();
    let nt = pair.x.n_times();
    let stride = stride.max(1);
    let mut steps = Vec::new();
    let mut moments = Vec::new();
    let mut target = vec![0.0; np];
    let mut prod = vec![0.0; nn];
    let mut k = 0;
    while k < nt {
        for (path, slot) in target.iter_mut().enumerate() {
            let inv = DMatrix::from_row_slice(n, n, pair.x.at(path, k))
                .try_inverse()
                .ok_or(Error::NonFinite {
                    what: "flow inverse",
                    path,
                    step: k,
                })?;
            let inv: Vec<f64> = inv.transpose().iter().copied().collect();
            let mut sup = 0.0_f64;
            for s in k..nt {
                linalg::matmul(pair.x.at(path, s), &inv, n, n, n, &mut prod);
                sup = sup.max(spectral_norm(&prod, n));
            }
            *slot = sup.powf(exponent);
        }
        let proj = match features {
            Some(f) => Projector::new(f.time_slice(k), np, basis),
            None => Projector::intercept_only(np),
        };
        let fitted = proj.fit(&target);
        moments.push(fitted.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)));
        steps.push(k);
        k += stride;
    }
    let max_moment = moments.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let passed = bound.is_none_or(|b| max_moment <= b);
    Ok(ReverseHolderReport {
        exponent,
        steps,
        moments,
        max_moment,
        bound,
        passed,
    })
}
