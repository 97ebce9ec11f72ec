//! Coefficient interfaces of the controlled forward-backward system
//!
//! ```text
//! dX = b(t, X, u) dt + sigma(t, X, u) dW,        X_0 = x0
//! dY = -f(t, X, Y, Z, u) dt + Z^T dW,            Y_T = Phi(X_T)
//! ```
//!
//! plus the derivative tables needed by the adjoint and variational
//! equations, and finite-difference / growth spot checks.
//!
//! Layouts (all row-major):
//! * `diffusion`: `n x d`, entry `(i, j)` is component `i` of column `sigma^j`.
//! * `drift_x`: `n x n`, entry `(i, l) = d b_i / d x_l`.
//! * `diffusion_x`: `d` blocks of `n x n`; block `j` is the Jacobian of column
//!   `sigma^j`, entry `(j * n + i) * n + l`.
//! * `drift_xx`: `n` blocks of `n x n`, block `i` is the Hessian of `b_i`.
//! * `diffusion_xx`: `n * d` blocks of `n x n`, block `i * d + j` is the
//!   Hessian of `sigma^{ij}`.
//! * `generator_grad`: `n + 1 + d` entries, ordered `(x, y, z)`;
//!   `generator_hessian` is the matching square matrix.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

/// Control domain `U`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ControlDomain {
    /// Finite set of admissible values.
    Finite(Vec<Vec<f64>>),
    /// Axis-aligned box `[lower, upper]`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl ControlDomain {
    pub fn interval(lower: f64, upper: f64) -> Self {
        Self::Box {
            lower: vec![lower],
            upper: vec![upper],
        }
    }

    pub fn finite_scalars(values: &[f64]) -> Self {
        Self::Finite(values.iter().map(|v| vec![*v]).collect())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Finite(points) => points.first().map_or(0, Vec::len),
            Self::Box { lower, .. } => lower.len(),
        }
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        const TOL: f64 = 1e-12;
        match self {
            Self::Finite(points) => points
                .iter()
                .any(|p| p.len() == u.len() && p.iter().zip(u).all(|(a, b)| (a - b).abs() <= TOL)),
            Self::Box { lower, upper } => {
                u.len() == lower.len()
                    && u.iter()
                        .zip(lower.iter().zip(upper))
                        .all(|(v, (lo, hi))| *v >= lo - TOL && *v <= hi + TOL)
            }
        }
    }

    /// Finite test set: the points themselves, or a tensor grid with
    /// `per_axis` points along each box axis.
    pub fn test_points(&self, per_axis: usize) -> Vec<Vec<f64>> {
        match self {
            Self::Finite(points) => points.clone(),
            Self::Box { lower, upper } => {
                let per_axis = per_axis.max(2);
                let mut out = vec![Vec::new()];
                for (lo, hi) in lower.iter().zip(upper) {
                    let mut next = Vec::with_capacity(out.len() * per_axis);
                    for prefix in &out {
                        for s in 0..per_axis {
                            let v = lo + (hi - lo) * s as f64 / (per_axis - 1) as f64;
                            let mut p = prefix.clone();
                            p.push(v);
                            next.push(p);
                        }
                    }
                    out = next;
                }
                out
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Finite(points) => points[rng.random_range(0..points.len())].clone(),
            Self::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                .collect(),
        }
    }
}

/// Constants of the standing growth and regularity assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GrowthConstants {
    /// Bound on `|f(t, x, 0, 0, u)|`.
    pub alpha: f64,
    /// Quadratic growth rate: `|f_z| <= l3 + gamma |z|`.
    pub gamma: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    /// Bound in `|f_u| <= l4 (1 + |y| + |z|)`.
    pub l4: f64,
    /// `sup |Phi|`.
    pub terminal_sup: f64,
    /// `sup |f_y|`.
    pub generator_y_sup: f64,
}

impl GrowthConstants {
    /// Heuristic surrogate for the a-priori bound on `|Y|_inf + |Z.W|_BMO`:
    /// `C_Y = (|Phi| + alpha T) e^{|f_y| T}` and
    /// `C_Y + e^{gamma C_Y} (1 + l3 sqrt T) sqrt C_Y`.
    pub fn apriori_surrogate(&self, horizon: f64) -> f64 {
        let cy = (self.terminal_sup + self.alpha * horizon) * (self.generator_y_sup * horizon).exp();
        cy + (self.gamma * cy).exp() * (1.0 + self.l3 * horizon.sqrt()) * cy.sqrt()
    }

    /// Default norm truncation of `Z` in the regression solver.
    pub fn default_z_truncation(&self, horizon: f64) -> f64 {
        2.0 * self.apriori_surrogate(horizon)
    }
}

/// Coefficients `b`, `sigma`, `f`, `Phi` and the control domain.
pub trait ControlSystem {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn control_domain(&self) -> ControlDomain;
    fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn generator(&self, t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64]) -> f64;
    fn terminal(&self, x: &[f64]) -> f64;
}

/// First and second derivatives in the state (and `(y, z)` for `f`).
pub trait SystemDerivatives: ControlSystem {
    fn drift_x(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn diffusion_x(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn drift_xx(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn diffusion_xx(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn generator_grad(&self, t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64], out: &mut [f64]);
    fn generator_hessian(
        &self,
        t: f64,
        x: &[f64],
        y: f64,
        z: &[f64],
        u: &[f64],
        out: &mut [f64],
    );
    fn terminal_grad(&self, x: &[f64], out: &mut [f64]);
    fn terminal_hessian(&self, x: &[f64], out: &mut [f64]);
    fn constants(&self) -> GrowthConstants;

    /// Control derivatives, when the model provides them.
    fn control_sensitivity(&self) -> Option<&dyn ControlSensitivity> {
        None
    }
}

/// Derivatives in the control variable.
///
/// Layouts: `drift_u` is `n x k`; `diffusion_u` is `d` blocks of `n x k`
/// (block `j` differentiates column `sigma^j`); `generator_u` has `k` entries.
pub trait ControlSensitivity {
    fn drift_u(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn diffusion_u(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    fn generator_u(&self, t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64], out: &mut [f64]);
}

/// A point at which coefficients are probed.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: f64,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
}

/// Probes with `t` uniform on `[0, horizon]`, `x`, `y`, `z` uniform on
/// `[-scale, scale]` and `u` drawn from the control domain.
pub fn random_probes<M: ControlSystem + ?Sized, R: Rng + ?Sized>(
    model: &M,
    count: usize,
    horizon: f64,
    scale: f64,
    rng: &mut R,
) -> Vec<Probe> {
    let domain = model.control_domain();
    let sym = |rng: &mut R| scale * (2.0 * rng.random::<f64>() - 1.0);
    (0..count)
        .map(|_| Probe {
            t: horizon * rng.random::<f64>(),
            x: (0..model.state_dim()).map(|_| sym(rng)).collect(),
            y: sym(rng),
            z: (0..model.noise_dim()).map(|_| sym(rng)).collect(),
            u: domain.sample(rng),
        })
        .collect()
}

/// Outcome of a derivative or growth spot check.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpotCheckReport {
    pub checked: usize,
    /// Largest violation measure (relative error, or excess over a bound).
    pub worst: f64,
    pub worst_item: String,
    pub passed: bool,
}

struct Worst {
    checked: usize,
    worst: f64,
    item: String,
}

impl Worst {
    fn new() -> Self {
        Self {
            checked: 0,
            worst: 0.0,
            item: String::new(),
        }
    }

    fn record(&mut self, value: f64, item: impl FnOnce() -> String) {
        self.checked += 1;
        if value > self.worst || value.is_nan() {
            self.worst = if value.is_nan() { f64::INFINITY } else { value };
            self.item = item();
        }
    }

    fn report(self, tol: f64) -> SpotCheckReport {
        SpotCheckReport {
            checked: self.checked,
            passed: self.worst <= tol,
            worst: self.worst,
            worst_item: self.item,
        }
    }
}

fn step_for(v: f64) -> f64 {
    1e-5 * v.abs().max(1.0)
}

/// Central difference of a vector-valued map along coordinate `l`.
fn central<F: FnMut(&[f64], &mut [f64])>(mut f: F, at: &[f64], l: usize, len: usize) -> Vec<f64> {
    let h = step_for(at[l]);
    let mut plus = at.to_vec();
    let mut minus = at.to_vec();
    plus[l] += h;
    minus[l] -= h;
    let mut fp = vec![0.0; len];
    let mut fm = vec![0.0; len];
    f(&plus, &mut fp);
    f(&minus, &mut fm);
    fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / analytic.abs().max(1.0)
}

/// Compares every supplied derivative with central differences (second
/// derivatives are differenced from the supplied first derivatives).
pub fn check_derivatives<M: SystemDerivatives + ?Sized>(
    model: &M,
    probes: &[Probe],
    rel_tol: f64,
) -> SpotCheckReport {
    let n = model.state_dim();
    let d = model.noise_dim();
    let k = model.control_dim();
    let g = n + 1 + d;
    let mut worst = Worst::new();
    for (pi, pr) in probes.iter().enumerate() {
        let (t, y) = (pr.t, pr.y);
        let (x, z, u) = (&pr.x[..], &pr.z[..], &pr.u[..]);

        let mut bx = vec![0.0; n * n];
        model.drift_x(t, x, u, &mut bx);
        let mut sx = vec![0.0; d * n * n];
        model.diffusion_x(t, x, u, &mut sx);
        let mut bxx = vec![0.0; n * n * n];
        model.drift_xx(t, x, u, &mut bxx);
        let mut sxx = vec![0.0; n * d * n * n];
        model.diffusion_xx(t, x, u, &mut sxx);
        for l in 0..n {
            let fd_b = central(|xx, o| model.drift(t, xx, u, o), x, l, n);
            let fd_s = central(|xx, o| model.diffusion(t, xx, u, o), x, l, n * d);
            let fd_bx = central(|xx, o| model.drift_x(t, xx, u, o), x, l, n * n);
            let fd_sx = central(|xx, o| model.diffusion_x(t, xx, u, o), x, l, d * n * n);
            for i in 0..n {
                worst.record(rel_err(fd_b[i], bx[i * n + l]), || {
                    format!("probe {pi}: b_x[{i},{l}]")
                });
                for a in 0..n {
                    worst.record(rel_err(fd_bx[i * n + a], bxx[(i * n + a) * n + l]), || {
                        format!("probe {pi}: b_xx[{i}][{a},{l}]")
                    });
                }
                for j in 0..d {
                    worst.record(rel_err(fd_s[i * d + j], sx[(j * n + i) * n + l]), || {
                        format!("probe {pi}: sigma_x[{j}][{i},{l}]")
                    });
                    for a in 0..n {
                        let an = sxx[((i * d + j) * n + a) * n + l];
                        worst.record(rel_err(fd_sx[(j * n + i) * n + a], an), || {
                            format!("probe {pi}: sigma_xx[{i},{j}][{a},{l}]")
                        });
                    }
                }
            }
        }

        // Generator in the stacked variable v = (x, y, z).
        let mut v = Vec::with_capacity(g);
        v.extend_from_slice(x);
        v.push(y);
        v.extend_from_slice(z);
        let split = |v: &[f64]| (v[..n].to_vec(), v[n], v[n + 1..].to_vec());
        let mut grad = vec![0.0; g];
        model.generator_grad(t, x, y, z, u, &mut grad);
        let mut hess = vec![0.0; g * g];
        model.generator_hessian(t, x, y, z, u, &mut hess);
        for l in 0..g {
            let fd = central(
                |vv, o| {
                    let (xx, yy, zz) = split(vv);
                    o[0] = model.generator(t, &xx, yy, &zz, u);
                },
                &v,
                l,
                1,
            );
            worst.record(rel_err(fd[0], grad[l]), || format!("probe {pi}: f grad[{l}]"));
            let fd_g = central(
                |vv, o| {
                    let (xx, yy, zz) = split(vv);
                    model.generator_grad(t, &xx, yy, &zz, u, o);
                },
                &v,
                l,
                g,
            );
            for a in 0..g {
                worst.record(rel_err(fd_g[a], hess[a * g + l]), || {
                    format!("probe {pi}: f hessian[{a},{l}]")
                });
            }
        }

        let mut px = vec![0.0; n];
        model.terminal_grad(x, &mut px);
        let mut pxx = vec![0.0; n * n];
        model.terminal_hessian(x, &mut pxx);
        for l in 0..n {
            let fd = central(|xx, o| o[0] = model.terminal(xx), x, l, 1);
            worst.record(rel_err(fd[0], px[l]), || format!("probe {pi}: Phi_x[{l}]"));
            let fd_g = central(|xx, o| model.terminal_grad(xx, o), x, l, n);
            for a in 0..n {
                worst.record(rel_err(fd_g[a], pxx[a * n + l]), || {
                    format!("probe {pi}: Phi_xx[{a},{l}]")
                });
            }
        }

        if let Some(cs) = model.control_sensitivity() {
            let mut bu = vec![0.0; n * k];
            cs.drift_u(t, x, u, &mut bu);
            let mut su = vec![0.0; d * n * k];
            cs.diffusion_u(t, x, u, &mut su);
            let mut fu = vec![0.0; k];
            cs.generator_u(t, x, y, z, u, &mut fu);
            for c in 0..k {
                let fd_b = central(|uu, o| model.drift(t, x, uu, o), u, c, n);
                let fd_s = central(|uu, o| model.diffusion(t, x, uu, o), u, c, n * d);
                let fd_f = central(|uu, o| o[0] = model.generator(t, x, y, z, uu), u, c, 1);
                worst.record(rel_err(fd_f[0], fu[c]), || format!("probe {pi}: f_u[{c}]"));
                for i in 0..n {
                    worst.record(rel_err(fd_b[i], bu[i * k + c]), || {
                        format!("probe {pi}: b_u[{i},{c}]")
                    });
                    for j in 0..d {
                        worst.record(rel_err(fd_s[i * d + j], su[(j * n + i) * k + c]), || {
                            format!("probe {pi}: sigma_u[{j}][{i},{c}]")
                        });
                    }
                }
            }
        }
    }
    worst.report(rel_tol)
}

/// Spot-checks `|f(t, x, 0, 0, u)| <= alpha` and `|f_z| <= l3 + gamma |z|`.
/// The reported `worst` is the largest excess over the bounds (0 when all hold).
pub fn check_growth_constants<M: SystemDerivatives + ?Sized>(
    model: &M,
    probes: &[Probe],
) -> SpotCheckReport {
    let n = model.state_dim();
    let d = model.noise_dim();
    let c = model.constants();
    let mut worst = Worst::new();
    let zero_z = vec![0.0; d];
    let mut grad = vec![0.0; n + 1 + d];
    for (pi, pr) in probes.iter().enumerate() {
        let f0 = model.generator(pr.t, &pr.x, 0.0, &zero_z, &pr.u).abs();
        worst.record((f0 - c.alpha).max(0.0), || format!("probe {pi}: |f(t,x,0,0,u)| = {f0}"));
        model.generator_grad(pr.t, &pr.x, pr.y, &pr.z, &pr.u, &mut grad);
        let fz = crate::linalg::norm(&grad[n + 1..]);
        let bound = c.l3 + c.gamma * crate::linalg::norm(&pr.z);
        worst.record((fz - bound).max(0.0), || format!("probe {pi}: |f_z| = {fz} > {bound}"));
    }
    worst.report(1e-12)
}
