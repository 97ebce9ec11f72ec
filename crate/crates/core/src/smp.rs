//! Hamiltonians, the global and local maximum-principle checks and the
//! sampled sufficient condition.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjoint::AdjointBundle;
use crate::bsde::ControlledTrajectory;
use crate::error::{shape, Error, Result};
use crate::linalg;
use crate::model::{ControlSensitivity, ControlSystem, SystemDerivatives};
use crate::path_engine::{simulate_forward_sde, BrownianEnsemble, ControlProcess};
use crate::spike::{auxiliary_source, SpikeIncrement};
use crate::{Paths, TimeGrid};

/// Arguments of the Hamiltonian at one cell. `reference_x` and
/// `reference_u` are the candidate pair entering the diffusion differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianPoint<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
    pub u: &'a [f64],
    pub p: &'a [f64],
    /// `n x d`, column `i` is `q^i`.
    pub q: &'a [f64],
    /// `n x n`.
    pub p2: &'a [f64],
    pub reference_x: &'a [f64],
    pub reference_u: &'a [f64],
}

impl<'a> HamiltonianPoint<'a> {
    /// Same point with another control.
    pub fn with_control(&self, u: &'a [f64]) -> Self {
        Self { u, ..*self }
    }
}

/// `sigma(t, x, u) - sigma(t, reference_x, reference_u)` (`n x d`).
pub fn diffusion_difference<M: ControlSystem + ?Sized>(model: &M, point: &HamiltonianPoint<'_>) -> Vec<f64> {
    let nd = model.state_dim() * model.noise_dim();
    let mut sigma = vec![0.0; nd];
    let mut reference = vec![0.0; nd];
    model.diffusion(point.t, point.x, point.u, &mut sigma);
    model.diffusion(point.t, point.reference_x, point.reference_u, &mut reference);
    for (s, r) in sigma.iter_mut().zip(&reference) {
        *s -= r;
    }
    sigma
}

/// `Delta^i = (sigma^i - sigma_bar^i)^T p` from a diffusion difference.
pub fn shift_from_difference(difference: &[f64], p: &[f64], d: usize) -> Vec<f64> {
    let mut shift = vec![0.0; d];
    linalg::matvec_t(difference, p, p.len(), d, &mut shift);
    shift
}

/// `H = p^T b + sum_i q^i^T sigma^i + f(t, x, y, z + Delta, u)
///      + 1/2 sum_i (sigma^i - sigma_bar^i)^T P (sigma^i - sigma_bar^i)`.
pub fn hamiltonian<M: ControlSystem + ?Sized>(model: &M, point: &HamiltonianPoint<'_>) -> f64 {
    let difference = diffusion_difference(model, point);
    let shift = shift_from_difference(&difference, point.p, model.noise_dim());
    hamiltonian_with_shift(model, point, &difference, &shift)
}

/// [`hamiltonian`] with a precomputed diffusion difference and shift.
pub fn hamiltonian_with_shift<M: ControlSystem + ?Sized>(
    model: &M,
    point: &HamiltonianPoint<'_>,
    difference: &[f64],
    shift: &[f64],
) -> f64 {
    let (n, d) = (model.state_dim(), model.noise_dim());
    let mut drift = vec![0.0; n];
    let mut sigma = vec![0.0; n * d];
    model.drift(point.t, point.x, point.u, &mut drift);
    model.diffusion(point.t, point.x, point.u, &mut sigma);
    let z: Vec<f64> = point.z.iter().zip(shift).map(|(a, b)| a + b).collect();
    let mut col = vec![0.0; n];
    let mut quad = 0.0;
    for i in 0..d {
        linalg::column(difference, n, d, i, &mut col);
        quad += linalg::quadratic_form(point.p2, &col, &col);
    }
    linalg::dot(point.p, &drift)
        + linalg::dot(point.q, &sigma)
        + model.generator(point.t, point.x, point.y, &z, point.u)
        + 0.5 * quad
}

/// `H~ = p^T b + sum_i q^i^T sigma^i + f(t, x, y, z, u)`; `P` and the
/// reference pair of `point` are ignored.
pub fn auxiliary_hamiltonian<M: ControlSystem + ?Sized>(model: &M, point: &HamiltonianPoint<'_>) -> f64 {
    let (n, d) = (model.state_dim(), model.noise_dim());
    let mut drift = vec![0.0; n];
    let mut sigma = vec![0.0; n * d];
    model.drift(point.t, point.x, point.u, &mut drift);
    model.diffusion(point.t, point.x, point.u, &mut sigma);
    linalg::dot(point.p, &drift) + linalg::dot(point.q, &sigma) + model.generator(point.t, point.x, point.y, point.z, point.u)
}

/// Largest `|[H(u) - H(u_bar)] - [p^T b_hat + sum_i q^i^T sigma^i_hat + f_hat(Delta)
/// + 1/2 sum_i sigma^i_hat^T P sigma^i_hat]|` over `controls`, where `base`
/// sits at the candidate (`x = reference_x`, `u = reference_u`).
pub fn hamiltonian_difference_identity<M: SystemDerivatives + ?Sized>(
    model: &M,
    base: &HamiltonianPoint<'_>,
    controls: &[Vec<f64>],
) -> f64 {
    let (n, d) = (model.state_dim(), model.noise_dim());
    let h_bar = hamiltonian(model, base);
    let mut inc = SpikeIncrement::new(n, d);
    controls.iter().fold(0.0, |worst, u| {
        let lhs = hamiltonian(model, &base.with_control(u)) - h_bar;
        inc.eval(model, base.t, base.x, base.u, u);
        let rhs = auxiliary_source(model, &inc, base.t, base.x, base.y, base.z, base.u, u, base.p, base.q, base.p2);
        worst.max((lhs - rhs).abs())
    })
}

/// [`hamiltonian_difference_identity`] at `points` random cells: entries of
/// `(x, y, z, p, q)` uniform on `[-2, 2]`, `P` symmetric with entries on
/// `[-1, 1]`, `u_bar` and four comparison controls drawn from the domain,
/// plus the domain's test points. Returns the largest error.
pub fn sample_hamiltonian_identity<M: SystemDerivatives + ?Sized>(model: &M, points: usize, seed: u64) -> f64 {
    use rand::Rng;
    let (n, d) = (model.state_dim(), model.noise_dim());
    let domain = model.control_domain();
    let fixed = domain.test_points(3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let mut draw = |len: usize, scale: f64| -> Vec<f64> { (0..len).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect() };
        let (x, z, p, q) = (draw(n, 2.0), draw(d, 2.0), draw(n, 2.0), draw(n * d, 2.0));
        let y = draw(1, 2.0)[0];
        let raw = draw(n * n, 1.0);
        let mut p2 = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                p2[r * n + c] = 0.5 * (raw[r * n + c] + raw[c * n + r]);
            }
        }
        let u_bar = domain.sample(&mut rng);
        let mut controls = fixed.clone();
        controls.extend((0..4).map(|_| domain.sample(&mut rng)));
        let base = HamiltonianPoint {
            t: rng.random::<f64>(),
            x: &x,
            y,
            z: &z,
            u: &u_bar,
            p: &p,
            q: &q,
            p2: &p2,
            reference_x: &x,
            reference_u: &u_bar,
        };
        worst = worst.max(hamiltonian_difference_identity(model, &base, &controls));
    }
    worst
}

/// One recorded violation of the global condition.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmpViolation {
    pub path: usize,
    pub step: usize,
    pub time: f64,
    pub control: Vec<f64>,
    /// `H(u) - H(u_bar)`.
    pub gap: f64,
}

/// Outcome of the global maximum-principle check.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SmpViolationReport {
    pub tolerance: f64,
    pub cells: usize,
    pub controls: usize,
    /// Cells with at least one gap below `-tolerance`.
    pub violating_cells: usize,
    pub violation_fraction: f64,
    pub min_gap: f64,
    pub mean_gap: f64,
    /// At most `max_recorded` entries, worst first.
    pub violations: Vec<SmpViolation>,
}

impl SmpViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violating_cells == 0
    }
}

/// Default tolerance: three times the largest time-0 standard error of the
/// adjoint regressions.
pub fn default_smp_tolerance(adjoints: &AdjointBundle) -> f64 {
    let se = adjoints
        .first_report
        .y0_std_error
        .iter()
        .chain(&adjoints.second_report.y0_std_error)
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    3.0 * se
}

fn check_alignment(traj: &ControlledTrajectory, adjoints: &AdjointBundle, grid: TimeGrid) -> Result<()> {
    let ok = traj.n_steps() == grid.n_steps()
        && adjoints.p.n_paths() == traj.n_paths()
        && adjoints.p.n_times() == grid.n_times()
        && adjoints.q.n_times() == grid.n_steps();
    if ok {
        Ok(())
    } else {
        Err(shape("adjoints do not match the trajectory"))
    }
}

/// Evaluates `H(u) - H(u_bar)` along the candidate at every path, step and
/// test control, and records the gaps below `-tolerance`.
pub fn check_global_smp<M: ControlSystem + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    adjoints: &AdjointBundle,
    grid: TimeGrid,
    controls: &[Vec<f64>],
    tolerance: f64,
    max_recorded: usize,
) -> Result<SmpViolationReport> {
    check_alignment(traj, adjoints, grid)?;
    let (np, ns) = (traj.n_paths(), grid.n_steps());
    let mut violations = Vec::new();
    let (mut violating, mut min_gap, mut sum) = (0usize, f64::INFINITY, 0.0);
    for path in 0..np {
        for k in 0..ns {
            let x = traj.x.at(path, k);
            let u_bar = traj.u.at(path, k);
            let base = HamiltonianPoint {
                t: grid.time(k),
                x,
                y: traj.y.scalar(path, k),
                z: traj.z.at(path, k),
                u: u_bar,
                p: adjoints.p.at(path, k),
                q: adjoints.q.at(path, k),
                p2: adjoints.p2.at(path, k),
                reference_x: x,
                reference_u: u_bar,
            };
            let h_bar = hamiltonian(model, &base);
            let mut bad = false;
            for u in controls {
                let gap = hamiltonian(model, &base.with_control(u)) - h_bar;
                sum += gap;
                min_gap = min_gap.min(gap);
                if gap < -tolerance {
                    bad = true;
                    violations.push(SmpViolation {
                        path,
                        step: k,
                        time: base.t,
                        control: u.clone(),
                        gap,
                    });
                }
            }
            violating += bad as usize;
            if violations.len() > 4 * max_recorded.max(16) {
                violations.sort_by(|a, b| a.gap.total_cmp(&b.gap));
                violations.truncate(max_recorded);
            }
        }
    }
    violations.sort_by(|a, b| a.gap.total_cmp(&b.gap));
    violations.truncate(max_recorded);
    let cells = np * ns;
    let evaluations = (cells * controls.len()).max(1);
    Ok(SmpViolationReport {
        tolerance,
        cells,
        controls: controls.len(),
        violating_cells: violating,
        violation_fraction: violating as f64 / cells.max(1) as f64,
        min_gap: if controls.is_empty() { 0.0 } else { min_gap },
        mean_gap: sum / evaluations as f64,
        violations,
    })
}

fn sensitivity<M: SystemDerivatives + ?Sized>(model: &M) -> Result<&dyn ControlSensitivity> {
    model.control_sensitivity().ok_or(Error::MissingControlDerivatives)
}

/// Gradient of the local condition at one cell:
/// `sum_i f_{z_i} p^T sigma_u^i + f_u + p^T b_u + sum_i q^i^T sigma_u^i` (`k` entries).
#[allow(clippy::too_many_arguments)]
pub fn local_gradient_cell<M: SystemDerivatives + ?Sized>(
    model: &M,
    t: f64,
    x: &[f64],
    y: f64,
    z: &[f64],
    u: &[f64],
    p: &[f64],
    q: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let sens = sensitivity(model)?;
    let (n, d, kdim) = (model.state_dim(), model.noise_dim(), model.control_dim());
    let mut grad = vec![0.0; n + 1 + d];
    let mut b_u = vec![0.0; n * kdim];
    let mut s_u = vec![0.0; d * n * kdim];
    let mut tmp = vec![0.0; kdim];
    model.generator_grad(t, x, y, z, u, &mut grad);
    sens.drift_u(t, x, u, &mut b_u);
    sens.diffusion_u(t, x, u, &mut s_u);
    sens.generator_u(t, x, y, z, u, out);
    linalg::matvec_t(&b_u, p, n, kdim, &mut tmp);
    for (o, v) in out.iter_mut().zip(&tmp) {
        *o += v;
    }
    let mut q_col = vec![0.0; n];
    for i in 0..d {
        let block = &s_u[i * n * kdim..(i + 1) * n * kdim];
        linalg::column(q, n, d, i, &mut q_col);
        let weight = grad[n + 1 + i];
        for (r, c) in q_col.iter_mut().zip(p) {
            *r += weight * c;
        }
        linalg::matvec_t(block, &q_col, n, kdim, &mut tmp);
        for (o, v) in out.iter_mut().zip(&tmp) {
            *o += v;
        }
    }
    Ok(())
}

/// Local-condition gradient along the candidate, one `k`-vector per step.
pub fn local_smp_gradient<M: SystemDerivatives + ?Sized>(
    model: &M,
    traj: &ControlledTrajectory,
    adjoints: &AdjointBundle,
    grid: TimeGrid,
) -> Result<Paths> {
    check_alignment(traj, adjoints, grid)?;
    sensitivity(model)?;
    let mut out = Paths::zeros(traj.n_paths(), grid.n_steps(), model.control_dim());
    for k in 0..grid.n_steps() {
        for path in 0..traj.n_paths() {
            local_gradient_cell(
                model,
                grid.time(k),
                traj.x.at(path, k),
                traj.y.scalar(path, k),
                traj.z.at(path, k),
                traj.u.at(path, k),
                adjoints.p.at(path, k),
                adjoints.q.at(path, k),
                out.at_mut(path, k),
            )?;
        }
    }
    Ok(out)
}

/// Outcome of the directional check `<gradient, u - u_bar> >= -tolerance`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LocalSmpReport {
    pub tolerance: f64,
    pub cells: usize,
    pub violating_cells: usize,
    /// Smallest directional derivative seen.
    pub worst_margin: f64,
    /// Mean gradient over paths and steps.
    pub mean_gradient: Vec<f64>,
    pub pass: bool,
}

pub fn check_local_smp(
    traj: &ControlledTrajectory,
    gradient: &Paths,
    controls: &[Vec<f64>],
    tolerance: f64,
) -> Result<LocalSmpReport> {
    if gradient.n_paths() != traj.n_paths() || gradient.n_times() != traj.n_steps() {
        return Err(shape("gradient does not match the trajectory"));
    }
    let (np, ns, kdim) = (gradient.n_paths(), gradient.n_times(), gradient.dim());
    let (mut violating, mut worst) = (0usize, f64::INFINITY);
    let mut mean_gradient = vec![0.0; kdim];
    for k in 0..ns {
        for path in 0..np {
            let g = gradient.at(path, k);
            let u_bar = traj.u.at(path, k);
            for (m, v) in mean_gradient.iter_mut().zip(g) {
                *m += v;
            }
            let mut bad = false;
            for u in controls {
                let margin: f64 = g.iter().zip(u.iter().zip(u_bar)).map(|(gc, (a, b))| gc * (a - b)).sum();
                worst = worst.min(margin);
                bad |= margin < -tolerance;
            }
            violating += bad as usize;
        }
    }
    let cells = np * ns;
    mean_gradient.iter_mut().for_each(|m| *m /= cells.max(1) as f64);
    Ok(LocalSmpReport {
        tolerance,
        cells,
        violating_cells: violating,
        worst_margin: if controls.is_empty() { 0.0 } else { worst },
        mean_gradient,
        pass: violating == 0,
    })
}

/// Sampling box for the sufficient condition.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SufficientSampling {
    /// Random `(x, y, z, u)` pairs per condition.
    pub samples: usize,
    /// Half-widths of the boxes for `x`, `y` and `z` around the origin.
    pub state_radius: f64,
    pub value_radius: f64,
    pub z_radius: f64,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for SufficientSampling {
    fn default() -> Self {
        Self {
            samples: 10_000,
            state_radius: 2.0,
            value_radius: 2.0,
            z_radius: 2.0,
            seed: 0,
            tolerance: 1e-9,
        }
    }
}

/// Worst margins of the two sampled conditions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SufficientConditionReport {
    /// `min [Phi(X^u_T) - Phi(X_bar_T) - Phi_x(X_bar_T)^T (X^u_T - X_bar_T)]`.
    pub terminal_worst_margin: f64,
    pub terminal_samples: usize,
    /// Smallest margin of the auxiliary-Hamiltonian inequality.
    pub hamiltonian_worst_margin: f64,
    pub hamiltonian_samples: usize,
    pub local: LocalSmpReport,
    pub pass: bool,
}

/// Terminal condition over the terminal states of comparison controls.
pub fn terminal_condition_margin<M: SystemDerivatives + ?Sized>(model: &M, reference: &[f64], others: &[&[f64]]) -> f64 {
    let n = model.state_dim();
    let mut grad = vec![0.0; n];
    let np = reference.len() / n;
    let mut worst = f64::INFINITY;
    for path in 0..np {
        let xb = &reference[path * n..(path + 1) * n];
        model.terminal_grad(xb, &mut grad);
        let phi_bar = model.terminal(xb);
        for other in others {
            let xu = &other[path * n..(path + 1) * n];
            let lin: f64 = grad.iter().zip(xu.iter().zip(xb)).map(|(g, (a, b))| g * (a - b)).sum();
            worst = worst.min(model.terminal(xu) - phi_bar - lin);
        }
    }
    worst
}

/// Margin of the auxiliary-Hamiltonian inequality at one pair of tuples,
/// all derivatives at the barred tuple:
///
/// ```text
/// H~(x, y, z, u) - H~(x_bar, ...) - grad H~ . (difference)
///   + sum_i H~_{z_i} p^T [sigma^i(x, u) - sigma^i(x_bar, u_bar) - sigma_x^i (x - x_bar) - sigma_u^i (u - u_bar)]
/// ```
pub fn hamiltonian_condition_margin<M: SystemDerivatives + ?Sized>(
    model: &M,
    point: &HamiltonianPoint<'_>,
    bar: &HamiltonianPoint<'_>,
) -> Result<f64> {
    let sens = sensitivity(model)?;
    let (n, d, kdim) = (model.state_dim(), model.noise_dim(), model.control_dim());
    let t = bar.t;
    let mut grad = vec![0.0; n + 1 + d];
    let mut b_x = vec![0.0; n * n];
    let mut s_x = vec![0.0; d * n * n];
    let mut b_u = vec![0.0; n * kdim];
    let mut s_u = vec![0.0; d * n * kdim];
    let mut f_u = vec![0.0; kdim];
    model.generator_grad(t, bar.x, bar.y, bar.z, bar.u, &mut grad);
    model.drift_x(t, bar.x, bar.u, &mut b_x);
    model.diffusion_x(t, bar.x, bar.u, &mut s_x);
    sens.drift_u(t, bar.x, bar.u, &mut b_u);
    sens.diffusion_u(t, bar.x, bar.u, &mut s_u);
    sens.generator_u(t, bar.x, bar.y, bar.z, bar.u, &mut f_u);
    let dx: Vec<f64> = point.x.iter().zip(bar.x).map(|(a, b)| a - b).collect();
    let du: Vec<f64> = point.u.iter().zip(bar.u).map(|(a, b)| a - b).collect();
    let dy = point.y - bar.y;

    let mut sigma = vec![0.0; n * d];
    let mut sigma_bar = vec![0.0; n * d];
    model.diffusion(t, point.x, point.u, &mut sigma);
    model.diffusion(t, bar.x, bar.u, &mut sigma_bar);

    // H~_x . dx = p^T b_x dx + sum_i q^i^T sigma_x^i dx + f_x . dx, same for u.
    let mut tmp = vec![0.0; n];
    let mut q_col = vec![0.0; n];
    linalg::matvec(&b_x, &dx, n, n, &mut tmp);
    let mut linear = linalg::dot(bar.p, &tmp) + linalg::dot(&grad[..n], &dx) + grad[n] * dy;
    linalg::matvec(&b_u, &du, n, kdim, &mut tmp);
    linear += linalg::dot(bar.p, &tmp) + linalg::dot(&f_u, &du);
    let mut remainder = 0.0;
    for i in 0..d {
        let fz = grad[n + 1 + i];
        linear += fz * (point.z[i] - bar.z[i]);
        linalg::column(bar.q, n, d, i, &mut q_col);
        let mut lin_sigma = vec![0.0; n];
        linalg::matvec(&s_x[i * n * n..(i + 1) * n * n], &dx, n, n, &mut tmp);
        for (l, v) in lin_sigma.iter_mut().zip(&tmp) {
            *l += v;
        }
        linalg::matvec(&s_u[i * n * kdim..(i + 1) * n * kdim], &du, n, kdim, &mut tmp);
        for (l, v) in lin_sigma.iter_mut().zip(&tmp) {
            *l += v;
        }
        linear += linalg::dot(&q_col, &lin_sigma);
        let mut gap = 0.0;
        for a in 0..n {
            gap += bar.p[a] * (sigma[a * d + i] - sigma_bar[a * d + i] - lin_sigma[a]);
        }
        remainder += fz * gap;
    }
    let aux = |pt: &HamiltonianPoint<'_>| auxiliary_hamiltonian(model, &HamiltonianPoint { p: bar.p, q: bar.q, t, ..*pt });
    Ok(aux(point) - aux(bar) - linear + remainder)
}

/// Samples both sufficient conditions along the candidate.
///
/// The terminal condition uses the terminal states of `comparisons`
/// simulated on `w` from `x0`. The Hamiltonian inequality draws random
/// cells `(path, step)` for `(t, p_t, q_t)` and random tuple pairs from the
/// sampling box and the control domain. The local condition is checked on
/// the candidate with `local_controls`.
#[allow(clippy::too_many_arguments)]
pub fn check_sufficient_conditions<M: SystemDerivatives + ?Sized>(
    model: &M,
    x0: &[f64],
    traj: &ControlledTrajectory,
    adjoints: &AdjointBundle,
    w: &BrownianEnsemble,
    comparisons: &[ControlProcess],
    local_controls: &[Vec<f64>],
    sampling: &SufficientSampling,
) -> Result<SufficientConditionReport> {
    use rand::Rng;
    let grid = w.grid();
    check_alignment(traj, adjoints, grid)?;
    let (n, d) = (model.state_dim(), model.noise_dim());
    let last = grid.n_steps();

    let terminals: Vec<Paths> = comparisons
        .iter()
        .map(|u| simulate_forward_sde(model, x0, u, w).map(|x| Paths::from_fn(x.n_paths(), 1, n, |path, _, out| out.copy_from_slice(x.at(path, last)))))
        .collect::<Result<_>>()?;
    let others: Vec<&[f64]> = terminals.iter().map(|p| p.as_slice()).collect();
    let terminal_worst_margin = if others.is_empty() {
        0.0
    } else {
        terminal_condition_margin(model, traj.x.time_slice(last), &others)
    };

    let gradient = local_smp_gradient(model, traj, adjoints, grid)?;
    let local = check_local_smp(traj, &gradient, local_controls, sampling.tolerance)?;

    let domain = model.control_domain();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let draw = |radius: f64, len: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..len).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect()
    };
    let mut worst = f64::INFINITY;
    for _ in 0..sampling.samples {
        let path = rng.random_range(0..traj.n_paths());
        let k = rng.random_range(0..last);
        let (p, q) = (adjoints.p.at(path, k), adjoints.q.at(path, k));
        let (x, xb) = (draw(sampling.state_radius, n, &mut rng), draw(sampling.state_radius, n, &mut rng));
        let (y, yb) = (draw(sampling.value_radius, 1, &mut rng)[0], draw(sampling.value_radius, 1, &mut rng)[0]);
        let (z, zb) = (draw(sampling.z_radius, d, &mut rng), draw(sampling.z_radius, d, &mut rng));
        let (u, ub) = (domain.sample(&mut rng), domain.sample(&mut rng));
        let point = HamiltonianPoint {
            t: grid.time(k),
            x: &x,
            y,
            z: &z,
            u: &u,
            p,
            q,
            p2: &[],
            reference_x: &xb,
            reference_u: &ub,
        };
        let bar = HamiltonianPoint {
            x: &xb,
            y: yb,
            z: &zb,
            u: &ub,
            ..point
        };
        worst = worst.min(hamiltonian_condition_margin(model, &point, &bar)?);
    }
    let hamiltonian_worst_margin = if sampling.samples == 0 { 0.0 } else { worst };
    let tol = sampling.tolerance;
    let pass = terminal_worst_margin >= -tol && hamiltonian_worst_margin >= -tol && local.pass;
    Ok(SufficientConditionReport {
        terminal_worst_margin,
        terminal_samples: others.len() * traj.n_paths(),
        hamiltonian_worst_margin,
        hamiltonian_samples: sampling.samples,
        local,
        pass,
    })
}
