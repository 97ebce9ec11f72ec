use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};

use crate::linalg::dot;
use crate::model::{ControlDomain, ControlSensitivity, ControlSystem, GrowthConstants, SystemDerivatives};

/// Smooth fully coupled model with random parameters, used to exercise the
/// multi-dimensional code paths (`n` states, `d` noises, `k` controls):
///
/// ```text
/// b_i      = sum_l A_il x_l + h_i sin(v_i . x) + sum_c G_ic u_c
/// sigma_ij = S_ij + C_ij sin(w_ij . x) + E_ij u_(j mod k)
/// f        = lam y + rho sin(om . x) + m . z + gam |z|^2 / 2
///            + kap sin(x_0) z_0 + eta cos(x_(n-1)) y + |u|^2 / 2 + nu u_0 z_(d-1)
/// Phi      = sin(ph . x)
/// ```
///
/// on the control box `[-1, 1]^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSmoothModel {
    n: usize,
    d: usize,
    k: usize,
    a: Vec<f64>,
    h: Vec<f64>,
    v: Vec<f64>,
    g: Vec<f64>,
    s: Vec<f64>,
    c: Vec<f64>,
    w: Vec<f64>,
    e: Vec<f64>,
    lam: f64,
    rho: f64,
    om: Vec<f64>,
    m: Vec<f64>,
    gam: f64,
    kap: f64,
    eta: f64,
    nu: f64,
    ph: Vec<f64>,
}

impl CoupledSmoothModel {
    pub fn random(n: usize, d: usize, k: usize, seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |len: usize, scale: f64| -> Vec<f64> {
            (0..len)
                .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
                .collect()
        };
        let a = draw(n * n, 0.3);
        let h = draw(n, 0.2);
        let v = draw(n * n, 1.0);
        let g = draw(n * k, 0.5);
        let s = draw(n * d, 0.4);
        let c = draw(n * d, 0.2);
        let w = draw(n * d * n, 1.0);
        let e = draw(n * d, 0.3);
        let scalars = draw(6, 0.3);
        let om = draw(n, 1.0);
        let m = draw(d, 0.3);
        let ph = draw(n, 1.0);
        Self {
            n,
            d,
            k,
            a,
            h,
            v,
            g,
            s,
            c,
            w,
            e,
            lam: scalars[0],
            rho: scalars[1],
            om,
            m,
            gam: scalars[2].abs(),
            kap: scalars[3],
            eta: scalars[4],
            nu: scalars[5],
            ph,
        }
    }

    fn v_row(&self, i: usize) -> &[f64] {
        &self.v[i * self.n..(i + 1) * self.n]
    }

    fn w_row(&self, i: usize, j: usize) -> &[f64] {
        let o = (i * self.d + j) * self.n;
        &self.w[o..o + self.n]
    }
}

impl ControlSystem for CoupledSmoothModel {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn noise_dim(&self) -> usize {
        self.d
    }
    fn control_dim(&self) -> usize {
        self.k
    }
    fn control_domain(&self) -> ControlDomain {
        ControlDomain::Box {
            lower: vec![-1.0; self.k],
            upper: vec![1.0; self.k],
        }
    }
    fn drift(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let (n, k) = (self.n, self.k);
        for i in 0..n {
            out[i] = dot(&self.a[i * n..(i + 1) * n], x)
                + self.h[i] * dot(self.v_row(i), x).sin()
                + dot(&self.g[i * k..(i + 1) * k], u);
        }
    }
    fn diffusion(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let d = self.d;
        for i in 0..self.n {
            for j in 0..d {
                let ij = i * d + j;
                out[ij] = self.s[ij]
                    + self.c[ij] * dot(self.w_row(i, j), x).sin()
                    + self.e[ij] * u[j % self.k];
            }
        }
    }
    fn generator(&self, _t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64]) -> f64 {
        let n = self.n;
        self.lam * y
            + self.rho * dot(&self.om, x).sin()
            + dot(&self.m, z)
            + 0.5 * self.gam * dot(z, z)
            + self.kap * x[0].sin() * z[0]
            + self.eta * x[n - 1].cos() * y
            + 0.5 * dot(u, u)
            + self.nu * u[0] * z[self.d - 1]
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        dot(&self.ph, x).sin()
    }
}

impl SystemDerivatives for CoupledSmoothModel {
    fn drift_x(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let cs = self.h[i] * dot(self.v_row(i), x).cos();
            for l in 0..n {
                out[i * n + l] = self.a[i * n + l] + cs * self.v_row(i)[l];
            }
        }
    }
    fn diffusion_x(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        for j in 0..d {
            for i in 0..n {
                let wr = self.w_row(i, j);
                let cs = self.c[i * d + j] * dot(wr, x).cos();
                for l in 0..n {
                    out[(j * n + i) * n + l] = cs * wr[l];
                }
            }
        }
    }
    fn drift_xx(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let vr = self.v_row(i);
            let sn = -self.h[i] * dot(vr, x).sin();
            for a in 0..n {
                for l in 0..n {
                    out[(i * n + a) * n + l] = sn * vr[a] * vr[l];
                }
            }
        }
    }
    fn diffusion_xx(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        for i in 0..n {
            for j in 0..d {
                let wr = self.w_row(i, j);
                let sn = -self.c[i * d + j] * dot(wr, x).sin();
                for a in 0..n {
                    for l in 0..n {
                        out[((i * d + j) * n + a) * n + l] = sn * wr[a] * wr[l];
                    }
                }
            }
        }
    }
    fn generator_grad(&self, _t: f64, x: &[f64], y: f64, z: &[f64], u: &[f64], out: &mut [f64]) {
        let (n, d) = (self.n, self.d);
        out.iter_mut().for_each(|v| *v = 0.0);
        let co = self.rho * dot(&self.om, x).cos();
        for l in 0..n {
            out[l] = co * self.om[l];
        }
        out[0] += self.kap * x[0].cos() * z[0];
        out[n - 1] -= self.eta * x[n - 1].sin() * y;
        out[n] = self.lam + self.eta * x[n - 1].cos();
        for j in 0..d {
            out[n + 1 + j] = self.m[j] + self.gam * z[j];
        }
        out[n + 1] += self.kap * x[0].sin();
        out[n + d] += self.nu * u[0];
    }
    fn generator_hessian(
        &self,
        _t: f64,
        x: &[f64],
        y: f64,
        z: &[f64],
        _u: &[f64],
        out: &mut [f64],
    ) {
        let (n, d) = (self.n, self.d);
        let g = n + 1 + d;
        out.iter_mut().for_each(|v| *v = 0.0);
        let sn = -self.rho * dot(&self.om, x).sin();
        for a in 0..n {
            for l in 0..n {
                out[a * g + l] = sn * self.om[a] * self.om[l];
            }
        }
        out[0] -= self.kap * x[0].sin() * z[0];
        out[(n - 1) * g + n - 1] -= self.eta * x[n - 1].cos() * y;
        let xy = -self.eta * x[n - 1].sin();
        out[(n - 1) * g + n] += xy;
        out[n * g + n - 1] += xy;
        let xz = self.kap * x[0].cos();
        out[n + 1] += xz;
        out[(n + 1) * g] += xz;
        for j in 0..d {
            out[(n + 1 + j) * g + n + 1 + j] = self.gam;
        }
    }
    fn terminal_grad(&self, x: &[f64], out: &mut [f64]) {
        let c = dot(&self.ph, x).cos();
        for (o, p) in out.iter_mut().zip(&self.ph) {
            *o = c * p;
        }
    }
    fn terminal_hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n;
        let s = -dot(&self.ph, x).sin();
        for a in 0..n {
            for l in 0..n {
                out[a * n + l] = s * self.ph[a] * self.ph[l];
            }
        }
    }
    fn constants(&self) -> GrowthConstants {
        let l1 = self.a.iter().map(|v| v.abs()).sum::<f64>()
            + self.h.iter().map(|v| v.abs()).sum::<f64>()
            + self.c.iter().map(|v| v.abs()).sum::<f64>();
        GrowthConstants {
            alpha: self.rho.abs() + 0.5 * self.k as f64,
            gamma: self.gam,
            l1,
            l2: self.g.iter().chain(&self.e).map(|v| v.abs()).sum(),
            l3: self.m.iter().map(|v| v.abs()).sum::<f64>() + self.kap.abs() + self.nu.abs(),
            l4: 1.0 + self.nu.abs(),
            terminal_sup: 1.0,
            generator_y_sup: self.lam.abs() + self.eta.abs(),
        }
    }
    fn control_sensitivity(&self) -> Option<&dyn ControlSensitivity> {
        Some(self)
    }
}

impl ControlSensitivity for CoupledSmoothModel {
    fn drift_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.g);
    }
    fn diffusion_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        let (n, d, k) = (self.n, self.d, self.k);
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..d {
            for i in 0..n {
                out[(j * n + i) * k + j % k] = self.e[i * d + j];
            }
        }
    }
    fn generator_u(&self, _t: f64, _x: &[f64], _y: f64, z: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
        out[0] += self.nu * z[self.d - 1];
    }
}
