#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{ControlDomain, ControlSystem, GrowthConstants, SystemDerivatives};

/// Scalar model whose backward generator is linear in `(y, z)`:
///
/// ```text
/// b = a x,  sigma = s0 + s x,
/// f = lambda(x) y + mu(x) z + phi(x),
/// lambda(x) = l0 + l1 sin x,  mu(x) = m0 + m1 cos x,  phi(x) = c0 + c1 x,
/// Phi(x) = k0 + k1 x + k2 tanh x + k3 x^2 / 2.
/// ```
///
/// The control is a dummy scalar fixed at 0.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ScalarLinearModel {
    pub drift_rate: f64,
    pub vol_level: f64,
    pub vol_rate: f64,
    pub lambda: [f64; 2],
    pub mu: [f64; 2],
    pub phi: [f64; 2],
    pub terminal: [f64; 4],
}

impl ScalarLinearModel {
    /// `X = x0 + W` with constant `(lambda, mu, phi)` and terminal `c`.
    pub fn constant(lambda: f64, mu: f64, phi: f64, terminal: f64) -> Self {
        Self {
            vol_level: 1.0,
            lambda: [lambda, 0.0],
            mu: [mu, 0.0],
            phi: [phi, 0.0],
            terminal: [terminal, 0.0, 0.0, 0.0],
            ..Self::default()
        }
    }

    pub fn lambda_at(&self, x: f64) -> f64 {
        self.lambda[0] + self.lambda[1] * x.sin()
    }

    pub fn mu_at(&self, x: f64) -> f64 {
        self.mu[0] + self.mu[1] * x.cos()
    }

    pub fn phi_at(&self, x: f64) -> f64 {
        self.phi[0] + self.phi[1] * x
    }

    pub fn terminal_at(&self, x: f64) -> f64 {
        let k = &self.terminal;
        k[0] + k[1] * x + k[2] * x.tanh() + 0.5 * k[3] * x * x
    }
}

impl ControlSystem for ScalarLinearModel {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn control_domain(&self) -> ControlDomain {
        ControlDomain::finite_scalars(&[0.0])
    }
    fn drift(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = self.drift_rate * x[0];
    }
    fn diffusion(&self, _t: f64, x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = self.vol_level + self.vol_rate * x[0];
    }
    fn generator(&self, _t: f64, x: &[f64], y: f64, z: &[f64], _u: &[f64]) -> f64 {
        self.lambda_at(x[0]) * y + self.mu_at(x[0]) * z[0] + self.phi_at(x[0])
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        self.terminal_at(x[0])
    }
}

impl SystemDerivatives for ScalarLinearModel {
    fn drift_x(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = self.drift_rate;
    }
    fn diffusion_x(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = self.vol_rate;
    }
    fn drift_xx(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn diffusion_xx(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn generator_grad(&self, _t: f64, x: &[f64], y: f64, z: &[f64], _u: &[f64], out: &mut [f64]) {
        let x = x[0];
        out[0] = self.lambda[1] * x.cos() * y - self.mu[1] * x.sin() * z[0] + self.phi[1];
        out[1] = self.lambda_at(x);
        out[2] = self.mu_at(x);
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
        let x = x[0];
        let fxy = self.lambda[1] * x.cos();
        let fxz = -self.mu[1] * x.sin();
        out.copy_from_slice(&[
            -self.lambda[1] * x.sin() * y - self.mu[1] * x.cos() * z[0],
            fxy,
            fxz,
            fxy,
            0.0,
            0.0,
            fxz,
            0.0,
            0.0,
        ]);
    }
    fn terminal_grad(&self, x: &[f64], out: &mut [f64]) {
        let k = &self.terminal;
        let c = x[0].cosh();
        out[0] = k[1] + k[2] / (c * c) + k[3] * x[0];
    }
    fn terminal_hessian(&self, x: &[f64], out: &mut [f64]) {
        let k = &self.terminal;
        let c = x[0].cosh();
        out[0] = -2.0 * k[2] * x[0].tanh() / (c * c) + k[3];
    }
    /// Bounds in `x` are taken over `|x| <= 1`.
    fn constants(&self) -> GrowthConstants {
        GrowthConstants {
            alpha: self.phi[0].abs() + self.phi[1].abs(),
            gamma: 0.0,
            l1: self.drift_rate.abs().max(self.vol_rate.abs()),
            l2: 0.0,
            l3: self.mu[0].abs() + self.mu[1].abs(),
            l4: 0.0,
            terminal_sup: self.terminal.iter().map(|k| k.abs()).sum(),
            generator_y_sup: self.lambda[0].abs() + self.lambda[1].abs(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_derivatives, random_probes};
    use rand::SeedableRng;

    #[test]
    fn derivatives_match_finite_differences() {
        let model = ScalarLinearModel {
            drift_rate: 0.3,
            vol_level: 0.5,
            vol_rate: -0.2,
            lambda: [0.1, 0.4],
            mu: [-0.3, 0.2],
            phi: [0.5, -0.7],
            terminal: [0.1, 0.2, 0.9, 0.4],
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let probes = random_probes(&model, 100, 1.0, 2.0, &mut rng);
        let report = check_derivatives(&model, &probes, 1e-4);
        assert!(report.passed, "{report:?}");
    }
}
