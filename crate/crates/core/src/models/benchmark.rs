#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{ControlDomain, ControlSensitivity, ControlSystem, GrowthConstants, SystemDerivatives};

/// Smooth scalar benchmark for the spike-variation experiments:
/// `b = 0.1 x + u`, `sigma = 0.2 x + u`, `f = -0.1 y + 0.1 sin z + u^2`,
/// `Phi = tanh`, `U = [-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkModel {
    pub drift_rate: f64,
    pub vol_rate: f64,
    pub discount: f64,
    pub z_weight: f64,
}

impl Default for BenchmarkModel {
    fn default() -> Self {
        Self {
            drift_rate: 0.1,
            vol_rate: 0.2,
            discount: 0.1,
            z_weight: 0.1,
        }
    }
}

fn sech2(x: f64) -> f64 {
    let c = x.cosh();
    1.0 / (c * c)
}

impl ControlSystem for BenchmarkModel {
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
        ControlDomain::interval(-1.0, 1.0)
    }
    fn drift(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.drift_rate * x[0] + u[0];
    }
    fn diffusion(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.vol_rate * x[0] + u[0];
    }
    fn generator(&self, _t: f64, _x: &[f64], y: f64, z: &[f64], u: &[f64]) -> f64 {
        -self.discount * y + self.z_weight * z[0].sin() + u[0] * u[0]
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        x[0].tanh()
    }
}

impl SystemDerivatives for BenchmarkModel {
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
    fn generator_grad(&self, _t: f64, _x: &[f64], _y: f64, z: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, -self.discount, self.z_weight * z[0].cos()]);
    }
    fn generator_hessian(
        &self,
        _t: f64,
        _x: &[f64],
        _y: f64,
        z: &[f64],
        _u: &[f64],
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[8] = -self.z_weight * z[0].sin();
    }
    fn terminal_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = sech2(x[0]);
    }
    fn terminal_hessian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -2.0 * x[0].tanh() * sech2(x[0]);
    }
    fn constants(&self) -> GrowthConstants {
        GrowthConstants {
            alpha: 1.0,
            gamma: 0.0,
            l1: self.drift_rate.abs().max(self.vol_rate.abs()),
            l2: 1.0,
            l3: self.z_weight.abs(),
            l4: 2.0,
            terminal_sup: 1.0,
            generator_y_sup: self.discount.abs(),
        }
    }
    fn control_sensitivity(&self) -> Option<&dyn ControlSensitivity> {
        Some(self)
    }
}

impl ControlSensitivity for BenchmarkModel {
    fn drift_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn diffusion_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn generator_u(&self, _t: f64, _x: &[f64], _y: f64, _z: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * u[0];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_derivatives, check_growth_constants, random_probes};
    use rand::SeedableRng;

    #[test]
    fn derivatives_match_finite_differences() {
        let model = BenchmarkModel::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let probes = random_probes(&model, 200, 1.0, 3.0, &mut rng);
        let report = check_derivatives(&model, &probes, 1e-4);
        assert!(report.passed, "{report:?}");
        assert!(check_growth_constants(&model, &probes).passed);
    }
}
