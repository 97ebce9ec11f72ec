#[allow(unused_imports)]
use num_traits::Float;

use crate::model::{ControlDomain, ControlSensitivity, ControlSystem, GrowthConstants, SystemDerivatives};

/// The scalar generator nonlinearity `g(z) = (z / 2)(2|z| - 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExampleGenerator;

impl ExampleGenerator {
    pub fn value(&self, z: f64) -> f64 {
        0.5 * z * (2.0 * z.abs() - 1.0)
    }

    /// `g'(z) = 2|z| - 1/2`.
    pub fn derivative(&self, z: f64) -> f64 {
        2.0 * z.abs() - 0.5
    }

    /// `g''(z) = 2 sign(z)`, taken as 0 at the kink.
    pub fn second_derivative(&self, z: f64) -> f64 {
        if z > 0.0 {
            2.0
        } else if z < 0.0 {
            -2.0
        } else {
            0.0
        }
    }
}

/// Scalar example with `b = 0`, `sigma = u`, `f = g(z) + u^2`,
/// `Phi = arctan` and a configurable control domain (`{0, 1}` by default).
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleModel {
    pub domain: ControlDomain,
    pub g: ExampleGenerator,
}

impl Default for ExampleModel {
    fn default() -> Self {
        Self {
            domain: ControlDomain::finite_scalars(&[0.0, 1.0]),
            g: ExampleGenerator,
        }
    }
}

impl ExampleModel {
    /// Same coefficients on the convex hull `[0, 1]`.
    pub fn convex_hull() -> Self {
        Self {
            domain: ControlDomain::interval(0.0, 1.0),
            g: ExampleGenerator,
        }
    }

    pub fn terminal_derivative(&self, x: f64) -> f64 {
        1.0 / (1.0 + x * x)
    }

    pub fn terminal_second_derivative(&self, x: f64) -> f64 {
        let s = 1.0 + x * x;
        -2.0 * x / (s * s)
    }
}

impl ControlSystem for ExampleModel {
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
        self.domain.clone()
    }
    fn drift(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn diffusion(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn generator(&self, _t: f64, _x: &[f64], _y: f64, z: &[f64], u: &[f64]) -> f64 {
        self.g.value(z[0]) + u[0] * u[0]
    }
    fn terminal(&self, x: &[f64]) -> f64 {
        x[0].atan()
    }
}

impl SystemDerivatives for ExampleModel {
    fn drift_x(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn diffusion_x(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn drift_xx(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn diffusion_xx(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn generator_grad(&self, _t: f64, _x: &[f64], _y: f64, z: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, 0.0, self.g.derivative(z[0])]);
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
        out[8] = self.g.second_derivative(z[0]);
    }
    fn terminal_grad(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.terminal_derivative(x[0]);
    }
    fn terminal_hessian(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.terminal_second_derivative(x[0]);
    }
    fn constants(&self) -> GrowthConstants {
        let u_max = self
            .domain
            .test_points(2)
            .iter()
            .fold(0.0_f64, |m, p| m.max(p[0].abs()));
        GrowthConstants {
            alpha: u_max * u_max,
            gamma: 2.0,
            l1: 0.0,
            l2: 0.0,
            l3: 0.5,
            l4: 2.0 * u_max,
            terminal_sup: core::f64::consts::FRAC_PI_2,
            generator_y_sup: 0.0,
        }
    }
    fn control_sensitivity(&self) -> Option<&dyn ControlSensitivity> {
        Some(self)
    }
}

impl ControlSensitivity for ExampleModel {
    fn drift_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn diffusion_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }
    fn generator_u(&self, _t: f64, _x: &[f64], _y: f64, _z: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * u[0];
    }
}
