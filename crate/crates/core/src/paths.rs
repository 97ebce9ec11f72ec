use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, shape, Error, Result};

/// Uniform partition `0 = t_0 < ... < t_N = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon must be positive and finite"));
        }
        if n_steps == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid times, `n_steps + 1`.
    pub fn n_times(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// Grid time `t_k`; the last point is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    /// Number of whole steps covering `duration`, or an error if `duration`
    /// is not an integer multiple of `dt`.
    pub fn steps_in(&self, duration: f64) -> Result<usize> {
        let dt = self.dt();
        let ratio = duration / dt;
        let rounded = num_traits::Float::round(ratio);
        if !(duration >= 0.0) || (ratio - rounded).abs() > 1e-9 * (1.0 + ratio.abs()) {
            return Err(Error::OffGrid { value: duration, dt });
        }
        Ok(rounded as usize)
    }

    /// Same partition with twice as many steps.
    pub fn refined(&self) -> Self {
        Self {
            horizon: self.horizon,
            n_steps: 2 * self.n_steps,
        }
    }
}

/// Per-path, per-time vector data stored time-major: the values of all paths
/// at one time index are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    n_paths: usize,
    n_times: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Paths {
    pub fn zeros(n_paths: usize, n_times: usize, dim: usize) -> Self {
        Self {
            n_paths,
            n_times,
            dim,
            data: vec![0.0; n_paths * n_times * dim],
        }
    }

    /// Every path and time holds `value`.
    pub fn filled(n_paths: usize, n_times: usize, value: &[f64]) -> Self {
        let dim = value.len();
        let mut data = Vec::with_capacity(n_paths * n_times * dim);
        for _ in 0..n_paths * n_times {
            data.extend_from_slice(value);
        }
        Self {
            n_paths,
            n_times,
            dim,
            data,
        }
    }

    pub fn from_vec(n_paths: usize, n_times: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_paths * n_times * dim {
            return Err(shape("data length does not match n_paths * n_times * dim"));
        }
        Ok(Self {
            n_paths,
            n_times,
            dim,
            data,
        })
    }

    /// Builds a path set by evaluating `f(path, k, out)` everywhere.
    pub fn from_fn(
        n_paths: usize,
        n_times: usize,
        dim: usize,
        mut f: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let mut out = Self::zeros(n_paths, n_times, dim);
        for k in 0..n_times {
            for path in 0..n_paths {
                f(path, k, out.at_mut(path, k));
            }
        }
        out
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn offset(&self, path: usize, k: usize) -> usize {
        debug_assert!(path < self.n_paths && k < self.n_times);
        (k * self.n_paths + path) * self.dim
    }

    #[inline]
    pub fn at(&self, path: usize, k: usize) -> &[f64] {
        let o = self.offset(path, k);
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn at_mut(&mut self, path: usize, k: usize) -> &mut [f64] {
        let o = self.offset(path, k);
        &mut self.data[o..o + self.dim]
    }

    /// First component at `(path, k)`; the natural accessor for scalar processes.
    #[inline]
    pub fn scalar(&self, path: usize, k: usize) -> f64 {
        self.data[self.offset(path, k)]
    }

    #[inline]
    pub fn set_scalar(&mut self, path: usize, k: usize, value: f64) {
        let o = self.offset(path, k);
        self.data[o] = value;
    }

    /// All paths at time index `k`, `n_paths * dim` values.
    pub fn time_slice(&self, k: usize) -> &[f64] {
        let w = self.n_paths * self.dim;
        &self.data[k * w..(k + 1) * w]
    }

    pub fn time_slice_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.n_paths * self.dim;
        &mut self.data[k * w..(k + 1) * w]
    }

    /// Component `c` of every path at time `k`.
    pub fn component(&self, k: usize, c: usize) -> Vec<f64> {
        self.time_slice(k)
            .chunks_exact(self.dim)
            .map(|v| v[c])
            .collect()
    }

    pub fn set_component(&mut self, k: usize, c: usize, values: &[f64]) {
        let dim = self.dim;
        for (v, &x) in self.time_slice_mut(k).chunks_exact_mut(dim).zip(values) {
            v[c] = x;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Elementwise `self - other`.
    pub fn difference(&self, other: &Paths) -> Result<Paths> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Paths { data, ..*self })
    }

    pub fn scaled(&self, factor: f64) -> Paths {
        Paths {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..*self
        }
    }

    pub fn check_same_shape(&self, other: &Paths) -> Result<()> {
        if self.n_paths != other.n_paths || self.n_times != other.n_times || self.dim != other.dim {
            return Err(shape("path sets differ in shape"));
        }
        Ok(())
    }

    /// Per path, `max_k |value(path, k)|` using the Euclidean norm.
    pub fn pathwise_sup_norm(&self) -> Vec<f64> {
        let mut sup = vec![0.0_f64; self.n_paths];
        for k in 0..self.n_times {
            for (s, v) in sup.iter_mut().zip(self.time_slice(k).chunks_exact(self.dim)) {
                *s = s.max(crate::linalg::norm(v));
            }
        }
        sup
    }

    /// Per path, `sum_k |value(path, k)|^2 dt` over the first `n_steps` indices
    /// (left-point rule).
    pub fn pathwise_square_integral(&self, dt: f64, n_steps: usize) -> Vec<f64> {
        let mut acc = vec![0.0_f64; self.n_paths];
        for k in 0..n_steps.min(self.n_times) {
            for (s, v) in acc.iter_mut().zip(self.time_slice(k).chunks_exact(self.dim)) {
                *s += crate::linalg::norm_sq(v) * dt;
            }
        }
        acc
    }
}
