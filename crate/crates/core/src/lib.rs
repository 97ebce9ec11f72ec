//! Numerical laboratory for forward-backward stochastic control systems whose
//! backward generator grows quadratically in `z`.
//!
//! The crate simulates the controlled system on a Brownian ensemble, solves the
//! state BSDE by least-squares Monte Carlo, solves linear BSDEs through their
//! exponential-weight and matrix-flow representations, builds the first and
//! second-order adjoint processes, runs spike-variation experiments with
//! log-log order fits, and checks the global and local maximum principle as
//! well as the sufficient optimality condition.
//!
//! Everything here is `no_std` (with `alloc`): IO, configuration and the
//! command-line runner live in the companion `qsmp` crate.
//!
//! Storage convention: all per-path processes are [`Paths`], stored
//! time-major. Matrices are flattened row-major. An `n x d` diffusion (or
//! adjoint `q`) stores entry `(i, j)` at `i * d + j`, i.e. column `j` is the
//! coefficient of the `j`-th Brownian coordinate.
#![no_std]
#![warn(missing_debug_implementations)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod adjoint;
pub mod bmo;
pub mod bsde;
mod error;
pub mod example;
pub mod linalg;
pub mod model;
pub mod models;
pub mod path_engine;
mod paths;
pub mod quadrature;
pub mod regression;
pub mod smp;
pub mod spike;
pub mod stats;

pub use error::{Error, Result};
pub use paths::{Paths, TimeGrid};
