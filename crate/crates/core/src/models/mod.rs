//! Concrete coefficient sets.

mod benchmark;
mod coupled;
mod example;
mod scalar_linear;

pub use benchmark::BenchmarkModel;
pub use coupled::CoupledSmoothModel;
pub use example::{ExampleModel, ExampleGenerator};
pub use scalar_linear::ScalarLinearModel;
