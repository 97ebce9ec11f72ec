//! Configuration, orchestration and report files for the `qsmp-core`
//! laboratory. The `qsmp` binary wraps [`run_to_dir`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod output;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run, RunError};
pub use output::{Check, CsvTable, ExperimentOutput};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("writing reports: {0}")]
    Io(#[from] std::io::Error),
}

/// Runs `config` and writes its reports into `dir`.
pub fn run_to_dir(config: &ExperimentConfig, dir: &Path, jobs: Option<usize>) -> Result<(ExperimentOutput, Vec<PathBuf>), Error> {
    let output = run(config, jobs)?;
    let files = output::write_outputs(dir, config, &output)?;
    Ok((output, files))
}
