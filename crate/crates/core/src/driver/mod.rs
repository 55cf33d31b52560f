//! Configuration, problem setup, the optimization loop and result output.

pub mod config;
pub mod gradcheck;
pub mod optimize;
pub mod output;
pub mod problem;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bspline::BsplineError;
use crate::buckling::BucklingError;
use crate::fem::FemError;
use crate::levelset::LevelSetError;
use crate::mma::MmaError;
use crate::sensitivity::SensitivityError;

pub use config::{preset, ProblemConfig, BENCHMARKS};
pub use optimize::{evaluate, run_optimization, Evaluation, IterationRecord, RunHistory, RunOutcome, RunStatus};
pub use output::{write_outputs, OutputPaths};
pub use problem::{build_problem, Problem};

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("iteration {iter}: {source}")]
    Iteration { iter: usize, source: Box<DriverError> },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Buckling(#[from] BucklingError),
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Mma(#[from] MmaError),
    #[error(transparent)]
    Bspline(#[from] BsplineError),
}

impl DriverError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}
