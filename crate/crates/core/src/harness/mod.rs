//! Configuration, file formats, synthetic demonstrations and experiment
//! orchestration.

pub mod config;
pub mod experiment;
pub mod io;
pub mod pipeline;
pub mod synth;

pub use config::ExperimentConfig;
pub use experiment::{
    run_sweep, run_table, run_trial, trial_seed, Prepared, ReportHeader, SweepKind, SweepPoint,
    SweepReport, TableReport, TableRow,
};
pub use pipeline::{learn, mandrel_legs, plan, run_pipeline, Artifacts, Learned, LearnedModel};
pub use synth::{gen_demos, SyntheticDemoSpec};

use crate::context::ContextError;
use crate::demo::{DemoError, GmmError};
use crate::kalman::KalmanError;
use crate::sim::SimError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("report has no trials")]
    EmptyReport,
    #[error(transparent)]
    Demo(#[from] DemoError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

impl From<GmmError> for HarnessError {
    fn from(e: GmmError) -> Self {
        HarnessError::Demo(e.into())
    }
}

impl HarnessError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            HarnessError::Missing(path.to_path_buf())
        } else {
            HarnessError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Io { .. } => "io",
            HarnessError::Missing(_) => "missing_input",
            HarnessError::Parse { .. } => "parse",
            HarnessError::Config(_) => "config",
            HarnessError::EmptyReport => "empty_report",
            HarnessError::Demo(_) => "demo",
            HarnessError::Sim(SimError::Diverged { .. }) => "sim_diverged",
            HarnessError::Sim(SimError::InvalidInput(_)) => "invalid_input",
            HarnessError::Sim(_) => "sim",
            HarnessError::Context(_) => "context",
            HarnessError::Kalman(_) => "kalman",
        }
    }

    /// File the error refers to, if any.
    pub fn path(&self) -> Option<&Path> {
        match self {
            HarnessError::Io { path, .. } | HarnessError::Parse { path, .. } => Some(path),
            HarnessError::Missing(p) => Some(p),
            _ => None,
        }
    }
}
