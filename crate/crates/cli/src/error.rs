use std::path::Path;

use recon_core::grad::GradError;
use recon_core::mesh::MeshError;
use recon_core::render::RenderError;
use recon_core::solver::SolverError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// 0 success, 1 usage/config/input problems, 2 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m.clone(),
            CliError::Io { .. } => self.to_string(),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Resolution { .. }
            | SolverError::VertexCount { .. }
            | SolverError::StateCount { .. }
            | SolverError::NoImages
            | SolverError::Mesh(_) => CliError::Data(e.to_string()),
            SolverError::Schedule(m) => CliError::Config(m),
            SolverError::LearningRate(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<GradError> for CliError {
    fn from(e: GradError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        CliError::Data(e.to_string())
    }
}
