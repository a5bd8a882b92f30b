use thiserror::Error;

use crate::baim::BaimError;
use crate::config::ConfigError;
use crate::dynamics::DynamicsError;
use crate::femops::FemError;
use crate::mesh::MeshError;
use crate::pgf::PgfError;

/// Crate-level error; each variant names the pipeline stage that failed.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("operator assembly: {0}")]
    Fem(#[from] FemError),
    #[error("periodic Green's function: {0}")]
    Pgf(#[from] PgfError),
    #[error("potential solver: {0}")]
    Baim(#[from] BaimError),
    #[error("time integration: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("field assembly: {0}")]
    Field(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
