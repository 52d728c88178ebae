//! Experiment suite for the dual cell wave solver: eigenvalue convergence,
//! stable time steps, time-domain convergence, mass-matrix sparsity and
//! throughput. Every runner writes CSV files and returns a list of checks,
//! each a measured value against a pass band.

pub mod cfl;
pub mod config;
pub mod demo;
pub mod evp;
pub mod fit;
pub mod output;
pub mod sparsity;
pub mod td;
pub mod throughput;

use std::sync::Arc;

use dualcell::mesh::{generate_structured_square, MicroCellMesh, Triangulation};

pub use config::{Command, ExperimentConfig, MeshSource};
pub use output::{Check, Report};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Solver(#[from] dualcell::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

/// Builds the micro-cell mesh for one mesh-size entry: an `n x n`
/// structured square of the configured side, or the file mesh.
pub fn build_mesh(source: &MeshSource, n: usize) -> Result<Arc<MicroCellMesh>> {
    let tri: Triangulation = match source {
        MeshSource::Structured { side } => generate_structured_square(n, *side)?,
        MeshSource::File(path) => {
            let f = std::fs::File::open(path)?;
            dualcell::mesh::load_triangulation(std::io::BufReader::new(f))?
        }
    };
    Ok(Arc::new(MicroCellMesh::from_triangulation(&tri)?))
}

/// Runs the configured subcommand.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    std::fs::create_dir_all(&config.out)?;
    match config.command {
        Command::Evp => evp::run(config),
        Command::Cfl => cfl::run(config),
        Command::Td => td::run(config),
        Command::Sparsity => sparsity::run(config),
        Command::Throughput => throughput::run(config),
        Command::Demo => demo::run(config),
    }
}

/// Maps `f` over `items`, in parallel when requested. Output order follows
/// input order either way.
pub fn map_cases<T: Sync, R: Send>(parallel: bool, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    if parallel {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}
