//! Experiment configuration.

use std::fmt;
use std::path::PathBuf;

use dualcell::assembly::BoundaryMode;
use dualcell::dynamics::SystemKind;

use crate::{ExperimentError, Result};

/// Experiment to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Evp,
    Cfl,
    Td,
    Sparsity,
    Throughput,
    Demo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Evp => "evp",
            Command::Cfl => "cfl",
            Command::Td => "td",
            Command::Sparsity => "sparsity",
            Command::Throughput => "throughput",
            Command::Demo => "demo",
        }
    }
}

/// Where meshes come from.
#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    /// `n x n` structured squares `[0, side]^2`, one per entry of `sizes`.
    Structured { side: f64 },
    /// A single mesh file; `sizes` is ignored.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub mesh: MeshSource,
    /// Polynomial degrees.
    pub degrees: Vec<usize>,
    /// Structured mesh resolutions `n`.
    pub sizes: Vec<usize>,
    pub bc: BoundaryMode,
    pub system: SystemKind,
    /// Fraction of the stable step `t0` used for time stepping.
    pub safety: f64,
    /// Final time for time-domain runs.
    pub t_end: f64,
    pub out: PathBuf,
    /// Run independent `(h, P)` cases in parallel.
    pub parallel: bool,
    /// Number of eigenvalues requested per case.
    pub eigen_count: usize,
    /// Timing repetitions for throughput runs.
    pub repetitions: usize,
    /// Steps per timing repetition.
    pub steps: usize,
}

impl ExperimentConfig {
    /// Defaults reproducing each experiment at desk scale.
    pub fn defaults(command: Command) -> Self {
        let pi = std::f64::consts::PI;
        let base = Self {
            command,
            mesh: MeshSource::Structured { side: pi },
            degrees: vec![1, 2],
            sizes: vec![4, 8, 16],
            bc: BoundaryMode::MagneticWall,
            system: SystemKind::Maxwell,
            safety: 0.95,
            t_end: 1.0,
            out: PathBuf::from("results"),
            parallel: false,
            eigen_count: 60,
            repetitions: 4,
            steps: 50,
        };
        match command {
            Command::Evp => base,
            Command::Cfl => Self { degrees: vec![1, 2, 3, 4, 5], sizes: vec![4, 8, 16], ..base },
            Command::Td => Self { degrees: vec![1, 2, 3], sizes: vec![4, 8, 16], ..base },
            Command::Sparsity => Self { degrees: (0..=17).collect(), sizes: vec![1], ..base },
            Command::Throughput => Self {
                mesh: MeshSource::Structured { side: 1.0 },
                degrees: vec![1, 2, 3, 4],
                sizes: vec![8, 16, 32],
                ..base
            },
            Command::Demo => Self {
                mesh: MeshSource::Structured { side: 1.0 },
                degrees: vec![3],
                sizes: vec![16],
                t_end: 0.4,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degrees.is_empty() {
            return Err(ExperimentError::Usage("the degree list is empty".into()));
        }
        if matches!(self.mesh, MeshSource::Structured { .. }) && self.sizes.is_empty() {
            return Err(ExperimentError::Usage("the mesh-size list is empty".into()));
        }
        if self.sizes.contains(&0) {
            return Err(ExperimentError::Usage("mesh sizes must be positive".into()));
        }
        if let MeshSource::Structured { side } = self.mesh {
            if !(side > 0.0 && side.is_finite()) {
                return Err(ExperimentError::Usage(format!("side length {side} must be positive")));
            }
        }
        if !(self.safety > 0.0 && self.safety.is_finite()) {
            return Err(ExperimentError::Usage(format!("safety factor {} must be positive", self.safety)));
        }
        let needs_time = matches!(self.command, Command::Demo);
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) || (needs_time && self.t_end == 0.0) {
            return Err(ExperimentError::Usage(format!("end time {} is invalid", self.t_end)));
        }
        if self.repetitions == 0 || self.steps == 0 {
            return Err(ExperimentError::Usage("repetitions and steps must be positive".into()));
        }
        Ok(())
    }

    /// Mesh-size entries to iterate over.
    pub fn mesh_sizes(&self) -> Vec<usize> {
        match self.mesh {
            MeshSource::Structured { .. } => self.sizes.clone(),
            MeshSource::File(_) => vec![0],
        }
    }

    pub fn side(&self) -> Option<f64> {
        match self.mesh {
            MeshSource::Structured { side } => Some(side),
            MeshSource::File(_) => None,
        }
    }
}

pub fn bc_name(bc: BoundaryMode) -> &'static str {
    match bc {
        BoundaryMode::ElectricWall => "electric-wall",
        BoundaryMode::MagneticWall => "magnetic-wall",
    }
}

pub fn system_name(s: SystemKind) -> &'static str {
    match s {
        SystemKind::Maxwell => "maxwell",
        SystemKind::Acoustic => "acoustic",
    }
}

fn join<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mesh = match &self.mesh {
            MeshSource::Structured { side } => format!("structured(side={side})"),
            MeshSource::File(p) => format!("file({})", p.display()),
        };
        write!(
            f,
            "command={} mesh={} degrees={} sizes={} bc={} system={} safety={} tend={} eigen_count={} repetitions={} steps={}",
            self.command.name(),
            mesh,
            join(&self.degrees),
            join(&self.sizes),
            bc_name(self.bc),
            system_name(self.system),
            self.safety,
            self.t_end,
            self.eigen_count,
            self.repetitions,
            self.steps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let mut c = ExperimentConfig::defaults(Command::Evp);
        assert!(c.validate().is_ok());
        c.degrees.clear();
        assert!(matches!(c.validate(), Err(ExperimentError::Usage(_))));
        let mut c = ExperimentConfig::defaults(Command::Demo);
        c.t_end = 0.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::defaults(Command::Td);
        c.t_end = 0.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn display_records_everything() {
        let s = ExperimentConfig::defaults(Command::Cfl).to_string();
        assert!(s.contains("command=cfl") && s.contains("degrees=1,2,3,4,5") && s.contains("bc=magnetic-wall"));
    }
}
