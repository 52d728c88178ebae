//! Command-line driver for the experiment suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dualcell::assembly::BoundaryMode;
use dualcell::dynamics::SystemKind;
use dualcell_experiments::{run, Command, ExperimentConfig, MeshSource};

#[derive(Parser, Debug)]
#[command(name = "dualcell2d", about = "Dual cell wave solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// Comma-separated polynomial degrees.
    #[arg(long, global = true, value_delimiter = ',')]
    degrees: Option<Vec<usize>>,

    /// Comma-separated structured mesh resolutions.
    #[arg(long, global = true, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,

    #[arg(long, global = true, value_enum)]
    bc: Option<Bc>,

    #[arg(long, global = true, value_enum)]
    system: Option<System>,

    /// Fraction of the stable step.
    #[arg(long, global = true)]
    safety: Option<f64>,

    /// Final time.
    #[arg(long, global = true)]
    tend: Option<f64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Triangle mesh file replacing the structured squares.
    #[arg(long, global = true)]
    mesh: Option<PathBuf>,

    /// Side length of the structured square.
    #[arg(long, global = true)]
    side: Option<f64>,

    /// Run independent cases in parallel.
    #[arg(long, global = true)]
    parallel: bool,

    #[arg(long, global = true)]
    eigen_count: Option<usize>,

    #[arg(long, global = true)]
    repetitions: Option<usize>,

    #[arg(long, global = true)]
    steps: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// Eigenvalue convergence and spurious-mode scan.
    Evp,
    /// Stable time step scaling.
    Cfl,
    /// Time-domain convergence.
    Td,
    /// Mass-matrix and inverse sparsity.
    Sparsity,
    /// DoFs per second and memory.
    Throughput,
    /// Gaussian-peak run with time series and snapshot.
    Demo,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Bc {
    ElectricWall,
    MagneticWall,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum System {
    Maxwell,
    Acoustic,
}

impl Cli {
    fn config(self) -> ExperimentConfig {
        let command = match self.command {
            Sub::Evp => Command::Evp,
            Sub::Cfl => Command::Cfl,
            Sub::Td => Command::Td,
            Sub::Sparsity => Command::Sparsity,
            Sub::Throughput => Command::Throughput,
            Sub::Demo => Command::Demo,
        };
        let mut c = ExperimentConfig::defaults(command);
        if let Some(side) = self.side {
            c.mesh = MeshSource::Structured { side };
        }
        if let Some(path) = self.mesh {
            c.mesh = MeshSource::File(path);
        }
        if let Some(v) = self.degrees {
            c.degrees = v;
        }
        if let Some(v) = self.sizes {
            c.sizes = v;
        }
        if let Some(bc) = self.bc {
            c.bc = match bc {
                Bc::ElectricWall => BoundaryMode::ElectricWall,
                Bc::MagneticWall => BoundaryMode::MagneticWall,
            };
        }
        if let Some(s) = self.system {
            c.system = match s {
                System::Maxwell => SystemKind::Maxwell,
                System::Acoustic => SystemKind::Acoustic,
            };
        }
        c.safety = self.safety.unwrap_or(c.safety);
        c.t_end = self.tend.unwrap_or(c.t_end);
        c.out = self.out.unwrap_or(c.out);
        c.parallel = self.parallel;
        c.eigen_count = self.eigen_count.unwrap_or(c.eigen_count);
        c.repetitions = self.repetitions.unwrap_or(c.repetitions);
        c.steps = self.steps.unwrap_or(c.steps);
        c
    }
}

fn main() -> ExitCode {
    let config = Cli::parse().config();
    println!("# {config}");
    match run(&config) {
        Ok(report) => {
            for n in &report.notes {
                println!("note: {n}");
            }
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            for c in &report.checks {
                println!("{c}");
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
