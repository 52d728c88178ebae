//! Degrees of freedom advanced per second for a Gaussian peak.

use std::time::Instant;

use dualcell::dynamics::{cfl_timestep, Leapfrog, WaveSystem};
use dualcell::{Error, Point};

use crate::config::ExperimentConfig;
use crate::fit::loglog_fit;
use crate::output::{num, Check, CsvTable, Report};
use crate::td::make_system;
use crate::{build_mesh, Result};

/// Looser power-iteration settings: the step only needs to be stable.
const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITERS: usize = 5_000;

pub fn gaussian_peak(p: Point) -> f64 {
    (-2500.0 * ((p.x - 0.5).powi(2) + (p.y - 0.5).powi(2))).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputCase {
    pub n: usize,
    pub degree: usize,
    pub h: f64,
    pub tau: f64,
    pub scalar_dofs: usize,
    pub vector_dofs: usize,
    /// Best wall time over the repetitions, seconds.
    pub best_seconds: f64,
    pub dofs_per_second: f64,
    pub memory_bytes: usize,
}

impl ThroughputCase {
    pub fn total_dofs(&self) -> usize {
        self.scalar_dofs + self.vector_dofs
    }
}

fn step_size(sys: &WaveSystem, safety: f64) -> Result<f64> {
    let lambda = match sys.lambda_max(POWER_TOL, POWER_MAX_ITERS) {
        Ok(l) => l,
        Err(Error::NotConverged { estimate, .. }) => estimate,
        Err(e) => return Err(e.into()),
    };
    Ok(cfl_timestep(lambda, safety).unwrap_or(1.0))
}

pub fn solve_case(config: &ExperimentConfig, n: usize, degree: usize) -> Result<ThroughputCase> {
    let sys = make_system(config, build_mesh(&config.mesh, n)?, degree)?;
    let tau = step_size(&sys, config.safety)?;
    let mut lf = Leapfrog::new(&sys, tau)?;
    let h0 = sys.primal_space().interpolate_scalar(gaussian_peak)?.values;
    let mut state = lf.initialize(vec![0.0; sys.dual_space().total_dofs()], h0)?;
    let mut best = f64::INFINITY;
    for _ in 0..config.repetitions {
        let start = Instant::now();
        for _ in 0..config.steps {
            lf.step(&mut state);
        }
        best = best.min(start.elapsed().as_secs_f64());
    }
    if !state.max_abs().is_finite() {
        return Err(Error::Diverged { step: state.step }.into());
    }
    let (ns, nv) = (sys.primal_space().total_dofs(), sys.dual_space().total_dofs());
    let state_bytes = (2 * ns + nv) * std::mem::size_of::<f64>();
    Ok(ThroughputCase {
        n,
        degree,
        h: sys.mesh().h(),
        tau,
        scalar_dofs: ns,
        vector_dofs: nv,
        best_seconds: best,
        dofs_per_second: (ns + nv) as f64 * config.steps as f64 / best.max(1e-12),
        memory_bytes: sys.loop_memory_bytes() + state_bytes,
    })
}

pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let mut report = Report::default();
    let mut table = CsvTable::new(&[
        "maxh",
        "order",
        "tau",
        "scalardofs",
        "vectorialdofs",
        "totaldofs",
        "dofspers",
        "memory_bytes",
        "noisy",
    ]);
    // Timing runs are sequential regardless of the parallel flag.
    let mut solved = Vec::new();
    for &p in &config.degrees {
        for n in config.mesh_sizes() {
            match solve_case(config, n, p) {
                Ok(c) => {
                    table.push(vec![
                        num(c.h),
                        p.to_string(),
                        num(c.tau),
                        c.scalar_dofs.to_string(),
                        c.vector_dofs.to_string(),
                        c.total_dofs().to_string(),
                        num(c.dofs_per_second),
                        c.memory_bytes.to_string(),
                        (config.repetitions == 1).to_string(),
                    ]);
                    solved.push(c);
                }
                Err(e) => report.notes.push(format!("n={n} P={p}: {e}")),
            }
        }
    }
    if config.repetitions == 1 {
        report.notes.push("single repetition: timings are noisy".into());
    }
    report.files.push(table.write(&config.out, "throughput.csv", &format!("config: {config}"))?);
    if solved.len() >= 2 {
        let max = solved.iter().map(|c| c.dofs_per_second).fold(f64::MIN, f64::max);
        let min = solved.iter().map(|c| c.dofs_per_second).fold(f64::MAX, f64::min);
        report.checks.push(Check::below("throughput DoFs/s max/min over grid", max / min, 4.0));
    }
    for &p in &config.degrees {
        let per: Vec<&ThroughputCase> = solved.iter().filter(|c| c.degree == p).collect();
        let d: Vec<f64> = per.iter().map(|c| c.total_dofs() as f64).collect();
        let m: Vec<f64> = per.iter().map(|c| c.memory_bytes as f64).collect();
        if let Some(f) = loglog_fit(&d, &m) {
            if f.points >= 3 {
                report.checks.push(Check::within(format!("throughput memory slope vs DoFs P={p}"), f.slope, 0.9, 1.1));
            }
        }
    }
    Ok(report)
}
