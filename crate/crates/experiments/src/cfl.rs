//! Dependence of the stable time step on mesh size and degree.

use dualcell::dynamics::cfl_timestep;
use dualcell::Error;

use crate::config::ExperimentConfig;
use crate::fit::loglog_fit;
use crate::output::{num, Check, CsvTable, Report};
use crate::td::{make_system, POWER_MAX_ITERS, POWER_TOL};
use crate::{build_mesh, map_cases, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CflCase {
    pub n: usize,
    pub degree: usize,
    pub h: f64,
    pub dofs: usize,
    pub lambda_max: f64,
    pub t0: f64,
    pub converged: bool,
}

pub fn solve_case(config: &ExperimentConfig, n: usize, degree: usize) -> Result<CflCase> {
    let sys = make_system(config, build_mesh(&config.mesh, n)?, degree)?;
    let (lambda_max, converged) = match sys.lambda_max(POWER_TOL, POWER_MAX_ITERS) {
        Ok(l) => (l, true),
        Err(Error::NotConverged { estimate, .. }) => (estimate, false),
        Err(e) => return Err(e.into()),
    };
    Ok(CflCase {
        n,
        degree,
        h: sys.mesh().h(),
        dofs: sys.total_dofs(),
        lambda_max,
        t0: cfl_timestep(lambda_max, 1.0).unwrap_or(f64::INFINITY),
        converged,
    })
}

/// `max / min` of `t0 (P + 1)^2` over a set of cases.
pub fn scaled_band(cases: &[&CflCase]) -> f64 {
    let v: Vec<f64> = cases.iter().map(|c| c.t0 * ((c.degree + 1) as f64).powi(2)).collect();
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    max / min
}

pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let cases: Vec<(usize, usize)> =
        config.degrees.iter().flat_map(|&p| config.mesh_sizes().into_iter().map(move |n| (n, p))).collect();
    let results = map_cases(config.parallel, &cases, |&(n, p)| solve_case(config, n, p));
    let comment = format!("config: {config}");
    let mut report = Report::default();
    let mut table = CsvTable::new(&["P", "n", "h", "dofs", "lambda_max", "t0", "t0_times_p1_squared", "converged"]);
    let mut solved = Vec::new();
    for (&(n, p), r) in cases.iter().zip(results) {
        match r {
            Ok(c) => {
                table.push(vec![
                    p.to_string(),
                    n.to_string(),
                    num(c.h),
                    c.dofs.to_string(),
                    num(c.lambda_max),
                    num(c.t0),
                    num(c.t0 * ((p + 1) as f64).powi(2)),
                    c.converged.to_string(),
                ]);
                if !c.converged {
                    report.notes.push(format!("n={n} P={p}: power iteration did not converge; last estimate used"));
                }
                solved.push(c);
            }
            Err(e) => report.notes.push(format!("n={n} P={p}: {e}")),
        }
    }
    report.files.push(table.write(&config.out, "cfl.csv", &comment)?);
    let mut fits = CsvTable::new(&["P", "slope", "fit_residual", "points"]);
    for &p in &config.degrees {
        let per: Vec<&CflCase> = solved.iter().filter(|c| c.degree == p).collect();
        let hs: Vec<f64> = per.iter().map(|c| c.h).collect();
        let ts: Vec<f64> = per.iter().map(|c| c.t0).collect();
        if let Some(f) = loglog_fit(&hs, &ts) {
            fits.push(vec![p.to_string(), num(f.slope), num(f.residual), f.points.to_string()]);
            if f.points >= 3 && p >= 1 {
                report.checks.push(Check::within(format!("cfl slope t0 vs h P={p}"), f.slope, 0.75, 1.25));
            }
        }
    }
    report.files.push(fits.write(&config.out, "cfl_fits.csv", &comment)?);
    for n in config.mesh_sizes() {
        let per: Vec<&CflCase> = solved.iter().filter(|c| c.n == n && c.degree >= 1).collect();
        if per.len() >= 2 {
            let band = scaled_band(&per);
            report.checks.push(Check::at_most(format!("cfl t0 (P+1)^2 band n={n}"), band, 2.0));
        }
    }
    Ok(report)
}
