//! Discrete eigenvalue convergence on a square.

use dualcell::assembly::BoundaryMode;
use dualcell::spectra::{laplace_targets, match_spectrum, system_spectrum, EigenMethod, SpectrumMatch};

use crate::config::{bc_name, ExperimentConfig};
use crate::fit::loglog_fit;
use crate::output::{num, Check, CsvTable, Report};
use crate::{build_mesh, map_cases, ExperimentError, Result};

/// Primal DoF count above which the sparse eigensolver is used.
pub const DENSE_LIMIT: usize = 4000;

/// Analytic values whose convergence is tracked, in units of `(pi/side)^2`.
pub const TRACKED: [f64; 2] = [2.0, 73.0];

/// Cutoff for the spurious-mode scan, in units of `(pi/side)^2`.
pub const SPURIOUS_SCAN_MAX: f64 = 40.0;

/// One solved `(n, P)` case.
#[derive(Clone, Debug)]
pub struct EvpCase {
    pub n: usize,
    pub degree: usize,
    pub h: f64,
    pub dofs: usize,
    pub eigenvalues: Vec<f64>,
    pub max_residual: f64,
    pub targets: Vec<f64>,
    pub matching: SpectrumMatch,
}

impl EvpCase {
    /// Relative error of the first matched copy of `value`.
    pub fn error_for(&self, value: f64) -> Option<f64> {
        let i = self.targets.iter().position(|t| (t - value).abs() <= 1e-9 * value)?;
        Some(self.matching.rel_errors[i])
    }
}

/// Targets for a boundary mode: the sine (Dirichlet) spectrum when the
/// boundary faces sit on the primal side, the cosine (Neumann) one
/// otherwise.
pub fn targets_for(bc: BoundaryMode, side: f64, count: usize) -> Vec<f64> {
    laplace_targets(side, count, bc == BoundaryMode::MagneticWall)
}

pub fn solve_case(config: &ExperimentConfig, n: usize, degree: usize) -> Result<EvpCase> {
    let side = config
        .side()
        .ok_or_else(|| ExperimentError::Usage("eigenvalue targets need a structured square".into()))?;
    let mesh = build_mesh(&config.mesh, n)?;
    let sys = crate::td::make_system(config, mesh, degree)?;
    let targets = targets_for(config.bc, side, config.eigen_count);
    // One extra for the constant mode of the cosine spectrum.
    let want = (config.eigen_count + 1).min(sys.primal_space().total_dofs().saturating_sub(1));
    let spec = system_spectrum(&sys, want, EigenMethod::Auto { dense_limit: DENSE_LIMIT })?;
    let matching = match_spectrum(&spec.eigenvalues, &targets)?;
    Ok(EvpCase {
        n,
        degree,
        h: sys.mesh().h(),
        dofs: sys.primal_space().total_dofs(),
        max_residual: spec.residuals.iter().fold(0.0, |a: f64, &b| a.max(b)),
        eigenvalues: spec.eigenvalues,
        targets,
        matching,
    })
}

/// Largest matching error over targets up to `max`.
fn max_error_below(case: &EvpCase, max: f64) -> f64 {
    case.targets
        .iter()
        .zip(&case.matching.rel_errors)
        .filter(|(t, _)| **t <= max)
        .fold(0.0, |a, (_, e)| a.max(*e))
}

/// Discrete eigenvalues up to `max` (after near-zero removal) farther than
/// `tol` from every target, and the count mismatch below `max`: positive
/// when there are more discrete values up to `max` than targets up to
/// `max (1 + tol)`, negative when fewer discrete values up to
/// `max (1 + tol)` than targets up to `max`, zero otherwise.
pub fn spurious_modes(case: &EvpCase, max: f64, tol: f64) -> (Vec<f64>, i64) {
    let kept = &case.eigenvalues[case.matching.dropped..];
    let below = |v: &[f64], cap: f64| v.iter().filter(|&&l| l <= cap).count() as i64;
    let wide = max * (1.0 + tol);
    let excess = below(kept, max) - below(&case.targets, wide);
    let missing = below(&case.targets, max) - below(kept, wide);
    let orphans = kept
        .iter()
        .copied()
        .filter(|&l| l <= max && case.targets.iter().all(|t| (l - t).abs() / t > tol))
        .collect();
    (orphans, if excess > 0 { excess } else if missing > 0 { -missing } else { 0 })
}

pub fn run(config: &ExperimentConfig) -> Result<Report> {
    let side = config
        .side()
        .ok_or_else(|| ExperimentError::Usage("eigenvalue targets need a structured square".into()))?;
    let scale = (std::f64::consts::PI / side).powi(2);
    let cases: Vec<(usize, usize)> =
        config.degrees.iter().flat_map(|&p| config.mesh_sizes().into_iter().map(move |n| (n, p))).collect();
    let results = map_cases(config.parallel, &cases, |&(n, p)| solve_case(config, n, p));
    let comment = format!("config: {config}");
    let mut report = Report::default();
    let mut spectrum = CsvTable::new(&["h", "P", "bc", "index", "lambda", "target", "rel_error"]);
    let mut conv = CsvTable::new(&["P", "n", "h", "dofs", "target", "lambda", "rel_error", "max_residual"]);
    let mut solved: Vec<EvpCase> = Vec::new();
    for (&(n, p), r) in cases.iter().zip(results) {
        match r {
            Ok(c) => {
                for (i, (t, e)) in c.targets.iter().zip(&c.matching.rel_errors).enumerate() {
                    spectrum.push(vec![
                        num(c.h),
                        p.to_string(),
                        bc_name(config.bc).into(),
                        i.to_string(),
                        num(c.matching.matched[i]),
                        num(*t),
                        num(*e),
                    ]);
                }
                for v in TRACKED {
                    if let Some(e) = c.error_for(v * scale) {
                        let i = c.targets.iter().position(|t| (t - v * scale).abs() <= 1e-9 * v * scale).unwrap();
                        conv.push(vec![
                            p.to_string(),
                            n.to_string(),
                            num(c.h),
                            c.dofs.to_string(),
                            num(v * scale),
                            num(c.matching.matched[i]),
                            num(e),
                            num(c.max_residual),
                        ]);
                    }
                }
                report.notes.push(format!(
                    "n={n} P={p}: {} dofs, dropped {} near-zero modes, max residual {:.2e}",
                    c.dofs, c.matching.dropped, c.max_residual
                ));
                solved.push(c);
            }
            Err(e) => report.notes.push(format!("n={n} P={p}: {e}")),
        }
    }
    report.files.push(spectrum.write(&config.out, "evp_spectrum.csv", &comment)?);

    let mut rates = CsvTable::new(&["P", "target", "rate", "fit_residual", "points"]);
    for &p in &config.degrees {
        let mut per: Vec<&EvpCase> = solved.iter().filter(|c| c.degree == p).collect();
        per.sort_by(|a, b| b.h.total_cmp(&a.h));
        for v in TRACKED {
            let pts: Vec<(f64, f64)> = per.iter().filter_map(|c| c.error_for(v * scale).map(|e| (c.h, e))).collect();
            let (hs, es): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            if let Some(f) = loglog_fit(&hs, &es) {
                rates.push(vec![p.to_string(), num(v * scale), num(f.slope), num(f.residual), f.points.to_string()]);
                if v == 73.0 && f.points >= 3 {
                    let band = if p == 0 { 1.6 } else { 0.8 * 2.0 * p as f64 };
                    report.checks.push(Check::at_least(format!("evp rate lambda_8,3 P={p}"), f.slope, band));
                }
            }
        }
        if p == 2 {
            if let Some(c) = per.iter().find(|c| c.n == 16) {
                if let Some(e) = c.error_for(2.0 * scale) {
                    report.checks.push(Check::below("evp lambda_1,1 rel error n=16 P=2", e, 1e-3));
                }
            }
        }
        if per.len() >= 3 && p >= 1 {
            let finest = per.last().unwrap();
            let tol = 10.0 * max_error_below(finest, SPURIOUS_SCAN_MAX * scale);
            let (orphans, excess) = spurious_modes(finest, SPURIOUS_SCAN_MAX * scale, tol);
            report.checks.push(Check::flag(
                format!("evp no spurious modes <= {} P={p} (orphans {}, count mismatch {excess})", SPURIOUS_SCAN_MAX, orphans.len()),
                orphans.is_empty() && excess == 0,
            ));
        }
        for c in &per {
            report.checks.push(Check::below(format!("evp residual n={} P={p}", c.n), c.max_residual, 1e-8));
        }
    }
    report.files.push(conv.write(&config.out, "evp_convergence.csv", &comment)?);
    report.files.push(rates.write(&config.out, "evp_rates.csv", &comment)?);
    Ok(report)
}
