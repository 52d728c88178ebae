//! The discrete eigenvalue problem `K M_d^{-1} K^T h = lambda M_p h` and
//! its comparison with the Laplace spectrum of a square.
//!
//! Two solvers are provided. The dense route reduces the pencil with a
//! Cholesky factor of `M_p` and calls a symmetric eigensolver; it is exact
//! up to round-off and serves as the reference. The sparse route runs
//! shift-invert Lanczos in the `M_p` inner product for the smallest
//! eigenvalues of larger problems.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::assembly::BlockDiagonalMatrix;
use crate::dynamics::WaveSystem;
use crate::sparse::SparseOperator;
use crate::{Error, Result};

/// Default limit on the dense pencil dimension.
pub const DESK_CAP: usize = 20_000;

/// Dense generalized pencil `(S, M)`.
#[derive(Clone, Debug)]
pub struct Pencil {
    pub s: Mat<f64>,
    pub m: Mat<f64>,
    /// `max |S - S^T|` before symmetrization.
    pub asymmetry: f64,
}

impl Pencil {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }
}

/// Eigenvalues in ascending order with their residuals.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    /// `|S h - lambda M h| / |h|` per eigenpair.
    pub residuals: Vec<f64>,
    /// Number of primal DoFs.
    pub dofs: usize,
    /// Mesh size and degree, when known.
    pub h: Option<f64>,
    pub degree: Option<usize>,
}

/// Sparse stiffness `S = K M_d^{-1} K^T`.
pub fn stiffness(coupling: &SparseOperator, m_dual_inv: &BlockDiagonalMatrix) -> Result<SparseOperator> {
    let kt = coupling.transpose();
    coupling.matmul(&m_dual_inv.to_sparse())?.matmul(&kt)
}

fn densify(a: &SparseOperator) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(a.rows(), a.cols());
    for r in 0..a.rows() {
        for (c, v) in a.row(r) {
            m[(r, c)] = v;
        }
    }
    m
}

/// Dense pencil `(K M_d^{-1} K^T, M_p)` with `S` symmetrized.
pub fn assemble_pencil(
    coupling: &SparseOperator,
    m_dual_inv: &BlockDiagonalMatrix,
    m_primal: &BlockDiagonalMatrix,
    cap: usize,
) -> Result<Pencil> {
    let n = coupling.rows();
    if n > cap {
        return Err(Error::CapExceeded { size: n, cap });
    }
    if m_primal.dim() != n || m_dual_inv.dim() != coupling.cols() {
        return Err(Error::DimensionMismatch("pencil operands".into()));
    }
    let mut s = densify(&stiffness(coupling, m_dual_inv)?);
    let mut asymmetry = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (s[(i, j)], s[(j, i)]);
            asymmetry = asymmetry.max((a - b).abs());
            let avg = 0.5 * (a + b);
            s[(i, j)] = avg;
            s[(j, i)] = avg;
        }
    }
    Ok(Pencil { s, m: densify(&m_primal.to_sparse()), asymmetry })
}

fn residual(s: &Mat<f64>, m: &Mat<f64>, lambda: f64, x: &[f64]) -> f64 {
    let n = x.len();
    let mut r2 = 0.0;
    for i in 0..n {
        let mut v = 0.0;
        for j in 0..n {
            v += (s[(i, j)] - lambda * m[(i, j)]) * x[j];
        }
        r2 += v * v;
    }
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    r2.sqrt() / nx
}

/// The `k` smallest eigenvalues of the dense pencil by Cholesky reduction.
pub fn solve_generalized(s: &Mat<f64>, m: &Mat<f64>, k: usize) -> Result<SpectrumResult> {
    let n = s.nrows();
    if m.nrows() != n || s.ncols() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch("pencil must be square and matching".into()));
    }
    let llt = m.llt(Side::Lower).map_err(|_| Error::NotPositiveDefinite { block: 0 })?;
    let l = llt.L();
    // A = L^{-1} S L^{-T} = L^{-1} (L^{-1} S)^T for symmetric S.
    let mut x = s.clone();
    l.solve_lower_triangular_in_place(x.as_mut());
    let mut a = x.transpose().to_owned();
    l.solve_lower_triangular_in_place(a.as_mut());
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let evd = a.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let k = k.min(n);
    let mut u = evd.U().get(.., 0..k).to_owned();
    l.transpose().solve_upper_triangular_in_place(u.as_mut());
    let sdiag = evd.S();
    let eigenvalues: Vec<f64> = (0..k).map(|i| sdiag[i]).collect();
    let residuals = (0..k)
        .map(|i| {
            let v: Vec<f64> = (0..n).map(|r| u[(r, i)]).collect();
            residual(s, m, eigenvalues[i], &v)
        })
        .collect();
    Ok(SpectrumResult { eigenvalues, residuals, dofs: n, h: None, degree: None })
}

/// The `k` smallest eigenvalues of `(S, M)` with `M` block diagonal, by
/// shift-invert Lanczos with shift `-1` and full reorthogonalization.
pub fn solve_sparse_smallest(s: &SparseOperator, m: &BlockDiagonalMatrix, k: usize) -> Result<SpectrumResult> {
    let n = s.rows();
    if s.cols() != n || m.dim() != n {
        return Err(Error::DimensionMismatch("sparse pencil operands".into()));
    }
    if k == 0 || n == 0 {
        return Ok(SpectrumResult { eigenvalues: vec![], residuals: vec![], dofs: n, h: None, degree: None });
    }
    if k >= n {
        return Err(Error::InsufficientEigenvalues { needed: k, available: n });
    }
    let msp = m.to_sparse();
    let mut triplets = Vec::with_capacity(s.nnz() + msp.nnz());
    for a in [s, &msp] {
        for r in 0..n {
            for (c, v) in a.row(r) {
                if c <= r {
                    triplets.push(Triplet::new(c, r, v));
                }
            }
        }
    }
    // Upper triangle in column-major storage.
    let shifted = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let llt = shifted.as_ref().sp_cholesky(Side::Upper).map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    let apply = |x: &[f64]| -> Vec<f64> {
        let mx = m.mul_vec(x);
        let mut rhs = Mat::<f64>::from_fn(n, 1, |i, _| mx[i]);
        llt.solve_in_place(rhs.as_mut());
        (0..n).map(|i| rhs[(i, 0)]).collect()
    };
    let mdot = |a: &[f64], b: &[f64]| m.bilinear_form(a, b);

    let mut steps = (2 * k + 30).min(n);
    loop {
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut alpha = Vec::with_capacity(steps);
        let mut beta: Vec<f64> = Vec::with_capacity(steps);
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 97) as f64 / 97.0).collect();
        let nv = mdot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        let mut breakdown = false;
        for j in 0..steps {
            q.push(v.clone());
            let mut w = apply(&v);
            let a = mdot(&w, &v);
            alpha.push(a);
            // Two passes of Gram-Schmidt against all previous vectors.
            for _ in 0..2 {
                for qi in &q {
                    let c = mdot(&w, qi);
                    w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = mdot(&w, &w).sqrt();
            if j + 1 == steps {
                beta.push(b);
                break;
            }
            if b < 1e-13 * a.abs().max(1e-300) {
                breakdown = true;
                beta.push(0.0);
                break;
            }
            beta.push(b);
            v = w.into_iter().map(|x| x / b).collect();
        }
        let mm = alpha.len();
        let t = Mat::<f64>::from_fn(mm, mm, |i, j| {
            if i == j {
                alpha[i]
            } else if i == j + 1 {
                beta[j]
            } else if j == i + 1 {
                beta[i]
            } else {
                0.0
            }
        });
        let evd = t.self_adjoint_eigen(Side::Lower).map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let theta = evd.S();
        let y = evd.U();
        // Largest theta = 1 / (lambda + 1) gives the smallest lambda.
        let take = k.min(mm);
        let last_beta = *beta.last().unwrap_or(&0.0);
        let mut pairs = Vec::with_capacity(take);
        let mut converged = true;
        for r in 0..take {
            let col = mm - 1 - r;
            let th = theta[col];
            let est = (last_beta * y[(mm - 1, col)]).abs();
            if !breakdown && est > 1e-10 * th.abs() {
                converged = false;
            }
            pairs.push((th, col));
        }
        if converged || steps >= n || mm < steps {
            if pairs.len() < k {
                return Err(Error::InsufficientEigenvalues { needed: k, available: pairs.len() });
            }
            let mut eigenvalues = Vec::with_capacity(k);
            let mut residuals = Vec::with_capacity(k);
            for &(th, col) in &pairs {
                let lambda = 1.0 / th - 1.0;
                let mut x = vec![0.0; n];
                for (j, qj) in q.iter().enumerate() {
                    let c = y[(j, col)];
                    x.iter_mut().zip(qj).for_each(|(a, b)| *a += c * b);
                }
                let sx = s.mul_vec(&x);
                let mx = m.mul_vec(&x);
                let r = sx.iter().zip(&mx).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
                let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                eigenvalues.push(lambda);
                residuals.push(r / nx);
            }
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| eigenvalues[a].total_cmp(&eigenvalues[b]));
            return Ok(SpectrumResult {
                eigenvalues: order.iter().map(|&i| eigenvalues[i]).collect(),
                residuals: order.iter().map(|&i| residuals[i]).collect(),
                dofs: n,
                h: None,
                degree: None,
            });
        }
        steps = (2 * steps).min(n);
    }
}

/// Solver selection for [`system_spectrum`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EigenMethod {
    Dense,
    ShiftInvertLanczos,
    /// Dense up to `dense_limit` primal DoFs, Lanczos beyond.
    Auto { dense_limit: usize },
}

/// The `k` smallest eigenvalues of a system's pencil.
pub fn system_spectrum(system: &WaveSystem, k: usize, method: EigenMethod) -> Result<SpectrumResult> {
    let n = system.primal_space().total_dofs();
    let dense = match method {
        EigenMethod::Dense => true,
        EigenMethod::ShiftInvertLanczos => false,
        EigenMethod::Auto { dense_limit } => n <= dense_limit,
    };
    let mut r = if dense {
        let p = assemble_pencil(system.coupling(), system.dual_mass_inverse(), system.primal_mass(), DESK_CAP)?;
        solve_generalized(&p.s, &p.m, k)?
    } else {
        let s = stiffness(system.coupling(), system.dual_mass_inverse())?;
        solve_sparse_smallest(&s, system.primal_mass(), k)?
    };
    r.h = Some(system.mesh().h());
    r.degree = Some(system.degree());
    Ok(r)
}

/// Laplace eigenvalues `(pi / side)^2 (n^2 + k^2)` of a square, ascending
/// with multiplicity. Dirichlet data uses `n, k >= 1`; Neumann data uses
/// `n, k >= 0` without the constant mode.
pub fn laplace_targets(side: f64, count: usize, dirichlet: bool) -> Vec<f64> {
    let lo = usize::from(dirichlet);
    let hi = count + 2;
    let mut v: Vec<usize> = (lo..=hi)
        .flat_map(|a| (lo..=hi).map(move |b| a * a + b * b))
        .filter(|&s| s > 0)
        .collect();
    v.sort_unstable();
    let scale = (std::f64::consts::PI / side).powi(2);
    v.into_iter().take(count).map(|s| s as f64 * scale).collect()
}

/// Outcome of matching computed eigenvalues to targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumMatch {
    /// Matched discrete eigenvalue per target.
    pub matched: Vec<f64>,
    /// `|lambda_h - lambda| / lambda` per target.
    pub rel_errors: Vec<f64>,
    /// Discrete eigenvalues dropped as near-zero modes.
    pub dropped: usize,
}

/// Pairs ascending eigenvalues with ascending targets after dropping modes
/// below `1e-6` times the first target.
pub fn match_spectrum(eigenvalues: &[f64], targets: &[f64]) -> Result<SpectrumMatch> {
    let first = targets.first().copied().unwrap_or(0.0);
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = 1e-6 * first;
    let dropped = sorted.iter().take_while(|&&l| l < threshold).count();
    let rest = &sorted[dropped..];
    if rest.len() < targets.len() {
        return Err(Error::InsufficientEigenvalues { needed: targets.len(), available: rest.len() });
    }
    let matched: Vec<f64> = rest[..targets.len()].to_vec();
    let rel_errors = matched.iter().zip(targets).map(|(l, t)| (l - t).abs() / t).collect();
    Ok(SpectrumMatch { matched, rel_errors, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::BoundaryMode;
    use crate::dynamics::SystemKind;
    use crate::mesh::{generate_structured_square, MicroCellMesh, Triangulation};
    use crate::Point;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn mesh(n: usize, side: f64) -> Arc<MicroCellMesh> {
        Arc::new(MicroCellMesh::from_triangulation(&generate_structured_square(n, side).unwrap()).unwrap())
    }

    #[test]
    fn trivial_pencils() {
        let id = Mat::<f64>::identity(3, 3);
        let r = solve_generalized(&id, &id, 3).unwrap();
        assert!(r.eigenvalues.iter().all(|l| (l - 1.0).abs() < 1e-14));
        let d = Mat::<f64>::from_fn(2, 2, |i, j| if i == j { [1.0, 4.0][i] } else { 0.0 });
        let r = solve_generalized(&d, &Mat::identity(2, 2), 2).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-14 && (r.eigenvalues[1] - 4.0).abs() < 1e-14);
        let z = SparseOperator::zeros(2, 3);
        let p = assemble_pencil(&z, &BlockDiagonalMatrix::diagonal(&[1.0; 3]), &BlockDiagonalMatrix::diagonal(&[2.0; 2]), 10)
            .unwrap();
        let r = solve_generalized(&p.s, &p.m, 2).unwrap();
        assert!(r.eigenvalues.iter().all(|&l| l == 0.0));
        assert!(matches!(
            assemble_pencil(&z, &BlockDiagonalMatrix::diagonal(&[1.0; 3]), &BlockDiagonalMatrix::diagonal(&[2.0; 2]), 1),
            Err(Error::CapExceeded { .. })
        ));
        let neg = Mat::<f64>::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
        assert!(solve_generalized(&id.get(0..2, 0..2).to_owned(), &neg, 2).is_err());
    }

    #[test]
    fn two_triangle_lowest_order_by_hand() {
        // P = 0 on the split unit square, magnetic wall: one h per triangle,
        // one e per half-edge, and every curl entry is +-1.
        let t = Triangulation::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![],
        )
        .unwrap();
        let m = Arc::new(MicroCellMesh::from_triangulation(&t).unwrap());
        let sys = crate::dynamics::WaveSystem::unit(SystemKind::Maxwell, m, 0, BoundaryMode::MagneticWall).unwrap();
        let c = sys.coupling();
        let minv = sys.dual_mass_inverse();
        let minv_full = minv.to_sparse();
        let mut expected = [[0.0; 2]; 2];
        for r in 0..2 {
            for s in 0..2 {
                for k in 0..c.cols() {
                    for l in 0..c.cols() {
                        expected[r][s] += c.get(r, k) * minv_full.get(k, l) * c.get(s, l);
                    }
                }
            }
        }
        for r in 0..2 {
            for k in 0..c.cols() {
                let v = c.get(r, k);
                assert!(v == 0.0 || (v.abs() - 1.0).abs() < 1e-14, "{v}");
            }
        }
        let p = assemble_pencil(c, minv, sys.primal_mass(), 10).unwrap();
        for r in 0..2 {
            for s in 0..2 {
                assert!((p.s[(r, s)] - expected[r][s]).abs() < 1e-14);
            }
        }
        assert!(p.asymmetry <= 1e-12 * p.s.norm_max());
    }

    #[test]
    fn dirichlet_spectrum_on_square() {
        let sys = crate::dynamics::WaveSystem::unit(SystemKind::Maxwell, mesh(8, PI), 2, BoundaryMode::MagneticWall)
            .unwrap();
        let r = system_spectrum(&sys, 12, EigenMethod::Dense).unwrap();
        let targets = laplace_targets(PI, 10, true);
        assert_eq!(&targets[..6], &[2.0, 5.0, 5.0, 8.0, 10.0, 10.0]);
        let m = match_spectrum(&r.eigenvalues, &targets).unwrap();
        assert_eq!(m.dropped, 0);
        assert!(m.rel_errors.iter().all(|&e| e < 1e-2), "{:?}", m.rel_errors);
        assert!(r.residuals.iter().all(|&x| x < 1e-8));
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        for bc in [BoundaryMode::MagneticWall, BoundaryMode::ElectricWall] {
            let sys = crate::dynamics::WaveSystem::unit(SystemKind::Maxwell, mesh(4, PI), 2, bc).unwrap();
            let d = system_spectrum(&sys, 10, EigenMethod::Dense).unwrap();
            let l = system_spectrum(&sys, 10, EigenMethod::ShiftInvertLanczos).unwrap();
            for (a, b) in d.eigenvalues.iter().zip(&l.eigenvalues) {
                assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{a} vs {b}");
            }
            assert!(l.residuals.iter().all(|&x| x < 1e-8), "{:?}", l.residuals);
        }
    }

    #[test]
    fn matching_rules() {
        let m = match_spectrum(&[2.0, 5.0, 5.0], &[2.0, 5.0, 5.0]).unwrap();
        assert!(m.rel_errors.iter().all(|&e| e == 0.0));
        let m = match_spectrum(&[1e-9, 0.0, 2.2, 4.0], &[2.0, 5.0]).unwrap();
        assert_eq!(m.dropped, 2);
        assert!((m.rel_errors[0] - 0.1).abs() < 1e-12);
        assert!(matches!(match_spectrum(&[2.0], &[2.0, 5.0]), Err(Error::InsufficientEigenvalues { .. })));
        assert_eq!(laplace_targets(PI, 4, false), vec![1.0, 1.0, 2.0, 4.0]);
    }
}
