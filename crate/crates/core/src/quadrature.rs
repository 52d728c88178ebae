//! One-dimensional quadrature rules on `[0, 1]` and nodal Lagrange bases.
//!
//! The primal Legendre-Gauss-Radau family fixes the right endpoint
//! (`nodes[P] == 1`), the dual family is its reflection `x -> 1 - x` and
//! fixes the left endpoint. Both integrate polynomials of degree `2P`
//! exactly with `P + 1` points. Gauss-Legendre rules are used for exact
//! integration of operator entries and error norms.

use faer::{Mat, Side};

use crate::{Error, Result};

/// Largest polynomial degree for which node families are computed.
pub const MAX_DEGREE: usize = 64;

/// Largest Gauss-Legendre point count.
pub const MAX_GAUSS_POINTS: usize = MAX_DEGREE + 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Radau points with the fixed node at `1`.
    PrimalLgr,
    /// Reflected Radau points with the fixed node at `0`.
    DualLgr,
    Gauss,
}

/// Quadrature nodes and positive weights on `[0, 1]`, nodes ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFamily {
    kind: NodeKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl NodeFamily {
    pub fn kind(&self) -> NodeKind {
        self.kind
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Polynomial degree of the nodal basis carried by this family.
    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Highest monomial degree integrated exactly.
    pub fn exactness(&self) -> usize {
        match self.kind {
            NodeKind::PrimalLgr | NodeKind::DualLgr => 2 * self.degree(),
            NodeKind::Gauss => 2 * self.len() - 1,
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Tensorized rule on the unit square.
    pub fn integrate_2d(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut sum = 0.0;
        for (&y, &wy) in self.nodes.iter().zip(&self.weights) {
            for (&x, &wx) in self.nodes.iter().zip(&self.weights) {
                sum += wx * wy * f(x, y);
            }
        }
        sum
    }
}

/// Legendre polynomial `P_n` and its derivative on `[-1, 1]`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut d_prev, mut d) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let d_next = d_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
    }
    (p, d)
}

/// Off-diagonal of the orthonormal Legendre Jacobi matrix.
fn legendre_offdiag(k: usize) -> f64 {
    let k = k as f64;
    k / (4.0 * k * k - 1.0).sqrt()
}

fn tridiagonal_eigenvalues(diag: &[f64], offdiag: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let m = Mat::<f64>::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            offdiag[i]
        } else if j + 1 == i {
            offdiag[j]
        } else {
            0.0
        }
    });
    let mut ev = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn newton_polish(mut x: f64, f: impl Fn(f64) -> (f64, f64)) -> f64 {
    for _ in 0..5 {
        let (v, d) = f(x);
        if d == 0.0 {
            break;
        }
        let dx = v / d;
        x -= dx;
        if dx.abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            break;
        }
    }
    x
}

/// Primal Legendre-Gauss-Radau rule of degree `degree` on `[0, 1]`:
/// `degree + 1` points, last node exactly `1`, exact up to degree `2 * degree`.
pub fn lgr_rule(degree: usize) -> Result<NodeFamily> {
    if degree > MAX_DEGREE {
        return Err(Error::DegreeTooHigh { degree, max: MAX_DEGREE });
    }
    let n = degree + 1;
    // Golub's Radau modification of the Legendre Jacobi matrix with the
    // prescribed node a = +1 on [-1, 1].
    let a = 1.0;
    let offdiag: Vec<f64> = (1..n).map(legendre_offdiag).collect();
    let mut diag = vec![0.0; n];
    if n > 1 {
        // Solve (J_{n-1} - a I) delta = b_{n-1}^2 e_{n-1} with the Thomas algorithm.
        let m = n - 1;
        let rhs_last = offdiag[m - 1] * offdiag[m - 1];
        let mut c = vec![0.0; m];
        let mut d = vec![0.0; m];
        for i in 0..m {
            let sub = if i > 0 { offdiag[i - 1] } else { 0.0 };
            let sup = if i + 1 < m { offdiag[i] } else { 0.0 };
            let rhs = if i + 1 == m { rhs_last } else { 0.0 };
            let denom = -a - sub * if i > 0 { c[i - 1] } else { 0.0 };
            c[i] = sup / denom;
            d[i] = (rhs - sub * if i > 0 { d[i - 1] } else { 0.0 }) / denom;
        }
        let mut delta = vec![0.0; m];
        for i in (0..m).rev() {
            delta[i] = d[i] - if i + 1 < m { c[i] * delta[i + 1] } else { 0.0 };
        }
        diag[n - 1] = a + delta[m - 1];
    } else {
        diag[0] = a;
    }
    let raw = tridiagonal_eigenvalues(&diag, &offdiag)?;

    // Interior nodes are roots of P_n - P_{n-1}; the last one is pinned at +1.
    let radau = |x: f64| {
        let (pn, dn) = legendre(n, x);
        let (pm, dm) = legendre(n - 1, x);
        (pn - pm, dn - dm)
    };
    let nf = n as f64;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &x0 in raw.iter().take(n - 1) {
        let x = newton_polish(x0.clamp(-1.0, 1.0), radau);
        let (pm, _) = legendre(n - 1, x);
        let w = (1.0 + x) / (nf * nf * pm * pm);
        nodes.push(0.5 * (x + 1.0));
        weights.push(0.5 * w);
    }
    nodes.push(1.0);
    weights.push(1.0 / (nf * nf));
    Ok(NodeFamily { kind: NodeKind::PrimalLgr, nodes, weights })
}

/// Reflects a Radau family through `x -> 1 - x`: primal becomes dual and
/// dual becomes primal. Node and weight order is reversed so nodes stay
/// ascending.
pub fn dual_rule(family: &NodeFamily) -> Result<NodeFamily> {
    let kind = match family.kind {
        NodeKind::PrimalLgr => NodeKind::DualLgr,
        NodeKind::DualLgr => NodeKind::PrimalLgr,
        NodeKind::Gauss => {
            return Err(Error::InvalidArgument("only Radau families can be reflected".into()))
        }
    };
    let nodes = family.nodes.iter().rev().map(|&x| 1.0 - x).collect();
    let weights = family.weights.iter().rev().copied().collect();
    Ok(NodeFamily { kind, nodes, weights })
}

/// Dual Radau family of the given degree (first node exactly `0`).
pub fn dual_lgr_rule(degree: usize) -> Result<NodeFamily> {
    dual_rule(&lgr_rule(degree)?)
}

/// Gauss-Legendre rule with `points` nodes on `[0, 1]`.
pub fn gauss_rule(points: usize) -> Result<NodeFamily> {
    if points == 0 {
        return Err(Error::InvalidArgument("a Gauss rule needs at least one point".into()));
    }
    if points > MAX_GAUSS_POINTS {
        return Err(Error::DegreeTooHigh { degree: points, max: MAX_GAUSS_POINTS });
    }
    let offdiag: Vec<f64> = (1..points).map(legendre_offdiag).collect();
    let raw = tridiagonal_eigenvalues(&vec![0.0; points], &offdiag)?;
    let mut nodes = Vec::with_capacity(points);
    let mut weights = Vec::with_capacity(points);
    for x0 in raw {
        let x = newton_polish(x0, |x| legendre(points, x));
        let (_, d) = legendre(points, x);
        nodes.push(0.5 * (x + 1.0));
        weights.push(1.0 / ((1.0 - x * x) * d * d));
    }
    Ok(NodeFamily { kind: NodeKind::Gauss, nodes, weights })
}

/// Nodal Lagrange basis on an arbitrary set of distinct nodes, evaluated in
/// the second (true) barycentric form.
#[derive(Clone, Debug)]
pub struct LagrangeBasis {
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl LagrangeBasis {
    pub fn new(nodes: &[f64]) -> Self {
        let bary = nodes
            .iter()
            .enumerate()
            .map(|(i, &xi)| {
                let prod: f64 = nodes
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &xj)| xi - xj)
                    .product();
                1.0 / prod
            })
            .collect();
        Self { nodes: nodes.to_vec(), bary }
    }

    pub fn from_family(family: &NodeFamily) -> Self {
        Self::new(family.nodes())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn barycentric_weights(&self) -> &[f64] {
        &self.bary
    }

    fn node_index(&self, x: f64) -> Option<usize> {
        self.nodes.iter().position(|&xn| (x - xn).abs() <= 1e-15)
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        Ok(())
    }

    /// Value of the `i`-th nodal polynomial at `x`.
    pub fn eval(&self, i: usize, x: f64) -> Result<f64> {
        self.check(i)?;
        let mut out = vec![0.0; self.len()];
        self.values(x, &mut out);
        Ok(out[i])
    }

    /// Derivative of the `i`-th nodal polynomial at `x`.
    pub fn deriv(&self, i: usize, x: f64) -> Result<f64> {
        self.check(i)?;
        let mut out = vec![0.0; self.len()];
        self.derivatives(x, &mut out);
        Ok(out[i])
    }

    /// All basis values at `x`; `out.len()` must equal the node count.
    pub fn values(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        if let Some(k) = self.node_index(x) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[k] = 1.0;
            return;
        }
        let mut sum = 0.0;
        for ((o, &xn), &b) in out.iter_mut().zip(&self.nodes).zip(&self.bary) {
            *o = b / (x - xn);
            sum += *o;
        }
        out.iter_mut().for_each(|v| *v /= sum);
    }

    /// All basis derivatives at `x`.
    pub fn derivatives(&self, x: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len());
        let n = self.len();
        if let Some(k) = self.node_index(x) {
            // Row k of the barycentric differentiation matrix.
            let mut diag = 0.0;
            for i in 0..n {
                if i != k {
                    out[i] = (self.bary[i] / self.bary[k]) / (self.nodes[k] - self.nodes[i]);
                    diag -= out[i];
                }
            }
            out[k] = diag;
            return;
        }
        self.values(x, out);
        let inv: Vec<f64> = self.nodes.iter().map(|&xn| 1.0 / (x - xn)).collect();
        let total: f64 = inv.iter().sum();
        for i in 0..n {
            out[i] *= total - inv[i];
        }
    }

    /// Values of all basis functions at each of `points`, row per point.
    pub fn value_table(&self, points: &[f64]) -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|&x| {
                let mut row = vec![0.0; self.len()];
                self.values(x, &mut row);
                row
            })
            .collect()
    }

    /// Derivatives of all basis functions at each of `points`, row per point.
    pub fn derivative_table(&self, points: &[f64]) -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|&x| {
                let mut row = vec![0.0; self.len()];
                self.derivatives(x, &mut row);
                row
            })
            .collect()
    }
}
