//! Bilinear maps from the unit square onto micro-cells, their metric data
//! and the grad / curl / div pushforwards.

use nalgebra::Matrix2;

use crate::{Error, Point, Result};

/// The four corners `v1..v4` of a micro-cell, counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeometry {
    pub vertices: [Point; 4],
}

/// Metric quantities of a cell map at one reference point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricSample {
    pub xi: f64,
    pub eta: f64,
    /// `det dF`.
    pub j: f64,
    /// Columns are `dF/dxi` and `dF/deta`.
    pub df: Matrix2<f64>,
    /// `dF^-1 J dF^-T`.
    pub g: Matrix2<f64>,
    /// `dF^T J^-1 dF`; the inverse of `g`.
    pub hm: Matrix2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pushforward {
    Grad,
    Curl,
    Div,
}

impl CellGeometry {
    pub fn new(vertices: [Point; 4]) -> Self {
        Self { vertices }
    }

    pub fn map(&self, xi: f64, eta: f64) -> Point {
        let [v1, v2, v3, v4] = self.vertices;
        v1 * ((1.0 - xi) * (1.0 - eta)) + v2 * (xi * (1.0 - eta)) + v3 * (xi * eta) + v4 * ((1.0 - xi) * eta)
    }

    pub fn jacobian_matrix(&self, xi: f64, eta: f64) -> Matrix2<f64> {
        let [v1, v2, v3, v4] = self.vertices;
        let col_xi = (v2 - v1) * (1.0 - eta) + (v3 - v4) * eta;
        let col_eta = (v4 - v1) * (1.0 - xi) + (v3 - v2) * xi;
        Matrix2::from_columns(&[col_xi, col_eta])
    }

    pub fn jacobian(&self, xi: f64, eta: f64) -> f64 {
        self.jacobian_matrix(xi, eta).determinant()
    }

    /// Longest diagonal, used to scale degeneracy tolerances.
    pub fn scale(&self) -> f64 {
        let [v1, v2, v3, v4] = self.vertices;
        (v3 - v1).norm().max((v4 - v2).norm())
    }

    pub fn area(&self) -> f64 {
        let v = &self.vertices;
        0.5 * (0..4).map(|k| v[k].perp(&v[(k + 1) % 4])).sum::<f64>()
    }

    pub fn metric(&self, xi: f64, eta: f64) -> Result<MetricSample> {
        let df = self.jacobian_matrix(xi, eta);
        let j = df.determinant();
        let s = self.scale();
        if !(s > 0.0 && j.abs() >= 1e-14 * s * s) {
            return Err(Error::SingularJacobian { jacobian: j, xi, eta });
        }
        // Closed-form 2x2 inverse keeps G and Hm exactly symmetric.
        let inv = Matrix2::new(df[(1, 1)], -df[(0, 1)], -df[(1, 0)], df[(0, 0)]) / j;
        let g = inv * inv.transpose() * j;
        let hm = df.transpose() * df / j;
        let sym = |m: Matrix2<f64>| {
            let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
            Matrix2::new(m[(0, 0)], off, off, m[(1, 1)])
        };
        Ok(MetricSample { xi, eta, j, df, g: sym(g), hm: sym(hm) })
    }

    /// Physical value of a pushed-forward reference field at `(xi, eta)`.
    /// For [`Pushforward::Grad`] only the first component is used.
    pub fn pushforward(&self, kind: Pushforward, xi: f64, eta: f64, value: [f64; 2]) -> Result<[f64; 2]> {
        let m = self.metric(xi, eta)?;
        Ok(m.push(kind, value))
    }

    /// Reference value of a physical field: the inverse of [`Self::pushforward`].
    pub fn pullback(&self, kind: Pushforward, xi: f64, eta: f64, value: [f64; 2]) -> Result<[f64; 2]> {
        let m = self.metric(xi, eta)?;
        Ok(m.pull(kind, value))
    }

    /// Reference coordinates of a physical point by Newton iteration.
    /// Returns `None` if the iteration does not converge.
    pub fn inverse_map(&self, p: Point) -> Option<(f64, f64)> {
        let (mut xi, mut eta) = (0.5, 0.5);
        let tol = 1e-12 * self.scale().max(1e-300);
        for _ in 0..25 {
            let r = self.map(xi, eta) - p;
            if r.norm() <= tol {
                return Some((xi, eta));
            }
            let df = self.jacobian_matrix(xi, eta);
            let step = df.lu().solve(&r)?;
            xi -= step.x;
            eta -= step.y;
        }
        (self.map(xi, eta) - p).norm().le(&tol).then_some((xi, eta))
    }

    pub fn contains_reference(xi: f64, eta: f64, slack: f64) -> bool {
        (-slack..=1.0 + slack).contains(&xi) && (-slack..=1.0 + slack).contains(&eta)
    }
}

impl MetricSample {
    pub fn push(&self, kind: Pushforward, v: [f64; 2]) -> [f64; 2] {
        let df = &self.df;
        match kind {
            Pushforward::Grad => [v[0], 0.0],
            Pushforward::Curl => {
                // dF^-T v
                let j = self.j;
                [
                    (df[(1, 1)] * v[0] - df[(1, 0)] * v[1]) / j,
                    (-df[(0, 1)] * v[0] + df[(0, 0)] * v[1]) / j,
                ]
            }
            Pushforward::Div => {
                let j = self.j;
                [
                    (df[(0, 0)] * v[0] + df[(0, 1)] * v[1]) / j,
                    (df[(1, 0)] * v[0] + df[(1, 1)] * v[1]) / j,
                ]
            }
        }
    }

    pub fn pull(&self, kind: Pushforward, v: [f64; 2]) -> [f64; 2] {
        let df = &self.df;
        match kind {
            Pushforward::Grad => [v[0], 0.0],
            // dF^T v
            Pushforward::Curl => [
                df[(0, 0)] * v[0] + df[(1, 0)] * v[1],
                df[(0, 1)] * v[0] + df[(1, 1)] * v[1],
            ],
            // J dF^-1 v
            Pushforward::Div => [
                df[(1, 1)] * v[0] - df[(0, 1)] * v[1],
                -df[(1, 0)] * v[0] + df[(0, 0)] * v[1],
            ],
        }
    }
}
