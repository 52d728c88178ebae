//! Mass-lumped high-order dual cell method for the 2D Maxwell (TM) and
//! acoustic wave equations.
//!
//! The discretization lives on three nested meshes: a primal
//! triangulation, its barycentric dual and the quadrilateral micro-cell
//! mesh obtained by intersecting the two. Fields are expanded in nodal
//! tensor-product Lagrange bases built on Legendre-Gauss-Radau points, so
//! the lumped mass matrices are block diagonal with block sizes that do
//! not depend on the polynomial degree.
//!
//! Module map:
//! - [`mesh`]: primal, dual and micro-cell meshes.
//! - [`quadrature`]: LGR and Gauss rules, barycentric Lagrange bases.
//! - [`reference_map`]: bilinear cell maps, metric tensors, pushforwards.
//! - [`spaces`]: DoF enumeration, interpolation and field evaluation.
//! - [`sparse`]: compressed-row operators.
//! - [`assembly`]: mass matrices and the discrete curl / grad operators.
//! - [`dynamics`]: leapfrog time stepping, CFL estimation, energy.
//! - [`spectra`]: the discrete eigenvalue problem.

pub mod assembly;
pub mod dynamics;
pub mod error;
pub mod mesh;
pub mod quadrature;
pub mod reference_map;
pub mod spaces;
pub mod sparse;
pub mod spectra;

pub use error::{Error, Result};

/// A point or vector in the plane.
pub type Point = nalgebra::Vector2<f64>;
