//! Discrete nodal spaces on dual cells and primal triangles.
//!
//! Every space is a tensor-product Lagrange space on each micro-cell,
//! glued inside one macro element (a dual cell or a primal triangle) and
//! broken across macro-element boundaries. Spaces on dual cells use the
//! dual Radau family (first node `0`, at the primal vertex); spaces on
//! primal triangles use the primal family (last node `1`, at the
//! centroid).
//!
//! Local nodal functions are indexed `(j (P + 1) + i) ncomp + comp` with `i`
//! the `xi` index and `j` the `eta` index. Each maps to exactly one global
//! DoF with a sign.

use std::io::Write;
use std::sync::Arc;

use crate::mesh::{EdgeClass, LocalEdge, MicroCellMesh};
use crate::quadrature::{dual_lgr_rule, gauss_rule, lgr_rule, LagrangeBasis, NodeFamily};
use crate::reference_map::Pushforward;
use crate::{Error, Point, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    Grad,
    Curl,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Grid {
    Primal,
    Dual,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SpaceSpec {
    pub kind: SpaceKind,
    pub grid: Grid,
    pub degree: usize,
}

impl SpaceSpec {
    pub fn new(kind: SpaceKind, grid: Grid, degree: usize) -> Self {
        Self { kind, grid, degree }
    }

    /// Scalar nodal space on primal triangles; also carries the scalar
    /// magnetic field and the pressure.
    pub fn primal_grad(degree: usize) -> Self {
        Self::new(SpaceKind::Grad, Grid::Primal, degree)
    }

    pub fn dual_grad(degree: usize) -> Self {
        Self::new(SpaceKind::Grad, Grid::Dual, degree)
    }

    pub fn dual_curl(degree: usize) -> Self {
        Self::new(SpaceKind::Curl, Grid::Dual, degree)
    }

    pub fn dual_div(degree: usize) -> Self {
        Self::new(SpaceKind::Div, Grid::Dual, degree)
    }

    pub fn components(&self) -> usize {
        match self.kind {
            SpaceKind::Grad => 1,
            SpaceKind::Curl | SpaceKind::Div => 2,
        }
    }

    pub fn pushforward(&self) -> Pushforward {
        match self.kind {
            SpaceKind::Grad => Pushforward::Grad,
            SpaceKind::Curl => Pushforward::Curl,
            SpaceKind::Div => Pushforward::Div,
        }
    }

    /// Node family carrying the nodal basis of this space.
    pub fn family(&self) -> Result<NodeFamily> {
        match self.grid {
            Grid::Primal => lgr_rule(self.degree),
            Grid::Dual => dual_lgr_rule(self.degree),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofClass {
    Vertex,
    Edge,
    Face,
}

/// One local nodal function and the global DoF it belongs to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalDof {
    pub global: usize,
    pub sign: f64,
}

/// Global DoF enumeration of one discrete space.
#[derive(Clone, Debug)]
pub struct DofMap {
    spec: SpaceSpec,
    mesh: Arc<MicroCellMesh>,
    family: NodeFamily,
    basis: LagrangeBasis,
    total: usize,
    local_len: usize,
    table: Vec<LocalDof>,
    classes: Vec<DofClass>,
    /// One `(cell, local index)` per global DoF.
    owners: Vec<(usize, usize)>,
    /// Macro element (dual cell or triangle) of each global DoF.
    macros: Vec<usize>,
}

struct Builder {
    ncomp: usize,
    n1: usize,
    local_len: usize,
    table: Vec<Option<LocalDof>>,
    classes: Vec<DofClass>,
    owners: Vec<(usize, usize)>,
    macros: Vec<usize>,
}

impl Builder {
    fn new(ncells: usize, n1: usize, ncomp: usize) -> Self {
        let local_len = n1 * n1 * ncomp;
        Self {
            ncomp,
            n1,
            local_len,
            table: vec![None; ncells * local_len],
            classes: Vec::new(),
            owners: Vec::new(),
            macros: Vec::new(),
        }
    }

    fn local(&self, i: usize, j: usize, comp: usize) -> usize {
        (j * self.n1 + i) * self.ncomp + comp
    }

    fn open(&mut self, class: DofClass, macro_element: usize) -> usize {
        self.classes.push(class);
        self.macros.push(macro_element);
        self.owners.push((usize::MAX, usize::MAX));
        self.classes.len() - 1
    }

    fn attach(&mut self, g: usize, cell: usize, i: usize, j: usize, comp: usize) {
        let l = self.local(i, j, comp);
        let slot = &mut self.table[cell * self.local_len + l];
        debug_assert!(slot.is_none(), "local function assigned twice");
        *slot = Some(LocalDof { global: g, sign: 1.0 });
        if self.owners[g].0 == usize::MAX {
            self.owners[g] = (cell, l);
        }
    }
}

impl DofMap {
    pub fn new(spec: SpaceSpec, mesh: Arc<MicroCellMesh>) -> Result<Self> {
        let family = spec.family()?;
        let basis = LagrangeBasis::from_family(&family);
        let p = spec.degree;
        let n1 = p + 1;
        let ncells = mesh.num_cells();
        let builder = match (spec.kind, spec.grid) {
            (SpaceKind::Grad, Grid::Dual) => Self::dual_grad(&mesh, p)?,
            (SpaceKind::Curl, Grid::Dual) => Self::dual_curl(&mesh, p)?,
            (SpaceKind::Div, Grid::Dual) => {
                // X^div = R X^curl with R(a, b) = (-b, a): the curl function
                // l e1 becomes l e2 and l e2 becomes -l e1.
                let curl = Self::dual_curl(&mesh, p)?;
                let mut table = vec![None; curl.table.len()];
                let mut owners = curl.owners.clone();
                for cell in 0..ncells {
                    for j in 0..n1 {
                        for i in 0..n1 {
                            let base = cell * curl.local_len;
                            let c1 = curl.local(i, j, 0);
                            let c2 = curl.local(i, j, 1);
                            let from_c2 = curl.table[base + c2].unwrap();
                            let from_c1 = curl.table[base + c1].unwrap();
                            table[base + c1] = Some(LocalDof { global: from_c2.global, sign: -1.0 });
                            table[base + c2] = Some(LocalDof { global: from_c1.global, sign: 1.0 });
                        }
                    }
                }
                for (g, owner) in owners.iter_mut().enumerate() {
                    let (cell, l) = curl.owners[g];
                    // Component swap within the same node.
                    *owner = (cell, l ^ 1);
                }
                Builder { table, owners, ..curl }
            }
            (SpaceKind::Grad, Grid::Primal) => Self::primal_grad(&mesh, p)?,
            _ => {
                return Err(Error::UnsupportedSpace(format!(
                    "{:?} space on the {:?} grid is not implemented",
                    spec.kind, spec.grid
                )))
            }
        };
        let table: Vec<LocalDof> = builder
            .table
            .into_iter()
            .map(|d| d.expect("every local nodal function is assigned"))
            .collect();
        Ok(Self {
            spec,
            mesh,
            family,
            basis,
            total: builder.classes.len(),
            local_len: builder.local_len,
            table,
            classes: builder.classes,
            owners: builder.owners,
            macros: builder.macros,
        })
    }

    fn dual_grad(mesh: &MicroCellMesh, p: usize) -> Result<Builder> {
        let mut b = Builder::new(mesh.num_cells(), p + 1, 1);
        for (v, fan) in mesh.dual().dual_cells.iter().enumerate() {
            let g = b.open(DofClass::Vertex, v);
            for &c in &fan.cells {
                b.attach(g, c, 0, 0, 0);
            }
            for e in mesh.fan_edges(v) {
                let edge = mesh.edges()[e];
                for i in 1..=p {
                    let g = b.open(DofClass::Edge, v);
                    if let Some(l) = edge.left() {
                        b.attach(g, l.cell, 0, i, 0);
                    }
                    if let Some(r) = edge.right() {
                        b.attach(g, r.cell, i, 0, 0);
                    }
                }
            }
            for &c in &fan.cells {
                for j in 1..=p {
                    for i in 1..=p {
                        let g = b.open(DofClass::Face, v);
                        b.attach(g, c, i, j, 0);
                    }
                }
            }
        }
        Ok(b)
    }

    fn dual_curl(mesh: &MicroCellMesh, p: usize) -> Result<Builder> {
        let mut b = Builder::new(mesh.num_cells(), p + 1, 2);
        for (v, fan) in mesh.dual().dual_cells.iter().enumerate() {
            for e in mesh.fan_edges(v) {
                let edge = mesh.edges()[e];
                for i in 0..=p {
                    let g = b.open(DofClass::Edge, v);
                    if let Some(r) = edge.right() {
                        b.attach(g, r.cell, i, 0, 0);
                    }
                    if let Some(l) = edge.left() {
                        b.attach(g, l.cell, 0, i, 1);
                    }
                }
            }
            for &c in &fan.cells {
                for j in 0..=p {
                    for i in 0..=p {
                        if j >= 1 {
                            let g = b.open(DofClass::Face, v);
                            b.attach(g, c, i, j, 0);
                        }
                        if i >= 1 {
                            let g = b.open(DofClass::Face, v);
                            b.attach(g, c, i, j, 1);
                        }
                    }
                }
            }
        }
        Ok(b)
    }

    fn primal_grad(mesh: &MicroCellMesh, p: usize) -> Result<Builder> {
        let mut b = Builder::new(mesh.num_cells(), p + 1, 1);
        for t in 0..mesh.triangulation().num_triangles() {
            let g = b.open(DofClass::Vertex, t);
            for r in 0..3 {
                b.attach(g, 3 * t + r, p, p, 0);
            }
            for r in 0..3 {
                let c = 3 * t + r;
                let e = mesh.edges()[mesh.cell_edge(c, LocalEdge::Xi1)];
                debug_assert_eq!(e.class, EdgeClass::PrimalInterior);
                let other = e.second.expect("primal-interior edges have two sides").cell;
                for j in 0..p {
                    let g = b.open(DofClass::Edge, t);
                    b.attach(g, c, p, j, 0);
                    b.attach(g, other, j, p, 0);
                }
            }
            for r in 0..3 {
                for j in 0..p {
                    for i in 0..p {
                        let g = b.open(DofClass::Face, t);
                        b.attach(g, 3 * t + r, i, j, 0);
                    }
                }
            }
        }
        Ok(b)
    }

    pub fn spec(&self) -> SpaceSpec {
        self.spec
    }

    pub fn degree(&self) -> usize {
        self.spec.degree
    }

    pub fn components(&self) -> usize {
        self.spec.components()
    }

    pub fn mesh(&self) -> &Arc<MicroCellMesh> {
        &self.mesh
    }

    pub fn family(&self) -> &NodeFamily {
        &self.family
    }

    pub fn basis(&self) -> &LagrangeBasis {
        &self.basis
    }

    pub fn total_dofs(&self) -> usize {
        self.total
    }

    /// Number of local nodal functions per micro-cell.
    pub fn local_len(&self) -> usize {
        self.local_len
    }

    pub fn local_index(&self, i: usize, j: usize, comp: usize) -> usize {
        (j * (self.spec.degree + 1) + i) * self.components() + comp
    }

    /// `(i, j, comp)` of a local index.
    pub fn decode(&self, local: usize) -> (usize, usize, usize) {
        let nc = self.components();
        let n1 = self.spec.degree + 1;
        let node = local / nc;
        (node % n1, node / n1, local % nc)
    }

    pub fn cell_dofs(&self, cell: usize) -> &[LocalDof] {
        &self.table[cell * self.local_len..(cell + 1) * self.local_len]
    }

    pub fn class(&self, g: usize) -> DofClass {
        self.classes[g]
    }

    pub fn macro_element(&self, g: usize) -> usize {
        self.macros[g]
    }

    pub fn owner(&self, g: usize) -> (usize, usize) {
        self.owners[g]
    }

    /// Physical position of the node carrying DoF `g` and, for vector
    /// spaces, the reference component (1 or 2) in the owning cell.
    pub fn node_location(&self, g: usize) -> Result<(Point, Option<usize>)> {
        if g >= self.total {
            return Err(Error::IndexOutOfRange { index: g, len: self.total });
        }
        let (cell, l) = self.owners[g];
        let (i, j, comp) = self.decode(l);
        let nodes = self.family.nodes();
        let x = self.mesh.cell(cell).geometry.map(nodes[i], nodes[j]);
        let comp = (self.components() == 2).then_some(comp + 1);
        Ok((x, comp))
    }

    /// Reference (pulled-back) value of a discrete field in `cell` at `(xi, eta)`.
    pub fn reference_value(&self, values: &[f64], cell: usize, xi: f64, eta: f64) -> [f64; 2] {
        let n1 = self.spec.degree + 1;
        let mut lx = vec![0.0; n1];
        let mut ly = vec![0.0; n1];
        self.basis.values(xi, &mut lx);
        self.basis.values(eta, &mut ly);
        let nc = self.components();
        let mut out = [0.0; 2];
        for (l, d) in self.cell_dofs(cell).iter().enumerate() {
            let node = l / nc;
            let w = lx[node % n1] * ly[node / n1];
            out[l % nc] += d.sign * values[d.global] * w;
        }
        out
    }

    /// Physical value of a discrete field; scalar spaces use the first slot.
    pub fn evaluate(&self, values: &[f64], cell: usize, xi: f64, eta: f64) -> Result<[f64; 2]> {
        let r = self.reference_value(values, cell, xi, eta);
        self.mesh.cell(cell).geometry.pushforward(self.spec.pushforward(), xi, eta, r)
    }

    /// Value at a physical point, or `None` outside the mesh.
    pub fn evaluate_at(&self, values: &[f64], p: Point) -> Result<Option<[f64; 2]>> {
        match locate_point(&self.mesh, p) {
            Some((cell, xi, eta)) => self.evaluate(values, cell, xi, eta).map(Some),
            None => Ok(None),
        }
    }

    /// Nodal interpolation: scalar DoFs take point values, vector DoFs the
    /// pulled-back component at their node.
    pub fn interpolate(&self, f: impl Fn(Point) -> [f64; 2]) -> Result<FieldVector> {
        let nodes = self.family.nodes();
        let kind = self.spec.pushforward();
        let mut values = vec![0.0; self.total];
        for (g, v) in values.iter_mut().enumerate() {
            let (cell, l) = self.owners[g];
            let (i, j, comp) = self.decode(l);
            let (xi, eta) = (nodes[i], nodes[j]);
            let geom = &self.mesh.cell(cell).geometry;
            let fx = f(geom.map(xi, eta));
            let reference = match kind {
                Pushforward::Grad => fx,
                _ => geom.pullback(kind, xi, eta, fx)?,
            };
            *v = reference[comp] * self.cell_dofs(cell)[l].sign;
        }
        Ok(FieldVector { spec: self.spec, values })
    }

    pub fn interpolate_scalar(&self, f: impl Fn(Point) -> f64) -> Result<FieldVector> {
        self.interpolate(|p| [f(p), 0.0])
    }

    /// `L2` distance to a reference field using the `(P + 3)`-point Gauss
    /// tensor rule on every micro-cell.
    pub fn l2_error(&self, values: &[f64], reference: impl Fn(Point) -> [f64; 2]) -> Result<f64> {
        let gauss = gauss_rule(self.spec.degree + 3)?;
        let n1 = self.spec.degree + 1;
        let table = self.basis.value_table(gauss.nodes());
        let nc = self.components();
        let kind = self.spec.pushforward();
        let mut sum = 0.0;
        for cell in 0..self.mesh.num_cells() {
            let geom = self.mesh.cell(cell).geometry;
            let dofs = self.cell_dofs(cell);
            for (b, &eta) in gauss.nodes().iter().enumerate() {
                for (a, &xi) in gauss.nodes().iter().enumerate() {
                    let mut r = [0.0; 2];
                    for (l, d) in dofs.iter().enumerate() {
                        let node = l / nc;
                        r[l % nc] += d.sign * values[d.global] * table[a][node % n1] * table[b][node / n1];
                    }
                    let m = geom.metric(xi, eta)?;
                    let u = m.push(kind, r);
                    let f = reference(geom.map(xi, eta));
                    let diff = (u[0] - f[0]).powi(2) + if nc == 2 { (u[1] - f[1]).powi(2) } else { 0.0 };
                    sum += gauss.weights()[a] * gauss.weights()[b] * m.j * diff;
                }
            }
        }
        Ok(sum.sqrt())
    }

    /// Samples a field on a `density x density` cell-centred grid per
    /// micro-cell and writes `x,y,value` or `x,y,vx,vy` rows.
    pub fn write_snapshot<W: Write>(&self, values: &[f64], density: usize, mut out: W) -> Result<()> {
        if density == 0 {
            return Err(Error::InvalidArgument("snapshot density must be positive".into()));
        }
        let vector = self.components() == 2;
        writeln!(out, "{}", if vector { "x,y,vx,vy" } else { "x,y,value" })?;
        for cell in 0..self.mesh.num_cells() {
            for b in 0..density {
                for a in 0..density {
                    let xi = (a as f64 + 0.5) / density as f64;
                    let eta = (b as f64 + 0.5) / density as f64;
                    let p = self.mesh.cell(cell).geometry.map(xi, eta);
                    let v = self.evaluate(values, cell, xi, eta)?;
                    if vector {
                        writeln!(out, "{:e},{:e},{:e},{:e}", p.x, p.y, v[0], v[1])?;
                    } else {
                        writeln!(out, "{:e},{:e},{:e}", p.x, p.y, v[0])?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// DoF values of one discrete field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldVector {
    pub spec: SpaceSpec,
    pub values: Vec<f64>,
}

impl FieldVector {
    pub fn zeros(dofs: &DofMap) -> Self {
        Self { spec: dofs.spec(), values: vec![0.0; dofs.total_dofs()] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Micro-cell and reference coordinates of a physical point.
pub fn locate_point(mesh: &MicroCellMesh, p: Point) -> Option<(usize, f64, f64)> {
    for (c, cell) in mesh.cells().iter().enumerate() {
        let v = &cell.geometry.vertices;
        let (mut lo, mut hi) = (v[0], v[0]);
        for q in &v[1..] {
            lo = lo.inf(q);
            hi = hi.sup(q);
        }
        let slack = 1e-12 * cell.geometry.scale();
        if p.x < lo.x - slack || p.y < lo.y - slack || p.x > hi.x + slack || p.y > hi.y + slack {
            continue;
        }
        if let Some((xi, eta)) = cell.geometry.inverse_map(p) {
            if crate::reference_map::CellGeometry::contains_reference(xi, eta, 1e-10) {
                return Some((c, xi.clamp(0.0, 1.0), eta.clamp(0.0, 1.0)));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_structured_square, MicroCellMesh};
    use std::collections::HashSet;

    fn mesh(n: usize, side: f64) -> Arc<MicroCellMesh> {
        Arc::new(MicroCellMesh::from_triangulation(&generate_structured_square(n, side).unwrap()).unwrap())
    }

    fn perturbed_mesh() -> Arc<MicroCellMesh> {
        let t = generate_structured_square(3, 1.0).unwrap();
        let mut vertices = t.vertices().to_vec();
        for (k, v) in vertices.iter_mut().enumerate() {
            if v.x > 0.0 && v.x < 1.0 && v.y > 0.0 && v.y < 1.0 {
                v.x += 0.06 * ((k * 7 % 5) as f64 - 2.0) / 2.0;
                v.y += 0.05 * ((k * 3 % 5) as f64 - 2.0) / 2.0;
            }
        }
        let t = crate::mesh::Triangulation::new(vertices, t.triangles().to_vec(), t.boundary_edges().to_vec()).unwrap();
        Arc::new(MicroCellMesh::from_triangulation(&t).unwrap())
    }

    fn single_triangle() -> Arc<MicroCellMesh> {
        let t = crate::mesh::Triangulation::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.2, 0.9)],
            vec![[0, 1, 2]],
            vec![],
        )
        .unwrap();
        Arc::new(MicroCellMesh::from_triangulation(&t).unwrap())
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn primal_grad_one_triangle() {
        let d = DofMap::new(SpaceSpec::primal_grad(1), single_triangle()).unwrap();
        assert_eq!(d.total_dofs(), 7);
        for p in 0..5 {
            let d = DofMap::new(SpaceSpec::primal_grad(p), single_triangle()).unwrap();
            assert_eq!(d.total_dofs(), 3 * p * p + 3 * p + 1);
        }
    }

    #[test]
    fn dual_dimensions_match_formulas() {
        let m = mesh(4, 1.0);
        for p in 0..4 {
            let grad = DofMap::new(SpaceSpec::dual_grad(p), m.clone()).unwrap();
            let curl = DofMap::new(SpaceSpec::dual_curl(p), m.clone()).unwrap();
            let div = DofMap::new(SpaceSpec::dual_div(p), m.clone()).unwrap();
            let mut grad_expected = 0;
            let mut curl_expected = 0;
            for (v, fan) in m.dual().dual_cells.iter().enumerate() {
                let cells = fan.cells.len();
                let edges = m.fan_edges(v).len();
                grad_expected += 1 + edges * p + cells * p * p;
                curl_expected += edges * (p + 1) + 2 * cells * p * (p + 1);
            }
            assert_eq!(grad.total_dofs(), grad_expected);
            assert_eq!(curl.total_dofs(), curl_expected);
            assert_eq!(div.total_dofs(), curl_expected);
        }
        // Interior vertex of the structured mesh has 6 cells and 6 edges.
        let grad = DofMap::new(SpaceSpec::dual_grad(1), m.clone()).unwrap();
        let interior = m.dual().dual_cells.iter().position(|f| f.closed).unwrap();
        let count = (0..grad.total_dofs()).filter(|&g| grad.macro_element(g) == interior).count();
        assert_eq!(count, 13);
        let curl0 = DofMap::new(SpaceSpec::dual_curl(0), m.clone()).unwrap();
        let count = (0..curl0.total_dofs()).filter(|&g| curl0.macro_element(g) == interior).count();
        assert_eq!(count, 6);
        assert!((0..curl0.total_dofs()).all(|g| curl0.class(g) == DofClass::Edge));
    }

    #[test]
    fn dimensions_match_brute_force_node_classes() {
        // Scalar DoFs are in bijection with distinct (macro element, physical node) pairs.
        let m = perturbed_mesh();
        for spec in [SpaceSpec::dual_grad(2), SpaceSpec::primal_grad(2)] {
            let d = DofMap::new(spec, m.clone()).unwrap();
            let nodes = d.family().nodes().to_vec();
            let mut classes = HashSet::new();
            for (c, cell) in m.cells().iter().enumerate() {
                let macro_id = if spec.grid == Grid::Dual { cell.dual_cell } else { cell.triangle };
                for j in 0..nodes.len() {
                    for i in 0..nodes.len() {
                        let x = cell.geometry.map(nodes[i], nodes[j]);
                        let key = (macro_id, (x.x * 1e9).round() as i64, (x.y * 1e9).round() as i64);
                        classes.insert(key);
                        let g = d.cell_dofs(c)[d.local_index(i, j, 0)].global;
                        let (pos, _) = d.node_location(g).unwrap();
                        assert!((pos - x).norm() < 1e-13);
                    }
                }
            }
            assert_eq!(classes.len(), d.total_dofs());
        }
    }

    #[test]
    fn anchored_node_locations() {
        let m = mesh(2, 1.0);
        let grad = DofMap::new(SpaceSpec::dual_grad(3), m.clone()).unwrap();
        for g in 0..grad.total_dofs() {
            if grad.class(g) == DofClass::Vertex {
                let (p, comp) = grad.node_location(g).unwrap();
                assert_eq!(p, m.triangulation().vertices()[grad.macro_element(g)]);
                assert_eq!(comp, None);
            }
        }
        let primal = DofMap::new(SpaceSpec::primal_grad(3), m.clone()).unwrap();
        for g in 0..primal.total_dofs() {
            if primal.class(g) == DofClass::Vertex {
                let (p, _) = primal.node_location(g).unwrap();
                assert_eq!(p, m.triangulation().centroid(primal.macro_element(g)));
            }
        }
        assert!(primal.node_location(primal.total_dofs()).is_err());
        let curl = DofMap::new(SpaceSpec::dual_curl(1), m).unwrap();
        assert!(matches!(curl.node_location(0).unwrap().1, Some(1 | 2)));
    }

    #[test]
    fn reserved_spaces_are_rejected() {
        let m = mesh(1, 1.0);
        for kind in [SpaceKind::Curl, SpaceKind::Div] {
            let r = DofMap::new(SpaceSpec::new(kind, Grid::Primal, 1), m.clone());
            assert!(matches!(r, Err(Error::UnsupportedSpace(_))));
        }
    }

    #[test]
    fn constants_are_reproduced() {
        let m = perturbed_mesh();
        let grad = DofMap::new(SpaceSpec::dual_grad(2), m.clone()).unwrap();
        let f = grad.interpolate_scalar(|_| 1.0).unwrap();
        assert!(f.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!((grad.evaluate(&f.values, 5, 0.3, 0.7).unwrap()[0] - 1.0).abs() < 1e-12);
        let pts = pseudo_random(100, 3);
        for spec in [SpaceSpec::dual_curl(2), SpaceSpec::dual_div(2), SpaceSpec::dual_curl(1)] {
            let d = DofMap::new(spec, m.clone()).unwrap();
            let f = d.interpolate(|_| [1.0, 0.0]).unwrap();
            for k in 0..50 {
                let cell = k * 7 % m.num_cells();
                let (xi, eta) = (0.5 * (pts[2 * k] + 1.0), 0.5 * (pts[2 * k + 1] + 1.0));
                let v = d.evaluate(&f.values, cell, xi, eta).unwrap();
                assert!((v[0] - 1.0).abs() < 1e-11 && v[1].abs() < 1e-11, "{spec:?} {v:?}");
            }
        }
    }

    #[test]
    fn zero_field_has_zero_error() {
        let d = DofMap::new(SpaceSpec::primal_grad(2), mesh(2, 1.0)).unwrap();
        let z = FieldVector::zeros(&d);
        assert_eq!(d.l2_error(&z.values, |_| [0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn interpolation_converges_at_order_p_plus_one() {
        let pi = std::f64::consts::PI;
        let f = |p: Point| [(2.0 * p.x).sin() * (6.0 * p.y).sin(), 0.0];
        let p = 3;
        let err = |n| {
            let d = DofMap::new(SpaceSpec::primal_grad(p), mesh(n, pi)).unwrap();
            let v = d.interpolate(f).unwrap();
            d.l2_error(&v.values, f).unwrap()
        };
        let (e8, e16) = (err(8), err(16));
        let rate = (e8 / e16).log2();
        assert!(rate > 3.5 && rate < 4.6, "rate {rate}");
    }

    #[test]
    fn kronecker_property() {
        let m = perturbed_mesh();
        for spec in [SpaceSpec::dual_grad(2), SpaceSpec::primal_grad(2), SpaceSpec::dual_curl(2), SpaceSpec::dual_div(1)] {
            let d = DofMap::new(spec, m.clone()).unwrap();
            let nodes = d.family().nodes().to_vec();
            for g in (0..d.total_dofs()).step_by(7) {
                let mut e = vec![0.0; d.total_dofs()];
                e[g] = 1.0;
                for cell in 0..m.num_cells() {
                    for (l, ld) in d.cell_dofs(cell).iter().enumerate() {
                        let (i, j, comp) = d.decode(l);
                        let r = d.reference_value(&e, cell, nodes[i], nodes[j]);
                        let expected = if ld.global == g { ld.sign } else { 0.0 };
                        assert!((r[comp] - expected).abs() < 1e-12);
                    }
                }
            }
        }
    }

    /// Traces of a random field across every micro-edge of the given class.
    fn max_jump(d: &DofMap, class: EdgeClass, which: &str) -> f64 {
        let m = d.mesh().clone();
        let values = pseudo_random(d.total_dofs(), 11);
        let mut worst = 0.0f64;
        for e in m.edges().iter().filter(|e| e.class == class) {
            let (a, b) = (e.first.unwrap(), e.second.unwrap());
            for k in 0..20 {
                let s = (k as f64 + 0.5) / 20.0;
                let trace = |side: crate::mesh::EdgeSide| {
                    let (xi, eta) = side.local.point(s);
                    let geom = m.cell(side.cell).geometry;
                    let v = d.evaluate(&values, side.cell, xi, eta).unwrap();
                    let [p0, p1] = match side.local {
                        LocalEdge::Eta0 | LocalEdge::Eta1 => [geom.map(0.0, eta), geom.map(1.0, eta)],
                        _ => [geom.map(xi, 0.0), geom.map(xi, 1.0)],
                    };
                    let t = p1 - p0;
                    match which {
                        "value" => v[0],
                        "tangential" => v[0] * t.x + v[1] * t.y,
                        _ => v[0] * t.y - v[1] * t.x,
                    }
                };
                worst = worst.max((trace(a) - trace(b)).abs());
            }
        }
        worst
    }

    #[test]
    fn conformity_across_macro_interior_edges() {
        let m = perturbed_mesh();
        for p in [0, 1, 3] {
            let grad = DofMap::new(SpaceSpec::dual_grad(p), m.clone()).unwrap();
            assert!(max_jump(&grad, EdgeClass::DualInterior, "value") < 1e-11);
            let curl = DofMap::new(SpaceSpec::dual_curl(p), m.clone()).unwrap();
            assert!(max_jump(&curl, EdgeClass::DualInterior, "tangential") < 1e-11);
            let div = DofMap::new(SpaceSpec::dual_div(p), m.clone()).unwrap();
            assert!(max_jump(&div, EdgeClass::DualInterior, "normal") < 1e-11);
            let primal = DofMap::new(SpaceSpec::primal_grad(p), m.clone()).unwrap();
            assert!(max_jump(&primal, EdgeClass::PrimalInterior, "value") < 1e-11);
            // Broken across macro-element boundaries.
            if p > 0 {
                assert!(max_jump(&grad, EdgeClass::PrimalInterior, "value") > 1e-3);
                assert!(max_jump(&primal, EdgeClass::DualInterior, "value") > 1e-3);
            }
        }
    }

    #[test]
    fn shared_dofs_stay_inside_one_macro_element() {
        let m = perturbed_mesh();
        for spec in [SpaceSpec::dual_grad(2), SpaceSpec::dual_curl(1), SpaceSpec::primal_grad(2)] {
            let d = DofMap::new(spec, m.clone()).unwrap();
            let mut refs = vec![0usize; d.total_dofs()];
            for (c, cell) in m.cells().iter().enumerate() {
                let macro_id = if spec.grid == Grid::Dual { cell.dual_cell } else { cell.triangle };
                for ld in d.cell_dofs(c) {
                    assert_eq!(d.macro_element(ld.global), macro_id);
                    refs[ld.global] += 1;
                }
            }
            assert!(refs.iter().all(|&r| r >= 1));
        }
    }

    #[test]
    fn snapshot_export() {
        let d = DofMap::new(SpaceSpec::dual_curl(1), mesh(1, 1.0)).unwrap();
        let f = d.interpolate(|p| [p.x, p.y]).unwrap();
        let mut buf = Vec::new();
        d.write_snapshot(&f.values, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,y,vx,vy"));
        assert_eq!(text.lines().count(), 1 + 6 * 4);
    }

    #[test]
    fn point_location() {
        let d = DofMap::new(SpaceSpec::primal_grad(2), mesh(3, 1.0)).unwrap();
        let f = d.interpolate_scalar(|p| p.x * p.y).unwrap();
        let v = d.evaluate_at(&f.values, Point::new(0.37, 0.61)).unwrap().unwrap();
        assert!((v[0] - 0.37 * 0.61).abs() < 1e-12);
        assert!(d.evaluate_at(&f.values, Point::new(2.0, 0.5)).unwrap().is_none());
    }
}
