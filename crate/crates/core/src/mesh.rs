//! Primal triangulations, barycentric dual complexes and micro-cell meshes.
//!
//! Every triangle `T = (V0, V1, V2)` (counter-clockwise) is split into three
//! quadrilateral micro-cells, one per vertex. The cell attached to local
//! vertex `r` has index `3 t + r` and corners
//!
//! ```text
//! v1 = V_r, v2 = mid(V_r, V_{r+1}), v3 = centroid(T), v4 = mid(V_{r+2}, V_r)
//! ```
//!
//! so that its reference edges are
//!
//! * `eta = 0`: the half of the primal edge `(V_r, V_{r+1})` at `V_r`;
//! * `xi = 0`: the half of the primal edge `(V_r, V_{r+2})` at `V_r`;
//! * `xi = 1`: from `mid(V_r, V_{r+1})` to the centroid;
//! * `eta = 1`: from `mid(V_{r+2}, V_r)` to the centroid.
//!
//! Half-edges are traversed from the primal vertex outwards in both adjacent
//! cells. The cell seeing a half-edge as `xi = 0` is its left cell `K_L`,
//! the one seeing it as `eta = 0` is its right cell `K_R`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::reference_map::CellGeometry;
use crate::{Error, Point, Result};

/// A marked boundary segment of a triangulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub marker: i32,
}

/// Conforming, counter-clockwise triangulation with derived edge connectivity.
#[derive(Clone, Debug)]
pub struct Triangulation {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<BoundaryEdge>,
    /// Unique edges, each stored with ascending vertex indices.
    edges: Vec<[usize; 2]>,
    /// Triangles adjacent to each edge; the second slot is empty on the boundary.
    edge_triangles: Vec<[Option<usize>; 2]>,
    /// `triangle_edges[t][r]` is the edge `(V_r, V_{r+1})` of triangle `t`.
    triangle_edges: Vec<[usize; 3]>,
    /// Marker per edge, `None` for interior edges.
    edge_markers: Vec<Option<i32>>,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b - a).perp(&(c - a)))
}

fn edge_key(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

impl Triangulation {
    /// Validates the input and builds edge connectivity. Clockwise triangles
    /// are reordered. Boundary edges not listed in `boundary` receive marker 0.
    pub fn new(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        boundary: Vec<BoundaryEdge>,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::Topology("triangulation has no triangles".into()));
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= nv {
                    return Err(Error::IndexOutOfRange { index: v, len: nv });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Topology(format!("triangle {t} repeats a vertex")));
            }
            let area = signed_area(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            let scale = (vertices[tri[1]] - vertices[tri[0]])
                .norm()
                .max((vertices[tri[2]] - vertices[tri[0]]).norm());
            if area.abs() <= 1e-14 * scale * scale {
                return Err(Error::MeshQuality { triangle: t, jacobian: 2.0 * area });
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }

        let mut seen = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            let mut key = *tri;
            key.sort_unstable();
            if let Some(other) = seen.insert(key, t) {
                return Err(Error::Topology(format!("triangles {other} and {t} coincide")));
            }
        }

        let mut index: HashMap<[usize; 2], usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut edge_triangles: Vec<[Option<usize>; 2]> = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0; 3];
            for r in 0..3 {
                let key = edge_key(tri[r], tri[(r + 1) % 3]);
                let e = *index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edge_triangles.push([None, None]);
                    edges.len() - 1
                });
                match edge_triangles[e] {
                    [None, _] => edge_triangles[e][0] = Some(t),
                    [Some(_), None] => edge_triangles[e][1] = Some(t),
                    _ => {
                        return Err(Error::Topology(format!(
                            "edge ({}, {}) is shared by more than two triangles",
                            key[0], key[1]
                        )))
                    }
                }
                local[r] = e;
            }
            triangle_edges.push(local);
        }
        // Two triangles sharing an edge must traverse it in opposite directions.
        for (e, adj) in edge_triangles.iter().enumerate() {
            if let [Some(a), Some(b)] = *adj {
                let dir = |t: usize| {
                    let r = triangle_edges[t].iter().position(|&x| x == e).unwrap();
                    triangles[t][r]
                };
                if dir(a) == dir(b) {
                    return Err(Error::Topology(format!(
                        "triangles {a} and {b} overlap across edge ({}, {})",
                        edges[e][0], edges[e][1]
                    )));
                }
            }
        }

        let mut edge_markers = vec![None; edges.len()];
        for b in &boundary {
            let key = edge_key(b.vertices[0], b.vertices[1]);
            match index.get(&key) {
                Some(&e) if edge_triangles[e][1].is_none() => edge_markers[e] = Some(b.marker),
                Some(_) => {
                    return Err(Error::Topology(format!(
                        "boundary edge ({}, {}) is interior",
                        key[0], key[1]
                    )))
                }
                None => {
                    return Err(Error::Topology(format!(
                        "boundary edge ({}, {}) is not a mesh edge",
                        key[0], key[1]
                    )))
                }
            }
        }
        let mut boundary_out = Vec::new();
        for (e, adj) in edge_triangles.iter().enumerate() {
            if adj[1].is_none() {
                let marker = *edge_markers[e].get_or_insert(0);
                boundary_out.push(BoundaryEdge { vertices: edges[e], marker });
            }
        }

        let mesh = Self {
            vertices,
            triangles,
            boundary: boundary_out,
            edges,
            edge_triangles,
            triangle_edges,
            edge_markers,
        };
        mesh.check_conforming()?;
        Ok(mesh)
    }

    /// Rejects vertices lying in the interior of a boundary edge and
    /// vertices whose incident triangles do not form a single fan.
    fn check_conforming(&self) -> Result<()> {
        for (e, adj) in self.edge_triangles.iter().enumerate() {
            if adj[1].is_some() {
                continue;
            }
            let [a, b] = self.edges[e];
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let d = pb - pa;
            let len2 = d.norm_squared();
            for (v, &p) in self.vertices.iter().enumerate() {
                if v == a || v == b {
                    continue;
                }
                let s = (p - pa).dot(&d) / len2;
                let dist = (p - pa).perp(&d).abs() / len2.sqrt();
                if s > 1e-12 && s < 1.0 - 1e-12 && dist <= 1e-12 * len2.sqrt() {
                    return Err(Error::Topology(format!(
                        "vertex {v} hangs on edge ({a}, {b})"
                    )));
                }
            }
        }
        let mut incident = vec![0usize; self.vertices.len()];
        let mut boundary_degree = vec![0usize; self.vertices.len()];
        for tri in &self.triangles {
            for &v in tri {
                incident[v] += 1;
            }
        }
        for (e, adj) in self.edge_triangles.iter().enumerate() {
            if adj[1].is_none() {
                for &v in &self.edges[e] {
                    boundary_degree[v] += 1;
                }
            }
        }
        for (v, (&deg, &bdeg)) in incident.iter().zip(&boundary_degree).enumerate() {
            if deg == 0 {
                return Err(Error::Topology(format!("vertex {v} belongs to no triangle")));
            }
            if bdeg != 0 && bdeg != 2 {
                return Err(Error::Topology(format!(
                    "vertex {v} is a non-manifold boundary vertex"
                )));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn edge_triangles(&self, edge: usize) -> [Option<usize>; 2] {
        self.edge_triangles[edge]
    }

    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.triangle_edges[t]
    }

    pub fn edge_marker(&self, edge: usize) -> Option<i32> {
        self.edge_markers[edge]
    }

    pub fn is_boundary_edge(&self, edge: usize) -> bool {
        self.edge_triangles[edge][1].is_none()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    pub fn area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Arithmetic mean of the three triangle vertices.
    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangle_points(t);
        (a + b + c) / 3.0
    }

    pub fn midpoint(&self, edge: usize) -> Point {
        let [a, b] = self.edges[edge];
        (self.vertices[a] + self.vertices[b]) * 0.5
    }

    /// Longest edge length.
    pub fn max_edge_length(&self) -> f64 {
        self.edges
            .iter()
            .map(|&[a, b]| (self.vertices[a] - self.vertices[b]).norm())
            .fold(0.0, f64::max)
    }

    /// Writes the text mesh format read by [`load_triangulation`].
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut s = String::new();
        writeln!(s, "VERTICES {}", self.vertices.len()).unwrap();
        for p in &self.vertices {
            writeln!(s, "{:e} {:e}", p.x, p.y).unwrap();
        }
        writeln!(s, "TRIANGLES {}", self.triangles.len()).unwrap();
        for t in &self.triangles {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        writeln!(s, "BOUNDARY {}", self.boundary.len()).unwrap();
        for b in &self.boundary {
            writeln!(s, "{} {} {}", b.vertices[0], b.vertices[1], b.marker).unwrap();
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Uniform `n x n` grid on `[0, side]^2`, each square split along the
/// diagonal from its lower-left to its upper-right corner. All boundary
/// edges carry marker 1.
pub fn generate_structured_square(n: usize, side: f64) -> Result<Triangulation> {
    if n == 0 {
        return Err(Error::InvalidArgument("subdivision count must be positive".into()));
    }
    if !(side > 0.0 && side.is_finite()) {
        return Err(Error::InvalidArgument(format!("side length {side} must be positive")));
    }
    let h = side / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            // Exact endpoints avoid round-off on the boundary.
            let x = if i == n { side } else { i as f64 * h };
            let y = if j == n { side } else { j as f64 * h };
            vertices.push(Point::new(x, y));
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let mut boundary = Vec::with_capacity(4 * n);
    for k in 0..n {
        boundary.push(BoundaryEdge { vertices: [id(k, 0), id(k + 1, 0)], marker: 1 });
        boundary.push(BoundaryEdge { vertices: [id(n, k), id(n, k + 1)], marker: 1 });
        boundary.push(BoundaryEdge { vertices: [id(k + 1, n), id(k, n)], marker: 1 });
        boundary.push(BoundaryEdge { vertices: [id(0, k + 1), id(0, k)], marker: 1 });
    }
    Triangulation::new(vertices, triangles, boundary)
}

/// Coarse six-triangle mesh of the unit square: a fan around the centre
/// `(1/2, 1/2)` through the corners and the bottom and top edge midpoints.
pub fn six_element_square() -> Triangulation {
    let vertices = vec![
        Point::new(0.0, 0.0),
        Point::new(0.5, 0.0),
        Point::new(1.0, 0.0),
        Point::new(1.0, 1.0),
        Point::new(0.5, 1.0),
        Point::new(0.0, 1.0),
        Point::new(0.5, 0.5),
    ];
    let triangles = (0..6).map(|k| [k, (k + 1) % 6, 6]).collect();
    let boundary = (0..6)
        .map(|k| BoundaryEdge { vertices: [k, (k + 1) % 6], marker: 1 })
        .collect();
    Triangulation::new(vertices, triangles, boundary).expect("fixed mesh is valid")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Reads the text mesh format:
///
/// ```text
/// VERTICES n
/// x y            (n lines)
/// TRIANGLES m
/// i j k          (m lines, 0-based)
/// BOUNDARY b
/// i j marker     (b lines)
/// ```
///
/// Tokens are whitespace separated and `#` starts a comment.
pub fn load_triangulation<R: BufRead>(input: R) -> Result<Triangulation> {
    let mut lines = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim().to_string();
        if !content.is_empty() {
            lines.push((k + 1, content));
        }
    }
    let mut it = lines.into_iter().peekable();

    fn header(
        it: &mut impl Iterator<Item = (usize, String)>,
        name: &str,
        last_line: usize,
    ) -> Result<(usize, usize)> {
        let (ln, text) = it
            .next()
            .ok_or_else(|| parse_err(last_line, format!("missing {name} section")))?;
        let mut tok = text.split_whitespace();
        if tok.next() != Some(name) {
            return Err(parse_err(ln, format!("expected `{name} <count>`")));
        }
        let count = tok
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| parse_err(ln, format!("invalid {name} count")))?;
        if tok.next().is_some() {
            return Err(parse_err(ln, "trailing tokens after section header"));
        }
        Ok((ln, count))
    }

    fn record<T: std::str::FromStr>(
        it: &mut impl Iterator<Item = (usize, String)>,
        expected: usize,
        what: &str,
        header_line: usize,
    ) -> Result<(usize, Vec<T>)> {
        let (ln, text) = it
            .next()
            .ok_or_else(|| parse_err(header_line, format!("unexpected end of input in {what}")))?;
        let vals: std::result::Result<Vec<T>, _> = text.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == expected => Ok((ln, v)),
            Ok(_) => Err(parse_err(ln, format!("expected {expected} values in {what} record"))),
            Err(_) => Err(parse_err(ln, format!("malformed {what} record"))),
        }
    }

    let (vl, nv) = header(&mut it, "VERTICES", 0)?;
    let mut vertices = Vec::with_capacity(nv);
    let mut last = vl;
    for _ in 0..nv {
        let (ln, v) = record::<f64>(&mut it, 2, "vertex", last)?;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(parse_err(ln, "non-finite coordinate"));
        }
        vertices.push(Point::new(v[0], v[1]));
        last = ln;
    }
    let (tl, nt) = header(&mut it, "TRIANGLES", last)?;
    let mut triangles = Vec::with_capacity(nt);
    last = tl;
    for _ in 0..nt {
        let (ln, v) = record::<usize>(&mut it, 3, "triangle", last)?;
        if let Some(&bad) = v.iter().find(|&&i| i >= nv) {
            return Err(parse_err(ln, format!("vertex index {bad} out of range")));
        }
        triangles.push([v[0], v[1], v[2]]);
        last = ln;
    }
    let mut boundary = Vec::new();
    if it.peek().is_some() {
        let (bl, nb) = header(&mut it, "BOUNDARY", last)?;
        last = bl;
        for _ in 0..nb {
            let (ln, v) = record::<i64>(&mut it, 3, "boundary", last)?;
            if v[0] < 0 || v[1] < 0 || v[0] as usize >= nv || v[1] as usize >= nv {
                return Err(parse_err(ln, "boundary vertex index out of range"));
            }
            boundary.push(BoundaryEdge {
                vertices: [v[0] as usize, v[1] as usize],
                marker: v[2] as i32,
            });
            last = ln;
        }
    }
    if let Some((ln, _)) = it.next() {
        return Err(parse_err(ln, "unexpected trailing content"));
    }
    Triangulation::new(vertices, triangles, boundary)
}

/// One dual cell: the fan of micro-cells around a primal vertex.
#[derive(Clone, Debug)]
pub struct DualCell {
    pub vertex: usize,
    /// Micro-cell indices in counter-clockwise order.
    pub cells: Vec<usize>,
    /// Whether the fan closes on itself (interior vertex).
    pub closed: bool,
}

/// A dual edge: the poly-line through the centroids adjacent to a primal
/// edge and its midpoint.
#[derive(Clone, Debug)]
pub struct DualEdge {
    pub primal_edge: usize,
    /// `[centroid, midpoint, centroid]` or `[midpoint, centroid]` on the boundary.
    pub points: Vec<Point>,
}

/// Barycentric dual of a triangulation.
#[derive(Clone, Debug)]
pub struct DualComplex {
    /// Triangle centroids, then edge midpoints, then primal boundary vertices.
    pub dual_vertices: Vec<Point>,
    pub dual_cells: Vec<DualCell>,
    pub dual_edges: Vec<DualEdge>,
    pub cell_areas: Vec<f64>,
}

impl DualComplex {
    pub fn num_cells(&self) -> usize {
        self.dual_cells.len()
    }

    pub fn area(&self) -> f64 {
        self.cell_areas.iter().sum()
    }
}

fn quad_area(v: &[Point; 4]) -> f64 {
    0.5 * (0..4).map(|k| v[k].perp(&v[(k + 1) % 4])).sum::<f64>()
}

fn micro_cell_vertices(tri: &Triangulation, t: usize, r: usize) -> [Point; 4] {
    let [a, b, c] = tri.triangle_points(t);
    let p = [a, b, c];
    let v = p[r];
    let next = p[(r + 1) % 3];
    let prev = p[(r + 2) % 3];
    [v, (v + next) * 0.5, (a + b + c) / 3.0, (prev + v) * 0.5]
}

/// For the micro-cell of `(t, r)`, the counter-clockwise neighbour around
/// `V_r`, i.e. the cell on the other side of its `xi = 0` half-edge.
fn ccw_neighbour(tri: &Triangulation, t: usize, r: usize) -> Option<(usize, usize)> {
    let e = tri.triangle_edges(t)[(r + 2) % 3];
    let v = tri.triangles()[t][r];
    let other = tri.edge_triangles(e).into_iter().flatten().find(|&s| s != t)?;
    let rr = tri.triangles()[other].iter().position(|&x| x == v).unwrap();
    Some((other, rr))
}

/// Clockwise neighbour: the cell across the `eta = 0` half-edge.
fn cw_neighbour(tri: &Triangulation, t: usize, r: usize) -> Option<(usize, usize)> {
    let e = tri.triangle_edges(t)[r];
    let v = tri.triangles()[t][r];
    let other = tri.edge_triangles(e).into_iter().flatten().find(|&s| s != t)?;
    let rr = tri.triangles()[other].iter().position(|&x| x == v).unwrap();
    Some((other, rr))
}

/// Builds the barycentric dual. Interior fans start at their lowest
/// micro-cell index; boundary fans start at the cell whose `eta = 0`
/// half-edge lies on the boundary.
pub fn build_dual_complex(tri: &Triangulation) -> DualComplex {
    let nt = tri.num_triangles();
    let ne = tri.num_edges();
    let mut dual_vertices: Vec<Point> = (0..nt).map(|t| tri.centroid(t)).collect();
    dual_vertices.extend((0..ne).map(|e| tri.midpoint(e)));
    let mut on_boundary = vec![false; tri.num_vertices()];
    for b in tri.boundary_edges() {
        on_boundary[b.vertices[0]] = true;
        on_boundary[b.vertices[1]] = true;
    }
    dual_vertices.extend(
        (0..tri.num_vertices()).filter(|&v| on_boundary[v]).map(|v| tri.vertices()[v]),
    );

    let mut first_cell: Vec<Option<(usize, usize)>> = vec![None; tri.num_vertices()];
    for t in 0..nt {
        for r in 0..3 {
            let v = tri.triangles()[t][r];
            if first_cell[v].is_none() {
                first_cell[v] = Some((t, r));
            }
        }
    }
    let mut dual_cells = Vec::with_capacity(tri.num_vertices());
    let mut cell_areas = Vec::with_capacity(tri.num_vertices());
    for v in 0..tri.num_vertices() {
        let mut start = first_cell[v].expect("validated: every vertex is used");
        if on_boundary[v] {
            while let Some(prev) = cw_neighbour(tri, start.0, start.1) {
                start = prev;
            }
        }
        let mut cells = vec![3 * start.0 + start.1];
        let mut cur = start;
        let mut closed = false;
        while let Some(next) = ccw_neighbour(tri, cur.0, cur.1) {
            if next == start {
                closed = true;
                break;
            }
            cells.push(3 * next.0 + next.1);
            cur = next;
        }
        let area = cells
            .iter()
            .map(|&c| quad_area(&micro_cell_vertices(tri, c / 3, c % 3)))
            .sum();
        dual_cells.push(DualCell { vertex: v, cells, closed });
        cell_areas.push(area);
    }

    let dual_edges = (0..ne)
        .map(|e| {
            let mid = tri.midpoint(e);
            let points = match tri.edge_triangles(e) {
                [Some(a), Some(b)] => vec![tri.centroid(a), mid, tri.centroid(b)],
                [Some(a), None] => vec![mid, tri.centroid(a)],
                _ => unreachable!("every edge has a first triangle"),
            };
            DualEdge { primal_edge: e, points }
        })
        .collect();

    DualComplex { dual_vertices, dual_cells, dual_edges, cell_areas }
}

/// Local edges of the reference square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LocalEdge {
    /// `eta = 0`, parametrized by `xi`.
    Eta0,
    /// `xi = 1`, parametrized by `eta`.
    Xi1,
    /// `eta = 1`, parametrized by `xi`.
    Eta1,
    /// `xi = 0`, parametrized by `eta`.
    Xi0,
}

impl LocalEdge {
    pub const ALL: [LocalEdge; 4] = [LocalEdge::Eta0, LocalEdge::Xi1, LocalEdge::Eta1, LocalEdge::Xi0];

    pub fn index(self) -> usize {
        match self {
            LocalEdge::Eta0 => 0,
            LocalEdge::Xi1 => 1,
            LocalEdge::Eta1 => 2,
            LocalEdge::Xi0 => 3,
        }
    }

    /// Reference point at parameter `s` along the edge.
    pub fn point(self, s: f64) -> (f64, f64) {
        match self {
            LocalEdge::Eta0 => (s, 0.0),
            LocalEdge::Xi1 => (1.0, s),
            LocalEdge::Eta1 => (s, 1.0),
            LocalEdge::Xi0 => (0.0, s),
        }
    }

    /// Whether the edge lies on the boundary of the parent dual cell
    /// (`xi = 1` and `eta = 1`) rather than the parent triangle.
    pub fn on_dual_boundary(self) -> bool {
        matches!(self, LocalEdge::Xi1 | LocalEdge::Eta1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeClass {
    /// Half of an interior primal edge, inside a dual cell.
    DualInterior,
    /// Midpoint-to-centroid segment, inside a triangle.
    PrimalInterior,
    /// Half of a boundary primal edge.
    Boundary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeSide {
    pub cell: usize,
    pub local: LocalEdge,
}

/// A micro-edge with the two cells it separates.
///
/// For half-edges `first` is the left cell (`xi = 0`) and `second` the right
/// cell (`eta = 0`). For midpoint-to-centroid edges `first` sees the edge as
/// `xi = 1` and `second` as `eta = 1`. Both sides share the parametrization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroEdge {
    pub class: EdgeClass,
    pub first: Option<EdgeSide>,
    pub second: Option<EdgeSide>,
    /// Boundary marker for [`EdgeClass::Boundary`].
    pub marker: Option<i32>,
}

impl MicroEdge {
    /// Left cell of a half-edge.
    pub fn left(&self) -> Option<EdgeSide> {
        self.first
    }

    /// Right cell of a half-edge.
    pub fn right(&self) -> Option<EdgeSide> {
        self.second
    }

    pub fn sides(&self) -> impl Iterator<Item = EdgeSide> {
        self.first.into_iter().chain(self.second)
    }
}

/// One quadrilateral micro-cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroCell {
    pub geometry: CellGeometry,
    pub triangle: usize,
    /// Local vertex `r` of the parent triangle.
    pub local_vertex: usize,
    /// Primal vertex index, which is also the dual-cell index.
    pub dual_cell: usize,
}

/// The quadrilateral mesh obtained by intersecting primal and dual cells.
#[derive(Clone, Debug)]
pub struct MicroCellMesh {
    triangulation: Triangulation,
    dual: DualComplex,
    cells: Vec<MicroCell>,
    edges: Vec<MicroEdge>,
    /// Micro-edge index per cell, ordered as [`LocalEdge::ALL`].
    cell_edges: Vec<[usize; 4]>,
}

impl MicroCellMesh {
    /// Splits every triangle into its three micro-cells and records edge
    /// adjacency. Fails if any corner Jacobian is not positive.
    pub fn build(tri: &Triangulation, dual: &DualComplex) -> Result<Self> {
        let nt = tri.num_triangles();
        let ne = tri.num_edges();
        let mut cells = Vec::with_capacity(3 * nt);
        for t in 0..nt {
            for r in 0..3 {
                let geometry = CellGeometry::new(micro_cell_vertices(tri, t, r));
                for (xi, eta) in [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)] {
                    let j = geometry.jacobian(xi, eta);
                    if !(j > 0.0) {
                        return Err(Error::MeshQuality { triangle: t, jacobian: j });
                    }
                }
                cells.push(MicroCell {
                    geometry,
                    triangle: t,
                    local_vertex: r,
                    dual_cell: tri.triangles()[t][r],
                });
            }
        }

        // Half-edges: 2e at the lower vertex index, 2e+1 at the higher one.
        let mut edges: Vec<MicroEdge> = (0..2 * ne)
            .map(|k| {
                let e = k / 2;
                let boundary = tri.is_boundary_edge(e);
                MicroEdge {
                    class: if boundary { EdgeClass::Boundary } else { EdgeClass::DualInterior },
                    first: None,
                    second: None,
                    marker: if boundary { tri.edge_marker(e) } else { None },
                }
            })
            .collect();
        edges.extend((0..3 * nt).map(|_| MicroEdge {
            class: EdgeClass::PrimalInterior,
            first: None,
            second: None,
            marker: None,
        }));
        let half = |e: usize, v: usize| 2 * e + usize::from(tri.edges()[e][0] != v);
        let mut cell_edges = Vec::with_capacity(3 * nt);
        for t in 0..nt {
            let te = tri.triangle_edges(t);
            for r in 0..3 {
                let c = 3 * t + r;
                let v = tri.triangles()[t][r];
                let eta0 = half(te[r], v);
                let xi0 = half(te[(r + 2) % 3], v);
                let xi1 = 2 * ne + 3 * t + r;
                let eta1 = 2 * ne + 3 * t + (r + 2) % 3;
                edges[eta0].second = Some(EdgeSide { cell: c, local: LocalEdge::Eta0 });
                edges[xi0].first = Some(EdgeSide { cell: c, local: LocalEdge::Xi0 });
                edges[xi1].first = Some(EdgeSide { cell: c, local: LocalEdge::Xi1 });
                edges[eta1].second = Some(EdgeSide { cell: c, local: LocalEdge::Eta1 });
                cell_edges.push([eta0, xi1, eta1, xi0]);
            }
        }
        Ok(Self {
            triangulation: tri.clone(),
            dual: dual.clone(),
            cells,
            edges,
            cell_edges,
        })
    }

    /// Builds the dual complex and the micro-cells in one go.
    pub fn from_triangulation(tri: &Triangulation) -> Result<Self> {
        let dual = build_dual_complex(tri);
        Self::build(tri, &dual)
    }

    pub fn triangulation(&self) -> &Triangulation {
        &self.triangulation
    }

    pub fn dual(&self) -> &DualComplex {
        &self.dual
    }

    pub fn cells(&self) -> &[MicroCell] {
        &self.cells
    }

    pub fn cell(&self, c: usize) -> &MicroCell {
        &self.cells[c]
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn edges(&self) -> &[MicroEdge] {
        &self.edges
    }

    pub fn cell_edge(&self, c: usize, local: LocalEdge) -> usize {
        self.cell_edges[c][local.index()]
    }

    /// The edge seen from the other side, if any.
    pub fn neighbour(&self, c: usize, local: LocalEdge) -> Option<EdgeSide> {
        self.edges[self.cell_edge(c, local)].sides().find(|s| s.cell != c)
    }

    /// Micro-edges of a dual-cell fan in counter-clockwise order: edge `k`
    /// is the `eta = 0` edge of fan cell `k` and the `xi = 0` edge of fan
    /// cell `k - 1`. Closed fans have as many edges as cells, open fans one
    /// more.
    pub fn fan_edges(&self, dual_cell: usize) -> Vec<usize> {
        let fan = &self.dual.dual_cells[dual_cell];
        let mut out: Vec<usize> =
            fan.cells.iter().map(|&c| self.cell_edge(c, LocalEdge::Eta0)).collect();
        if !fan.closed {
            out.push(self.cell_edge(*fan.cells.last().unwrap(), LocalEdge::Xi0));
        }
        out
    }

    pub fn area(&self) -> f64 {
        self.cells.iter().map(|c| c.geometry.area()).sum()
    }

    /// Largest primal edge length.
    pub fn h(&self) -> f64 {
        self.triangulation.max_edge_length()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split_square() -> Triangulation {
        generate_structured_square(1, 1.0).unwrap()
    }

    #[test]
    fn structured_counts() {
        let t = split_square();
        assert_eq!(t.num_vertices(), 4);
        assert_eq!(t.num_triangles(), 2);
        assert_eq!(t.boundary_edges().len(), 4);
        let t = generate_structured_square(2, std::f64::consts::PI).unwrap();
        assert_eq!(t.num_vertices(), 9);
        assert_eq!(t.num_triangles(), 8);
        let t = generate_structured_square(4, 1.0).unwrap();
        assert!((t.area() - 1.0).abs() < 1e-14);
        assert!(t.boundary_edges().iter().all(|b| b.marker == 1));
        assert!(generate_structured_square(0, 1.0).is_err());
        assert!(generate_structured_square(3, 0.0).is_err());
        assert!(generate_structured_square(3, -1.0).is_err());
    }

    #[test]
    fn clockwise_triangle_is_reordered() {
        let text = "# one triangle\nVERTICES 3\n0 0\n0 1\n1 0\nTRIANGLES 1\n0 1 2\nBOUNDARY 0\n";
        let t = load_triangulation(text.as_bytes()).unwrap();
        assert!(t.triangle_area(0) > 0.0);
        assert_eq!(t.triangles()[0], [0, 2, 1]);
        assert_eq!(t.boundary_edges().len(), 3);
    }

    #[test]
    fn hanging_vertex_is_rejected() {
        // Vertex 4 sits on the midpoint of edge (1, 2) of the left triangle.
        let text = "VERTICES 5\n0 0\n1 0\n0 1\n1 1\n0.5 0.5\nTRIANGLES 3\n0 1 2\n1 3 4\n4 3 2\n";
        match load_triangulation(text.as_bytes()) {
            Err(Error::Topology(msg)) => assert!(msg.contains("hangs"), "{msg}"),
            other => panic!("expected topology error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_triangle_is_rejected() {
        let text = "VERTICES 3\n0 0\n1 0\n0 1\nTRIANGLES 2\n0 1 2\n1 2 0\n";
        assert!(matches!(load_triangulation(text.as_bytes()), Err(Error::Topology(_))));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "VERTICES 2\n0 0\n1 x\nTRIANGLES 0\n";
        match load_triangulation(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "VERTICES 3\n0 0\n1 0\n0 1\nTRIANGLES 1\n0 1 7\n";
        match load_triangulation(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            load_triangulation("VERTS 3\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn round_trip_preserves_connectivity() {
        let t = generate_structured_square(2, 1.0).unwrap();
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = load_triangulation(buf.as_slice()).unwrap();
        assert_eq!(t.triangles(), back.triangles());
        assert_eq!(t.edges(), back.edges());
        assert_eq!(t.boundary_edges(), back.boundary_edges());
        for (a, b) in t.vertices().iter().zip(back.vertices()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dual_complex_counts() {
        let t = split_square();
        let d = build_dual_complex(&t);
        // 4 vertices and 5 edges (4 sides plus the diagonal).
        assert_eq!(d.num_cells(), 4);
        assert_eq!(d.dual_edges.len(), 5);
        assert!((d.area() - 1.0).abs() < 1e-12);

        let single = Triangulation::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            vec![[0, 1, 2]],
            vec![],
        )
        .unwrap();
        let d = build_dual_complex(&single);
        assert_eq!(d.num_cells(), 3);
        assert!(d.dual_cells.iter().all(|c| c.cells.len() == 1 && !c.closed));
    }

    #[test]
    fn dual_edges_pass_through_midpoints() {
        let t = generate_structured_square(3, 2.0).unwrap();
        let d = build_dual_complex(&t);
        assert_eq!(d.dual_edges.len(), t.num_edges());
        for de in &d.dual_edges {
            let m = t.midpoint(de.primal_edge);
            assert!(de.points.iter().any(|p| (p - m).norm() == 0.0));
            let expected = if t.is_boundary_edge(de.primal_edge) { 2 } else { 3 };
            assert_eq!(de.points.len(), expected);
        }
    }

    #[test]
    fn micro_cells_structure() {
        let t = split_square();
        let m = MicroCellMesh::from_triangulation(&t).unwrap();
        assert_eq!(m.num_cells(), 6);
        let t = generate_structured_square(4, 1.0).unwrap();
        let m = MicroCellMesh::from_triangulation(&t).unwrap();
        for c in m.cells() {
            let area = c.geometry.area();
            assert!((area - t.triangle_area(c.triangle) / 3.0).abs() < 1e-12);
            assert_eq!(c.geometry.map(0.0, 0.0), t.vertices()[c.dual_cell]);
            assert_eq!(c.geometry.map(1.0, 1.0), t.centroid(c.triangle));
        }
        assert!((m.area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_classification_partitions_micro_edges() {
        let t = generate_structured_square(3, 1.0).unwrap();
        let m = MicroCellMesh::from_triangulation(&t).unwrap();
        let count = |class| m.edges().iter().filter(|e| e.class == class).count();
        let interior_primal = t.num_edges() - t.boundary_edges().len();
        assert_eq!(count(EdgeClass::DualInterior), 2 * interior_primal);
        assert_eq!(count(EdgeClass::PrimalInterior), 3 * t.num_triangles());
        assert_eq!(count(EdgeClass::Boundary), 2 * t.boundary_edges().len());
        for e in m.edges() {
            match e.class {
                EdgeClass::Boundary => assert_eq!(e.sides().count(), 1),
                _ => assert_eq!(e.sides().count(), 2),
            }
        }
    }

    #[test]
    fn shared_edges_match_parametrically() {
        let t = generate_structured_square(3, 1.5).unwrap();
        let m = MicroCellMesh::from_triangulation(&t).unwrap();
        for e in m.edges() {
            let sides: Vec<_> = e.sides().collect();
            if sides.len() != 2 {
                continue;
            }
            for s in [0.0, 0.3, 1.0] {
                let p = |side: EdgeSide| {
                    let (x, y) = side.local.point(s);
                    m.cell(side.cell).geometry.map(x, y)
                };
                assert!((p(sides[0]) - p(sides[1])).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn fans_are_counter_clockwise_and_complete() {
        let t = generate_structured_square(3, 1.0).unwrap();
        let m = MicroCellMesh::from_triangulation(&t).unwrap();
        let mut seen = vec![0; m.num_cells()];
        for (v, fan) in m.dual().dual_cells.iter().enumerate() {
            for &c in &fan.cells {
                assert_eq!(m.cell(c).dual_cell, v);
                seen[c] += 1;
            }
            for w in fan.cells.windows(2) {
                let next = m.neighbour(w[0], LocalEdge::Xi0).unwrap();
                assert_eq!(next.cell, w[1]);
            }
            let edges = m.fan_edges(v);
            assert_eq!(edges.len(), fan.cells.len() + usize::from(!fan.closed));
            if fan.closed {
                assert_eq!(fan.cells[0], *fan.cells.iter().min().unwrap());
            } else {
                assert!(m.neighbour(fan.cells[0], LocalEdge::Eta0).is_none());
            }
        }
        assert!(seen.iter().all(|&k| k == 1));
    }

    #[test]
    fn six_element_mesh() {
        let t = six_element_square();
        assert_eq!(t.num_triangles(), 6);
        assert!((t.area() - 1.0).abs() < 1e-15);
        let d = build_dual_complex(&t);
        assert!(d.dual_cells[6].closed);
        assert_eq!(d.dual_cells[6].cells.len(), 6);
    }
}
