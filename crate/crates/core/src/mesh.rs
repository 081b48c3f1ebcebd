//! Structured triangulations of the unit square.
//!
//! Vertices sit on a uniform `(n+1) x (n+1)` grid, numbered row by row from the
//! origin. Every grid cell is split along its lower-left to upper-right
//! diagonal. Edges are stored as `(low, high)` vertex pairs, and each triangle
//! records, for the edge opposite each of its local vertices, whether its
//! counter-clockwise traversal runs from the low to the high endpoint. That
//! sign is what makes the Raviart-Thomas flux degrees of freedom single valued.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};

/// A triangle's view of one of its edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeRef {
    /// Global edge index.
    pub edge: usize,
    /// `+1` iff the counter-clockwise traversal goes low -> high, `-1` otherwise.
    pub sign: i8,
}

impl EdgeRef {
    #[inline]
    pub fn signf(self) -> f64 {
        f64::from(self.sign)
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    /// Cells per side; the mesh size is `h = 1 / n_subdiv`.
    pub n_subdiv: usize,
    pub vertices: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// `(low, high)` vertex pairs.
    pub edges: Vec<[usize; 2]>,
    /// Entry `k` is the edge opposite local vertex `k`, i.e. the edge
    /// `(v[k+1], v[k+2])` in counter-clockwise order.
    pub triangle_edges: Vec<[EdgeRef; 3]>,
    pub boundary_vertex: Vec<bool>,
    pub boundary_edge: Vec<bool>,
}

/// Builds the structured mesh of the unit square with `n_subdiv` cells per side.
pub fn build_unit_square_mesh(n_subdiv: usize) -> Result<Mesh> {
    if n_subdiv == 0 {
        return Err(Error::InvalidMesh("n_subdiv must be at least 1".into()));
    }
    let n = n_subdiv;
    let stride = n + 1;
    let h = 1.0 / n as f64;

    let mut vertices = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            // exact grid coordinates at the far boundary
            let x = if i == n { 1.0 } else { i as f64 * h };
            let y = if j == n { 1.0 } else { j as f64 * h };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let v00 = j * stride + i;
            let v10 = v00 + 1;
            let v01 = v00 + stride;
            let v11 = v01 + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }

    let (edges, triangle_edges) = number_edges(&triangles);

    let mut adjacency = vec![0usize; edges.len()];
    for te in &triangle_edges {
        for r in te {
            adjacency[r.edge] += 1;
        }
    }
    let boundary_edge: Vec<bool> = adjacency.iter().map(|&c| c == 1).collect();
    let mut boundary_vertex = vec![false; vertices.len()];
    for (e, &[a, b]) in edges.iter().enumerate() {
        if boundary_edge[e] {
            boundary_vertex[a] = true;
            boundary_vertex[b] = true;
        }
    }

    Ok(Mesh {
        n_subdiv,
        vertices,
        triangles,
        edges,
        triangle_edges,
        boundary_vertex,
        boundary_edge,
    })
}

fn number_edges(triangles: &[[usize; 3]]) -> (Vec<[usize; 2]>, Vec<[EdgeRef; 3]>) {
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::with_capacity(triangles.len() * 2);
    let mut edges = Vec::new();
    let mut triangle_edges = Vec::with_capacity(triangles.len());
    for tri in triangles {
        let mut refs = [EdgeRef { edge: 0, sign: 1 }; 3];
        for (k, r) in refs.iter_mut().enumerate() {
            let a = tri[(k + 1) % 3];
            let b = tri[(k + 2) % 3];
            let key = (a.min(b), a.max(b));
            let edge = *lookup.entry(key).or_insert_with(|| {
                edges.push([key.0, key.1]);
                edges.len() - 1
            });
            *r = EdgeRef {
                edge,
                sign: if a < b { 1 } else { -1 },
            };
        }
        triangle_edges.push(refs);
    }
    (edges, triangle_edges)
}

impl Mesh {
    pub fn h(&self) -> f64 {
        1.0 / self.n_subdiv as f64
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Signed area; positive for counter-clockwise triangles.
    pub fn signed_area(&self, t: usize) -> f64 {
        let [p0, p1, p2] = self.triangle_coords(t);
        0.5 * ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        (pb[0] - pa[0]).hypot(pb[1] - pa[1])
    }

    pub fn edge_midpoint(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    /// Unit normal attached to edge `e`: the low -> high tangent rotated clockwise.
    /// It is the outward normal of every triangle whose orientation sign is `+1`.
    pub fn edge_normal(&self, e: usize) -> [f64; 2] {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let (tx, ty) = (pb[0] - pa[0], pb[1] - pa[1]);
        let len = tx.hypot(ty);
        [ty / len, -tx / len]
    }

    /// Triangles adjacent to each edge.
    pub fn edge_triangles(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::with_capacity(2); self.edges.len()];
        for (t, refs) in self.triangle_edges.iter().enumerate() {
            for r in refs {
                if r.edge < adj.len() {
                    adj[r.edge].push(t);
                }
            }
        }
        adj
    }

    /// Outward unit normal of a boundary edge of the unit square.
    pub fn boundary_outward_normal(&self, e: usize) -> [f64; 2] {
        let adj = self.edge_triangles();
        let t = adj[e][0];
        let sign = self.triangle_edges[t]
            .iter()
            .find(|r| r.edge == e)
            .map(|r| r.signf())
            .unwrap_or(1.0);
        let n = self.edge_normal(e);
        [sign * n[0], sign * n[1]]
    }

    /// Every boundary edge paired with its outward unit normal, in edge order.
    pub fn boundary_edge_normals(&self) -> Vec<(usize, [f64; 2])> {
        let mut sign = vec![0.0; self.edges.len()];
        for refs in &self.triangle_edges {
            for r in refs {
                if self.boundary_edge[r.edge] {
                    sign[r.edge] = r.signf();
                }
            }
        }
        (0..self.edges.len())
            .filter(|&e| self.boundary_edge[e])
            .map(|e| {
                let n = self.edge_normal(e);
                (e, [sign[e] * n[0], sign[e] * n[1]])
            })
            .collect()
    }

    /// Locates the triangle containing `(x, y)` and its barycentric coordinates.
    /// Points outside the unit square are clamped onto it.
    pub fn locate(&self, x: f64, y: f64) -> (usize, [f64; 3]) {
        let n = self.n_subdiv;
        let x = x.clamp(0.0, 1.0);
        let y = y.clamp(0.0, 1.0);
        let i = ((x * n as f64).floor() as usize).min(n - 1);
        let j = ((y * n as f64).floor() as usize).min(n - 1);
        let h = self.h();
        let (lx, ly) = (x / h - i as f64, y / h - j as f64);
        let cell = j * n + i;
        // lower triangle (v00, v10, v11) holds points below the diagonal
        if lx >= ly {
            (2 * cell, [1.0 - lx, lx - ly, ly])
        } else {
            (2 * cell + 1, [1.0 - ly, lx, ly - lx])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    IndexOutOfRange,
    NegativeArea,
    EdgeOrder,
    EdgeIncidence,
    Orientation,
    EdgeAdjacency,
    BoundaryFlag,
    Euler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshViolation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for MeshViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

fn violation(kind: ViolationKind, message: String) -> MeshViolation {
    MeshViolation { kind, message }
}

/// Checks every structural invariant of `mesh`; an empty list means the mesh is valid.
pub fn validate_mesh(mesh: &Mesh) -> Vec<MeshViolation> {
    use ViolationKind::*;
    let mut out = Vec::new();
    let nv = mesh.vertices.len();

    if mesh.triangle_edges.len() != mesh.triangles.len() {
        out.push(violation(
            IndexOutOfRange,
            format!(
                "{} triangles but {} triangle-edge records",
                mesh.triangles.len(),
                mesh.triangle_edges.len()
            ),
        ));
        return out;
    }

    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.iter().any(|&v| v >= nv) {
            out.push(violation(IndexOutOfRange, format!("triangle {t} references a missing vertex")));
            continue;
        }
        let area = mesh.signed_area(t);
        if area <= 0.0 {
            out.push(violation(NegativeArea, format!("triangle {t} has negative area {area:.3e}")));
        }
        for (k, r) in mesh.triangle_edges[t].iter().enumerate() {
            let a = tri[(k + 1) % 3];
            let b = tri[(k + 2) % 3];
            if r.edge >= mesh.edges.len() {
                out.push(violation(IndexOutOfRange, format!("triangle {t} local edge {k} references a missing edge")));
                continue;
            }
            if mesh.edges[r.edge] != [a.min(b), a.max(b)] {
                out.push(violation(
                    EdgeIncidence,
                    format!("triangle {t} local edge {k} is not edge {}", r.edge),
                ));
            }
            let expected = if a < b { 1 } else { -1 };
            if r.sign != expected {
                out.push(violation(
                    Orientation,
                    format!("triangle {t} local edge {k} has sign {} but traverses {a}->{b}", r.sign),
                ));
            }
        }
    }

    for (e, &[a, b]) in mesh.edges.iter().enumerate() {
        if a >= nv || b >= nv {
            out.push(violation(IndexOutOfRange, format!("edge {e} references a missing vertex")));
        } else if a >= b {
            out.push(violation(EdgeOrder, format!("edge {e} is stored as ({a}, {b}), not (low, high)")));
        }
    }

    let adjacency = mesh.edge_triangles();
    let mut adjacency_ok = true;
    for (e, tris) in adjacency.iter().enumerate() {
        match tris.len() {
            1 | 2 => {
                let is_boundary = tris.len() == 1;
                if mesh.boundary_edge.get(e) != Some(&is_boundary) {
                    out.push(violation(BoundaryFlag, format!("edge {e} boundary flag disagrees with adjacency")));
                }
            }
            c => {
                adjacency_ok = false;
                out.push(violation(EdgeAdjacency, format!("edge {e} is shared by {c} triangles")));
            }
        }
    }

    let mut on_boundary = vec![false; nv];
    for (e, &[a, b]) in mesh.edges.iter().enumerate() {
        if adjacency[e].len() == 1 && a < nv && b < nv {
            on_boundary[a] = true;
            on_boundary[b] = true;
        }
    }
    for (v, &flag) in on_boundary.iter().enumerate() {
        if mesh.boundary_vertex.get(v) != Some(&flag) {
            out.push(violation(BoundaryFlag, format!("vertex {v} boundary flag disagrees with boundary edges")));
        }
    }

    // Euler's relation only makes sense once every edge is properly shared.
    if adjacency_ok {
        let chi = nv as i64 - mesh.edges.len() as i64 + mesh.triangles.len() as i64;
        if chi != 1 {
            out.push(violation(Euler, format!("V - E + T = {chi}, expected 1")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_mesh_counts() {
        let m = build_unit_square_mesh(1).unwrap();
        assert_eq!((m.n_vertices(), m.n_edges(), m.n_triangles()), (4, 5, 2));
        assert!(validate_mesh(&m).is_empty());
    }

    #[test]
    fn two_by_two_counts() {
        // 6 horizontal + 6 vertical grid edges, plus 4 diagonals
        let m = build_unit_square_mesh(2).unwrap();
        assert_eq!((m.n_vertices(), m.n_edges(), m.n_triangles()), (9, 16, 8));
    }

    #[test]
    fn accuracy_mesh_has_72_triangles() {
        let m = build_unit_square_mesh(6).unwrap();
        assert_eq!(m.n_triangles(), 72);
        assert!((m.h() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(build_unit_square_mesh(0), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn clockwise_triangle_is_reported() {
        let mut m = build_unit_square_mesh(2).unwrap();
        m.triangles[3].swap(1, 2);
        let v = validate_mesh(&m);
        let negative: Vec<_> = v.iter().filter(|v| v.kind == ViolationKind::NegativeArea).collect();
        assert_eq!(negative.len(), 1);
        assert!(negative[0].message.contains("triangle 3"));
    }

    #[test]
    fn dangling_edge_is_reported() {
        let mut m = build_unit_square_mesh(2).unwrap();
        m.edges.push([0, 8]);
        m.boundary_edge.push(false);
        let v = validate_mesh(&m);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].kind, ViolationKind::EdgeAdjacency);
        assert!(v[0].message.contains("edge 16"));
    }

    #[test]
    fn locate_recovers_vertices() {
        let m = build_unit_square_mesh(4).unwrap();
        for &(x, y) in &[(0.1, 0.05), (0.3, 0.7), (0.99, 0.01), (0.5, 0.5), (1.0, 1.0)] {
            let (t, l) = m.locate(x, y);
            let p = m.triangle_coords(t);
            let rx = l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0];
            let ry = l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1];
            assert!((rx - x).abs() < 1e-14 && (ry - y).abs() < 1e-14);
            assert!(l.iter().all(|&c| c >= -1e-14));
        }
    }

    #[test]
    fn outward_normals_point_out() {
        let m = build_unit_square_mesh(3).unwrap();
        for e in (0..m.n_edges()).filter(|&e| m.boundary_edge[e]) {
            let n = m.boundary_outward_normal(e);
            let c = m.edge_midpoint(e);
            assert!(n[0] * (c[0] - 0.5) + n[1] * (c[1] - 0.5) > 0.0);
        }
    }
}
