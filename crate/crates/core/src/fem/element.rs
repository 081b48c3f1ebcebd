//! Per-triangle geometry and local shape functions.
//!
//! Velocity (one component) uses four local functions: the barycentric
//! coordinates `l0, l1, l2` and the cubic bubble `27 l0 l1 l2`. The current
//! density uses the lowest-order Raviart-Thomas functions
//! `psi_k = (x - X_k) / (2|K|)`, which carry unit outward flux through the
//! edge opposite vertex `k` and none through the other two.

use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub coords: [[f64; 2]; 3],
    pub area: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
    /// Orientation signs of the edges opposite each local vertex.
    pub edge_signs: [f64; 3],
    pub edges: [usize; 3],
}

impl Element {
    pub fn new(mesh: &Mesh, t: usize) -> Self {
        let coords = mesh.triangle_coords(t);
        let area = mesh.signed_area(t);
        let mut grad_lambda = [[0.0; 2]; 3];
        for (i, g) in grad_lambda.iter_mut().enumerate() {
            let p1 = coords[(i + 1) % 3];
            let p2 = coords[(i + 2) % 3];
            *g = [(p1[1] - p2[1]) / (2.0 * area), (p2[0] - p1[0]) / (2.0 * area)];
        }
        let refs = mesh.triangle_edges[t];
        Self {
            coords,
            area,
            grad_lambda,
            edge_signs: refs.map(|r| r.signf()),
            edges: refs.map(|r| r.edge),
        }
    }

    #[inline]
    pub fn point(&self, l: &[f64; 3]) -> [f64; 2] {
        let c = &self.coords;
        [
            l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
            l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
        ]
    }

    /// Values of the four scalar velocity shape functions.
    #[inline]
    pub fn velocity_values(&self, l: &[f64; 3]) -> [f64; 4] {
        [l[0], l[1], l[2], 27.0 * l[0] * l[1] * l[2]]
    }

    /// Gradients of the four scalar velocity shape functions.
    #[inline]
    pub fn velocity_gradients(&self, l: &[f64; 3]) -> [[f64; 2]; 4] {
        let g = &self.grad_lambda;
        let (b0, b1, b2) = (l[1] * l[2], l[0] * l[2], l[0] * l[1]);
        let bubble = [
            27.0 * (g[0][0] * b0 + g[1][0] * b1 + g[2][0] * b2),
            27.0 * (g[0][1] * b0 + g[1][1] * b1 + g[2][1] * b2),
        ];
        [g[0], g[1], g[2], bubble]
    }

    /// Global-orientation RT0 shape functions (sign already applied).
    #[inline]
    pub fn rt0_values(&self, l: &[f64; 3]) -> [[f64; 2]; 3] {
        let x = self.point(l);
        let inv = 1.0 / (2.0 * self.area);
        let mut out = [[0.0; 2]; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let s = self.edge_signs[k] * inv;
            *o = [s * (x[0] - self.coords[k][0]), s * (x[1] - self.coords[k][1])];
        }
        out
    }

    /// Elementwise-constant divergence of the global-orientation RT0 functions.
    #[inline]
    pub fn rt0_divergence(&self) -> [f64; 3] {
        self.edge_signs.map(|s| s / self.area)
    }
}
