//! Interpolation, boundary data and essential conditions.
//!
//! Essential conditions are imposed by symmetric elimination: the rows and
//! columns of the constrained dofs become identity and the removed columns,
//! multiplied by the prescribed values, move to the right-hand side.

use super::{edge_gauss3, DofLayout};
use crate::linsolve::{eliminate_dofs, SparseMatrix};
use crate::mesh::Mesh;

/// Prescribed values for a sorted list of dofs.
#[derive(Debug, Clone, PartialEq)]
pub struct EssentialCondition {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl EssentialCondition {
    pub fn homogeneous(dofs: &[usize]) -> Self {
        Self {
            dofs: dofs.to_vec(),
            values: vec![0.0; dofs.len()],
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Eliminates the constrained dofs from the square system `A x = b`.
    pub fn apply(&self, matrix: &SparseMatrix, rhs: &[f64]) -> (SparseMatrix, Vec<f64>) {
        let (constrained, lift) = eliminate_dofs(matrix, &self.dofs);
        let mut g = vec![0.0; matrix.n_cols()];
        for (&d, &v) in self.dofs.iter().zip(&self.values) {
            g[d] = v;
        }
        let lifted = lift.mul_vec(&g);
        let mut b: Vec<f64> = rhs.iter().zip(&lifted).map(|(r, l)| r - l).collect();
        for (&d, &v) in self.dofs.iter().zip(&self.values) {
            b[d] = v;
        }
        (constrained, b)
    }
}

/// Vertex interpolation of a vector field; bubble coefficients are zero.
pub fn interpolate_velocity<F>(mesh: &Mesh, layout: &DofLayout, f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    let mut u = vec![0.0; layout.n_velocity];
    for (v, p) in mesh.vertices.iter().enumerate() {
        let val = f(p[0], p[1]);
        u[layout.velocity_vertex_dof(0, v)] = val[0];
        u[layout.velocity_vertex_dof(1, v)] = val[1];
    }
    u
}

/// RT0 interpolation: each dof is the flux `∫_e f·n_e` along the global edge normal.
pub fn interpolate_current<F>(mesh: &Mesh, layout: &DofLayout, f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    debug_assert_eq!(layout.n_current, mesh.n_edges());
    (0..mesh.n_edges())
        .map(|e| {
            let n = mesh.edge_normal(e);
            edge_integral(mesh, e, |x, y| {
                let v = f(x, y);
                v[0] * n[0] + v[1] * n[1]
            })
        })
        .collect()
}

/// Three-point Gauss integral of `f` along edge `e`.
fn edge_integral<F>(mesh: &Mesh, e: usize, f: F) -> f64
where
    F: Fn(f64, f64) -> f64,
{
    let [a, b] = mesh.edges[e];
    let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
    let len = mesh.edge_length(e);
    edge_gauss3()
        .iter()
        .map(|&(s, w)| {
            let x = pa[0] + s * (pb[0] - pa[0]);
            let y = pa[1] + s * (pb[1] - pa[1]);
            w * len * f(x, y)
        })
        .sum()
}

/// Values of `g` at the boundary velocity dofs, in the order of
/// [`DofLayout::boundary_velocity_dofs`].
pub fn velocity_boundary_values<F>(mesh: &Mesh, layout: &DofLayout, g: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    let per_component = layout.n_vertices + layout.n_triangles;
    layout
        .boundary_velocity_dofs
        .iter()
        .map(|&d| {
            let (c, v) = (d / per_component, d % per_component);
            let p = mesh.vertices[v];
            g(p[0], p[1])[c]
        })
        .collect()
}

/// Boundary current dofs from the outward normal density `jb(x, y, n_out)`,
/// in the order of [`DofLayout::boundary_current_dofs`].
pub fn current_boundary_fluxes<F>(mesh: &Mesh, layout: &DofLayout, jb: F) -> Vec<f64>
where
    F: Fn(f64, f64, [f64; 2]) -> f64,
{
    let normals = mesh.boundary_edge_normals();
    debug_assert!(normals.iter().map(|p| p.0).eq(layout.boundary_current_dofs.iter().copied()));
    normals
        .iter()
        .map(|&(e, n_out)| {
            let n = mesh.edge_normal(e);
            let orient = n[0] * n_out[0] + n[1] * n_out[1];
            orient * edge_integral(mesh, e, |x, y| jb(x, y, n_out))
        })
        .collect()
}

/// `½ ∮ (g·n) |g|²`, the energy carried through the boundary by the data `g`.
pub fn boundary_energy_flux<F>(mesh: &Mesh, g: F) -> f64
where
    F: Fn(f64, f64) -> [f64; 2],
{
    0.5 * mesh
        .boundary_edge_normals()
        .iter()
        .map(|&(e, n)| {
            edge_integral(mesh, e, |x, y| {
                let v = g(x, y);
                (v[0] * n[0] + v[1] * n[1]) * (v[0] * v[0] + v[1] * v[1])
            })
        })
        .sum::<f64>()
}

/// Dirichlet condition on the boundary vertex dofs of both components.
/// Bubble dofs are interior and never constrained.
pub fn apply_velocity_dirichlet<F>(mesh: &Mesh, layout: &DofLayout, g: F) -> EssentialCondition
where
    F: Fn(f64, f64) -> [f64; 2],
{
    EssentialCondition {
        dofs: layout.boundary_velocity_dofs.clone(),
        values: velocity_boundary_values(mesh, layout, g),
    }
}

/// Normal-trace condition on the boundary edge dofs.
pub fn apply_current_normal_trace<F>(mesh: &Mesh, layout: &DofLayout, jb: F) -> EssentialCondition
where
    F: Fn(f64, f64, [f64; 2]) -> f64,
{
    EssentialCondition {
        dofs: layout.boundary_current_dofs.clone(),
        values: current_boundary_fluxes(mesh, layout, jb),
    }
}
