//! Bilinear-form matrices. All of them are time independent and assembled once.

use super::{DofLayout, Element, QuadratureRule, Space};
use crate::linsolve::{SparseMatrix, Triplets};
use crate::mesh::Mesh;

/// Scalar 4x4 block of `∫ f(phi_a, phi_b)` for the velocity shape functions,
/// scattered into both components.
fn assemble_velocity_block<F>(mesh: &Mesh, layout: &DofLayout, mut local: F) -> SparseMatrix
where
    F: FnMut(&Element, &QuadratureRule) -> [[f64; 4]; 4],
{
    let rule = QuadratureRule::degree6();
    let nt = mesh.n_triangles();
    let mut t = Triplets::with_capacity(layout.n_velocity, layout.n_velocity, 32 * nt);
    for tri in 0..nt {
        let el = Element::new(mesh, tri);
        let block = local(&el, &rule);
        for c in 0..2 {
            let dofs = layout.local_velocity_dofs(mesh, tri, c);
            for (a, &da) in dofs.iter().enumerate() {
                for (b, &db) in dofs.iter().enumerate() {
                    t.push(da, db, block[a][b]);
                }
            }
        }
    }
    t.build()
}

/// Velocity mass matrix `∫ u·v`.
pub fn assemble_velocity_mass(mesh: &Mesh, layout: &DofLayout) -> SparseMatrix {
    assemble_velocity_block(mesh, layout, |el, rule| {
        let mut m = [[0.0; 4]; 4];
        for (l, w) in rule.iter() {
            let phi = el.velocity_values(l);
            let jw = 2.0 * el.area * w;
            for a in 0..4 {
                for b in 0..4 {
                    m[a][b] += jw * phi[a] * phi[b];
                }
            }
        }
        m
    })
}

/// Velocity stiffness matrix `∫ ∇u : ∇v`, without the viscosity factor.
pub fn assemble_velocity_stiffness(mesh: &Mesh, layout: &DofLayout) -> SparseMatrix {
    assemble_velocity_block(mesh, layout, |el, rule| {
        let mut m = [[0.0; 4]; 4];
        for (l, w) in rule.iter() {
            let g = el.velocity_gradients(l);
            let jw = 2.0 * el.area * w;
            for a in 0..4 {
                for b in 0..4 {
                    m[a][b] += jw * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        m
    })
}

/// `B[r, v] = ∫ r ∇·v` with pressure rows and velocity columns.
pub fn assemble_velocity_pressure_div(mesh: &Mesh, layout: &DofLayout) -> SparseMatrix {
    let rule = QuadratureRule::degree6();
    let nt = mesh.n_triangles();
    let mut t = Triplets::with_capacity(layout.n_pressure, layout.n_velocity, 24 * nt);
    for tri in 0..nt {
        let el = Element::new(mesh, tri);
        // local[i][c][a] = ∫ λ_i ∂_c phi_a
        let mut local = [[[0.0; 4]; 2]; 3];
        for (l, w) in rule.iter() {
            let g = el.velocity_gradients(l);
            let jw = 2.0 * el.area * w;
            for i in 0..3 {
                for c in 0..2 {
                    for a in 0..4 {
                        local[i][c][a] += jw * l[i] * g[a][c];
                    }
                }
            }
        }
        let verts = mesh.triangles[tri];
        for c in 0..2 {
            let dofs = layout.local_velocity_dofs(mesh, tri, c);
            for (i, &r) in verts.iter().enumerate() {
                for (a, &d) in dofs.iter().enumerate() {
                    t.push(r, d, local[i][c][a]);
                }
            }
        }
    }
    t.build()
}

/// RT0 mass matrix `∫ J·K`.
pub fn assemble_rt0_mass(mesh: &Mesh, layout: &DofLayout) -> SparseMatrix {
    let rule = QuadratureRule::degree6();
    let nt = mesh.n_triangles();
    let mut t = Triplets::with_capacity(layout.n_current, layout.n_current, 9 * nt);
    for tri in 0..nt {
        let el = Element::new(mesh, tri);
        let mut m = [[0.0; 3]; 3];
        for (l, w) in rule.iter() {
            let psi = el.rt0_values(l);
            let jw = 2.0 * el.area * w;
            for a in 0..3 {
                for b in 0..3 {
                    m[a][b] += jw * (psi[a][0] * psi[b][0] + psi[a][1] * psi[b][1]);
                }
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                t.push(el.edges[a], el.edges[b], m[a][b]);
            }
        }
    }
    t.build()
}

/// `D[K, e] = ∫_K ∇·psi_e`, which is the orientation sign of `e` in `K`.
pub fn assemble_rt0_div(mesh: &Mesh, layout: &DofLayout) -> SparseMatrix {
    let nt = mesh.n_triangles();
    let mut t = Triplets::with_capacity(layout.n_potential, layout.n_current, 3 * nt);
    for (tri, refs) in mesh.triangle_edges.iter().enumerate() {
        for r in refs {
            t.push(tri, r.edge, r.signf());
        }
    }
    t.build()
}

/// Weights `w` with `w·c = ∫ field` for pressure or potential coefficients `c`.
///
/// # Panics
/// For the velocity and current spaces, which carry no mean constraint.
pub fn zero_mean_constraint(mesh: &Mesh, layout: &DofLayout, space: Space) -> Vec<f64> {
    match space {
        Space::Pressure => {
            let mut w = vec![0.0; layout.n_pressure];
            for tri in 0..mesh.n_triangles() {
                let third = mesh.signed_area(tri) / 3.0;
                for &v in &mesh.triangles[tri] {
                    w[v] += third;
                }
            }
            w
        }
        Space::Potential => (0..mesh.n_triangles()).map(|t| mesh.signed_area(t)).collect(),
        other => panic!("no mean constraint for the {other:?} space"),
    }
}
