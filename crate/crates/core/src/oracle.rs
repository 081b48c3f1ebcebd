//! Dense reference computations used to cross-check the sparse code paths.
//!
//! Nothing here shares code with the production assembly beyond the mesh and
//! the quadrature table. Bilinear forms are integrated exactly by expanding
//! every integrand as a polynomial in barycentric coordinates and using
//!
//! ```text
//! ∫_K l0^a l1^b l2^c = 2|K| a! b! c! / (a + b + c + 2)!
//! ```
//!
//! Right-hand-side vectors are rebuilt element by element at physical
//! quadrature points, with barycentric coordinates recovered from a dense
//! inverse of the affine map. Saddle solves impose essential conditions by row
//! replacement, a different route from the symmetric elimination used in
//! [`crate::linsolve`]. Intended for meshes with a few dozen triangles.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::fem::{DofLayout, QuadratureRule};
use crate::mesh::Mesh;

/// Polynomial in barycentric coordinates: `sum coef * l0^a l1^b l2^c`.
#[derive(Debug, Clone, Default)]
struct Poly(Vec<(f64, [u32; 3])>);

impl Poly {
    fn monomial(coef: f64, pow: [u32; 3]) -> Self {
        Poly(vec![(coef, pow)])
    }

    fn lambda(i: usize) -> Self {
        let mut p = [0; 3];
        p[i] = 1;
        Self::monomial(1.0, p)
    }

    fn constant(c: f64) -> Self {
        Self::monomial(c, [0; 3])
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut terms = self.0.clone();
        terms.extend_from_slice(&other.0);
        Poly(terms)
    }

    fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|&(c, p)| (s * c, p)).collect())
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut terms = Vec::with_capacity(self.0.len() * other.0.len());
        for &(c1, p1) in &self.0 {
            for &(c2, p2) in &other.0 {
                terms.push((c1 * c2, [p1[0] + p2[0], p1[1] + p2[1], p1[2] + p2[2]]));
            }
        }
        Poly(terms)
    }

    /// Gradient in physical coordinates given the barycentric gradients.
    fn grad(&self, gl: &[[f64; 2]; 3]) -> [Poly; 2] {
        let mut out = [Poly::default(), Poly::default()];
        for &(c, p) in &self.0 {
            for i in 0..3 {
                if p[i] == 0 {
                    continue;
                }
                let mut q = p;
                q[i] -= 1;
                let d = c * f64::from(p[i]);
                out[0].0.push((d * gl[i][0], q));
                out[1].0.push((d * gl[i][1], q));
            }
        }
        out
    }

    fn integrate(&self, area: f64) -> f64 {
        self.0
            .iter()
            .map(|&(c, [a, b, d])| c * 2.0 * area * factorial(a) * factorial(b) * factorial(d) / factorial(a + b + d + 2))
            .sum()
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Affine data of one triangle, derived independently of [`crate::fem::Element`].
struct Geometry {
    coords: [[f64; 2]; 3],
    area: f64,
    grad_lambda: [[f64; 2]; 3],
    /// Maps `(x, y, 1)` to barycentric coordinates.
    inverse: Matrix3<f64>,
}

impl Geometry {
    fn new(mesh: &Mesh, t: usize) -> Self {
        let coords = mesh.triangles[t].map(|v| mesh.vertices[v]);
        // columns are (x_i, y_i, 1): the matrix maps barycentric to physical
        let forward = Matrix3::new(
            coords[0][0], coords[1][0], coords[2][0],
            coords[0][1], coords[1][1], coords[2][1],
            1.0, 1.0, 1.0,
        );
        let area = 0.5 * forward.determinant();
        let inverse = forward.try_inverse().expect("degenerate triangle");
        let grad_lambda = [0, 1, 2].map(|i| [inverse[(i, 0)], inverse[(i, 1)]]);
        Self {
            coords,
            area,
            grad_lambda,
            inverse,
        }
    }

    fn barycentric(&self, x: f64, y: f64) -> [f64; 3] {
        let l = self.inverse * nalgebra::Vector3::new(x, y, 1.0);
        [l[0], l[1], l[2]]
    }

    fn physical(&self, l: &[f64; 3]) -> [f64; 2] {
        let c = &self.coords;
        [
            (0..3).map(|i| l[i] * c[i][0]).sum(),
            (0..3).map(|i| l[i] * c[i][1]).sum(),
        ]
    }
}

fn velocity_shapes() -> [Poly; 4] {
    let bubble = Poly::monomial(27.0, [1, 1, 1]);
    [Poly::lambda(0), Poly::lambda(1), Poly::lambda(2), bubble]
}

/// Edge indices and signs of a triangle, recovered from the vertex numbers.
fn edge_signs(mesh: &Mesh, lookup: &HashMap<[usize; 2], usize>, t: usize) -> [(usize, f64); 3] {
    let v = mesh.triangles[t];
    [0, 1, 2].map(|k| {
        let (a, b) = (v[(k + 1) % 3], v[(k + 2) % 3]);
        let key = [a.min(b), a.max(b)];
        let e = *lookup.get(&key).expect("triangle edge missing from edge list");
        (e, if a < b { 1.0 } else { -1.0 })
    })
}

fn edge_lookup(mesh: &Mesh) -> HashMap<[usize; 2], usize> {
    mesh.edges.iter().enumerate().map(|(e, &p)| (p, e)).collect()
}

/// RT0 shape functions as polynomial vectors, with orientation signs applied.
fn rt0_shapes(g: &Geometry, signs: &[(usize, f64); 3]) -> [[Poly; 2]; 3] {
    [0, 1, 2].map(|k| {
        let s = signs[k].1 / (2.0 * g.area);
        [0, 1].map(|c| {
            (0..3).fold(Poly::default(), |acc, j| {
                acc.add(&Poly::lambda(j).scale(s * (g.coords[j][c] - g.coords[k][c])))
            })
        })
    })
}

fn velocity_dof(layout: &DofLayout, mesh: &Mesh, t: usize, c: usize, a: usize) -> usize {
    let off = c * layout.n_velocity / 2;
    if a < 3 {
        off + mesh.triangles[t][a]
    } else {
        off + mesh.n_vertices() + t
    }
}

/// Dense, exactly integrated versions of every assembled matrix.
#[derive(Debug, Clone)]
pub struct DenseOperators {
    pub velocity_mass: DMatrix<f64>,
    pub velocity_stiffness: DMatrix<f64>,
    pub velocity_pressure_div: DMatrix<f64>,
    pub rt0_mass: DMatrix<f64>,
    pub rt0_div: DMatrix<f64>,
    pub pressure_weights: DVector<f64>,
    pub potential_weights: DVector<f64>,
}

impl DenseOperators {
    pub fn assemble(mesh: &Mesh, layout: &DofLayout) -> Self {
        let nu = layout.n_velocity;
        let mut mass = DMatrix::zeros(nu, nu);
        let mut stiff = DMatrix::zeros(nu, nu);
        let mut bdiv = DMatrix::zeros(layout.n_pressure, nu);
        let mut jmass = DMatrix::zeros(layout.n_current, layout.n_current);
        let mut jdiv = DMatrix::zeros(layout.n_potential, layout.n_current);
        let mut pw = DVector::zeros(layout.n_pressure);
        let mut qw = DVector::zeros(layout.n_potential);
        let lookup = edge_lookup(mesh);
        let shapes = velocity_shapes();
        for t in 0..mesh.n_triangles() {
            let g = Geometry::new(mesh, t);
            let grads: Vec<[Poly; 2]> = shapes.iter().map(|p| p.grad(&g.grad_lambda)).collect();
            for c in 0..2 {
                for a in 0..4 {
                    let da = velocity_dof(layout, mesh, t, c, a);
                    for b in 0..4 {
                        let db = velocity_dof(layout, mesh, t, c, b);
                        mass[(da, db)] += shapes[a].mul(&shapes[b]).integrate(g.area);
                        let gg = grads[a][0].mul(&grads[b][0]).add(&grads[a][1].mul(&grads[b][1]));
                        stiff[(da, db)] += gg.integrate(g.area);
                    }
                    for i in 0..3 {
                        let r = mesh.triangles[t][i];
                        bdiv[(r, da)] += Poly::lambda(i).mul(&grads[a][c]).integrate(g.area);
                    }
                }
            }
            let signs = edge_signs(mesh, &lookup, t);
            let psi = rt0_shapes(&g, &signs);
            for a in 0..3 {
                for b in 0..3 {
                    let dot = psi[a][0].mul(&psi[b][0]).add(&psi[a][1].mul(&psi[b][1]));
                    jmass[(signs[a].0, signs[b].0)] += dot.integrate(g.area);
                }
                // divergence of psi is the constant ∂x psi_x + ∂y psi_y
                let gx = psi[a][0].grad(&g.grad_lambda);
                let gy = psi[a][1].grad(&g.grad_lambda);
                jdiv[(t, signs[a].0)] += gx[0].add(&gy[1]).integrate(g.area);
            }
            for i in 0..3 {
                pw[mesh.triangles[t][i]] += Poly::lambda(i).integrate(g.area);
            }
            qw[t] += Poly::constant(1.0).integrate(g.area);
        }
        Self {
            velocity_mass: mass,
            velocity_stiffness: stiff,
            velocity_pressure_div: bdiv,
            rt0_mass: jmass,
            rt0_div: jdiv,
            pressure_weights: pw,
            potential_weights: qw,
        }
    }
}

/// Local field values at a physical point, from dense global coefficient lookups.
struct PointEval {
    vel_phi: [f64; 4],
    vel_grad: [[f64; 2]; 4],
    rt0: [[f64; 2]; 3],
}

fn point_eval(g: &Geometry, signs: &[(usize, f64); 3], x: [f64; 2]) -> PointEval {
    let l = g.barycentric(x[0], x[1]);
    let gl = &g.grad_lambda;
    let bubble_grad = [0, 1].map(|c| 27.0 * (gl[0][c] * l[1] * l[2] + gl[1][c] * l[0] * l[2] + gl[2][c] * l[0] * l[1]));
    let rt0 = [0, 1, 2].map(|k| {
        let s = signs[k].1 / (2.0 * g.area);
        [s * (x[0] - g.coords[k][0]), s * (x[1] - g.coords[k][1])]
    });
    PointEval {
        vel_phi: [l[0], l[1], l[2], 27.0 * l[0] * l[1] * l[2]],
        vel_grad: [gl[0], gl[1], gl[2], bubble_grad],
        rt0,
    }
}

/// Visits every quadrature point of every triangle with its physical weight.
fn for_each_point<F>(mesh: &Mesh, mut f: F)
where
    F: FnMut(usize, &Geometry, &[(usize, f64); 3], [f64; 2], f64, &PointEval),
{
    let rule = QuadratureRule::degree6();
    let lookup = edge_lookup(mesh);
    for t in 0..mesh.n_triangles() {
        let g = Geometry::new(mesh, t);
        let signs = edge_signs(mesh, &lookup, t);
        for (l, w) in rule.iter() {
            let x = g.physical(l);
            let pe = point_eval(&g, &signs, x);
            f(t, &g, &signs, x, 2.0 * g.area * w, &pe);
        }
    }
}

fn velocity_value(layout: &DofLayout, mesh: &Mesh, t: usize, u: &[f64], pe: &PointEval) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut v = [0.0; 2];
    let mut gr = [[0.0; 2]; 2];
    for c in 0..2 {
        for a in 0..4 {
            let coef = u[velocity_dof(layout, mesh, t, c, a)];
            v[c] += coef * pe.vel_phi[a];
            gr[c][0] += coef * pe.vel_grad[a][0];
            gr[c][1] += coef * pe.vel_grad[a][1];
        }
    }
    (v, gr)
}

/// Convection vector `∫ (u·∇u)·v` by the dense quadrature route.
pub fn dense_convection(mesh: &Mesh, layout: &DofLayout, u: &[f64]) -> DVector<f64> {
    let mut out = DVector::zeros(layout.n_velocity);
    for_each_point(mesh, |t, _, _, _, jw, pe| {
        let (v, gr) = velocity_value(layout, mesh, t, u, pe);
        let conv = [v[0] * gr[0][0] + v[1] * gr[0][1], v[0] * gr[1][0] + v[1] * gr[1][1]];
        for c in 0..2 {
            for a in 0..4 {
                out[velocity_dof(layout, mesh, t, c, a)] += jw * conv[c] * pe.vel_phi[a];
            }
        }
    });
    out
}

/// Matrix `L` with `L J = ∫ (J x B)·v`.
pub fn dense_lorentz_matrix<B>(mesh: &Mesh, layout: &DofLayout, b3: B) -> DMatrix<f64>
where
    B: Fn(f64, f64) -> f64,
{
    let mut out = DMatrix::zeros(layout.n_velocity, layout.n_current);
    for_each_point(mesh, |t, _, signs, x, jw, pe| {
        let b = b3(x[0], x[1]);
        for k in 0..3 {
            // J x B for J = psi_k
            let f = [pe.rt0[k][1] * b, -pe.rt0[k][0] * b];
            for c in 0..2 {
                for a in 0..4 {
                    out[(velocity_dof(layout, mesh, t, c, a), signs[k].0)] += jw * f[c] * pe.vel_phi[a];
                }
            }
        }
    });
    out
}

/// Matrix `C` with `C u = ∫ (u x B)·K`.
pub fn dense_cross_matrix<B>(mesh: &Mesh, layout: &DofLayout, b3: B) -> DMatrix<f64>
where
    B: Fn(f64, f64) -> f64,
{
    let mut out = DMatrix::zeros(layout.n_current, layout.n_velocity);
    for_each_point(mesh, |t, _, signs, x, jw, pe| {
        let b = b3(x[0], x[1]);
        for c in 0..2 {
            for a in 0..4 {
                // u x B for u = phi_a e_c
                let mut f = [0.0; 2];
                if c == 1 {
                    f[0] = pe.vel_phi[a] * b;
                } else {
                    f[1] = -pe.vel_phi[a] * b;
                }
                for k in 0..3 {
                    out[(signs[k].0, velocity_dof(layout, mesh, t, c, a))] +=
                        jw * (f[0] * pe.rt0[k][0] + f[1] * pe.rt0[k][1]);
                }
            }
        }
    });
    out
}

/// `∫ f·v` by the dense quadrature route.
pub fn dense_velocity_load<F>(mesh: &Mesh, layout: &DofLayout, f: F) -> DVector<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    let mut out = DVector::zeros(layout.n_velocity);
    for_each_point(mesh, |t, _, _, x, jw, pe| {
        let v = f(x[0], x[1]);
        for c in 0..2 {
            for a in 0..4 {
                out[velocity_dof(layout, mesh, t, c, a)] += jw * v[c] * pe.vel_phi[a];
            }
        }
    });
    out
}

/// `∫ f·K` by the dense quadrature route.
pub fn dense_current_load<F>(mesh: &Mesh, layout: &DofLayout, f: F) -> DVector<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    let mut out = DVector::zeros(layout.n_current);
    for_each_point(mesh, |_, _, signs, x, jw, pe| {
        let v = f(x[0], x[1]);
        for k in 0..3 {
            out[signs[k].0] += jw * (v[0] * pe.rt0[k][0] + v[1] * pe.rt0[k][1]);
        }
    });
    out
}

/// Integral of a pressure (P1) or potential (P0) field against the dense weights.
pub fn dense_mean(weights: &DVector<f64>, c: &[f64]) -> f64 {
    weights.iter().zip(c).map(|(w, v)| w * v).sum()
}

/// Solution of the bordered saddle system with dense LU.
#[derive(Debug, Clone)]
pub struct DenseSaddleSolution {
    pub primal: Vec<f64>,
    pub multiplier: Vec<f64>,
}

/// Solves
///
/// ```text
/// A x - B^T p = f,   -B x + w l = g,   w^T p = 0
/// ```
///
/// with `x[d] = value` for each fixed dof, imposed by replacing row `d`.
pub fn dense_saddle_solve(
    primal: &DMatrix<f64>,
    divergence: &DMatrix<f64>,
    weights: Option<&DVector<f64>>,
    fixed: &[(usize, f64)],
    primal_rhs: &[f64],
    multiplier_rhs: Option<&[f64]>,
) -> Option<DenseSaddleSolution> {
    let n = primal.nrows();
    let m = divergence.nrows();
    let dim = n + m + usize::from(weights.is_some());
    let mut k = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    k.view_mut((0, 0), (n, n)).copy_from(primal);
    k.view_mut((0, n), (n, m)).copy_from(&(-divergence.transpose()));
    k.view_mut((n, 0), (m, n)).copy_from(&(-divergence));
    if let Some(w) = weights {
        for i in 0..m {
            k[(n + i, n + m)] = w[i];
            k[(n + m, n + i)] = w[i];
        }
    }
    b.rows_mut(0, n).copy_from_slice(primal_rhs);
    if let Some(g) = multiplier_rhs {
        b.rows_mut(n, m).copy_from_slice(g);
    }
    for &(d, v) in fixed {
        k.row_mut(d).fill(0.0);
        k[(d, d)] = 1.0;
        b[d] = v;
    }
    let x = k.lu().solve(&b)?;
    Some(DenseSaddleSolution {
        primal: x.rows(0, n).iter().copied().collect(),
        multiplier: x.rows(n, m).iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    #[test]
    fn bubble_mass_matches_closed_form() {
        let mesh = build_unit_square_mesh(1).unwrap();
        let layout = DofLayout::new(&mesh);
        let d = DenseOperators::assemble(&mesh, &layout);
        // ∫ (27 l0 l1 l2)^2 = 729 * 2|K| * 2!2!2!/8! = 81/280 |K|
        let bubble = mesh.n_vertices();
        assert!((d.velocity_mass[(bubble, bubble)] - 81.0 / 280.0 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_integrate_to_area() {
        let mesh = build_unit_square_mesh(2).unwrap();
        let layout = DofLayout::new(&mesh);
        let d = DenseOperators::assemble(&mesh, &layout);
        assert!((d.pressure_weights.sum() - 1.0).abs() < 1e-15);
        assert!((d.potential_weights.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn polynomial_gradient_of_linear_map() {
        // l0 + 2 l1 on a right triangle: gradient is grad l0 + 2 grad l1
        let gl = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let p = Poly::lambda(0).add(&Poly::lambda(1).scale(2.0));
        let g = p.grad(&gl);
        assert!((g[0].integrate(0.5) - 0.5).abs() < 1e-15);
        assert!((g[1].integrate(0.5) + 0.5).abs() < 1e-15);
    }
}
