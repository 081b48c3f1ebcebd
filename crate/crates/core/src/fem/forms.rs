//! Right-hand-side vectors that change every step, plus point evaluation.
//!
//! The out-of-plane field `B = (0, 0, B3)` reduces the cross products to
//! `J x B = (J2 B3, -J1 B3)` and `u x B = (u2 B3, -u1 B3)`. Both coupling
//! vectors use the same quadrature, so `J·cross(u) + u·lorentz(J)` vanishes to
//! rounding for every pair of coefficient vectors.

use super::{DofLayout, Element, QuadratureRule};
use crate::mesh::Mesh;

/// Velocity coefficients of triangle `t`, indexed `[component][local dof]`.
#[inline]
pub(crate) fn local_velocity(mesh: &Mesh, layout: &DofLayout, t: usize, u: &[f64]) -> [[f64; 4]; 2] {
    let mut out = [[0.0; 4]; 2];
    for (c, row) in out.iter_mut().enumerate() {
        for (a, d) in layout.local_velocity_dofs(mesh, t, c).into_iter().enumerate() {
            row[a] = u[d];
        }
    }
    out
}

#[inline]
pub(crate) fn local_current(el: &Element, j: &[f64]) -> [f64; 3] {
    el.edges.map(|e| j[e])
}

/// Velocity value and gradient (`grad[c] = ∇u_c`) at barycentric point `l`.
#[inline]
pub(crate) fn velocity_at(el: &Element, coeffs: &[[f64; 4]; 2], l: &[f64; 3]) -> ([f64; 2], [[f64; 2]; 2]) {
    let phi = el.velocity_values(l);
    let g = el.velocity_gradients(l);
    let mut val = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for c in 0..2 {
        for a in 0..4 {
            val[c] += coeffs[c][a] * phi[a];
            grad[c][0] += coeffs[c][a] * g[a][0];
            grad[c][1] += coeffs[c][a] * g[a][1];
        }
    }
    (val, grad)
}

#[inline]
pub(crate) fn current_at(el: &Element, coeffs: &[f64; 3], l: &[f64; 3]) -> [f64; 2] {
    let psi = el.rt0_values(l);
    let mut val = [0.0; 2];
    for k in 0..3 {
        val[0] += coeffs[k] * psi[k][0];
        val[1] += coeffs[k] * psi[k][1];
    }
    val
}

/// Tests the pointwise vector `f(el, l, x)` against every velocity shape function.
fn velocity_rhs<F>(mesh: &Mesh, layout: &DofLayout, mut f: F) -> Vec<f64>
where
    F: FnMut(usize, &Element, &[f64; 3], [f64; 2]) -> [f64; 2],
{
    let rule = QuadratureRule::degree6();
    let mut out = vec![0.0; layout.n_velocity];
    for tri in 0..mesh.n_triangles() {
        let el = Element::new(mesh, tri);
        let mut local = [[0.0; 4]; 2];
        for (l, w) in rule.iter() {
            let jw = 2.0 * el.area * w;
            let v = f(tri, &el, l, el.point(l));
            let phi = el.velocity_values(l);
            for c in 0..2 {
                for a in 0..4 {
                    local[c][a] += jw * v[c] * phi[a];
                }
            }
        }
        for (c, row) in local.iter().enumerate() {
            for (d, val) in layout.local_velocity_dofs(mesh, tri, c).into_iter().zip(row) {
                out[d] += val;
            }
        }
    }
    out
}

/// Tests the pointwise vector `f(el, l, x)` against every RT0 shape function.
fn current_rhs<F>(mesh: &Mesh, layout: &DofLayout, mut f: F) -> Vec<f64>
where
    F: FnMut(usize, &Element, &[f64; 3], [f64; 2]) -> [f64; 2],
{
    let rule = QuadratureRule::degree6();
    let mut out = vec![0.0; layout.n_current];
    for tri in 0..mesh.n_triangles() {
        let el = Element::new(mesh, tri);
        let mut local = [0.0; 3];
        for (l, w) in rule.iter() {
            let jw = 2.0 * el.area * w;
            let v = f(tri, &el, l, el.point(l));
            let psi = el.rt0_values(l);
            for k in 0..3 {
                local[k] += jw * (v[0] * psi[k][0] + v[1] * psi[k][1]);
            }
        }
        for k in 0..3 {
            out[el.edges[k]] += local[k];
        }
    }
    out
}

/// `∫ (u·∇u)·v` for every velocity test function, in convective form.
pub fn assemble_convection_rhs(mesh: &Mesh, layout: &DofLayout, u: &[f64]) -> Vec<f64> {
    assert_eq!(u.len(), layout.n_velocity, "convection: velocity length");
    let mut cached = (usize::MAX, [[0.0; 4]; 2]);
    velocity_rhs(mesh, layout, |tri, el, l, _| {
        if cached.0 != tri {
            cached = (tri, local_velocity(mesh, layout, tri, u));
        }
        let (val, grad) = velocity_at(el, &cached.1, l);
        [
            val[0] * grad[0][0] + val[1] * grad[0][1],
            val[0] * grad[1][0] + val[1] * grad[1][1],
        ]
    })
}

/// `∫ (J x B)·v` for every velocity test function. `b3` is evaluated at the
/// quadrature points.
pub fn assemble_lorentz_rhs<B>(mesh: &Mesh, layout: &DofLayout, j: &[f64], b3: B) -> Vec<f64>
where
    B: Fn(f64, f64) -> f64,
{
    assert_eq!(j.len(), layout.n_current, "lorentz: current length");
    velocity_rhs(mesh, layout, |_, el, l, x| {
        let jv = current_at(el, &local_current(el, j), l);
        let b = b3(x[0], x[1]);
        [jv[1] * b, -jv[0] * b]
    })
}

/// `∫ (u x B)·K` for every RT0 test function.
pub fn assemble_cross_rhs<B>(mesh: &Mesh, layout: &DofLayout, u: &[f64], b3: B) -> Vec<f64>
where
    B: Fn(f64, f64) -> f64,
{
    assert_eq!(u.len(), layout.n_velocity, "cross: velocity length");
    let mut cached = (usize::MAX, [[0.0; 4]; 2]);
    current_rhs(mesh, layout, |tri, el, l, x| {
        if cached.0 != tri {
            cached = (tri, local_velocity(mesh, layout, tri, u));
        }
        let (uv, _) = velocity_at(el, &cached.1, l);
        let b = b3(x[0], x[1]);
        [uv[1] * b, -uv[0] * b]
    })
}

/// `∫ f·v` for a vector source `f(x, y)`.
pub fn assemble_velocity_load<F>(mesh: &Mesh, layout: &DofLayout, f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    velocity_rhs(mesh, layout, |_, _, _, x| f(x[0], x[1]))
}

/// `∫ f·K` for a vector source `f(x, y)`.
pub fn assemble_current_load<F>(mesh: &Mesh, layout: &DofLayout, f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> [f64; 2],
{
    current_rhs(mesh, layout, |_, _, _, x| f(x[0], x[1]))
}

/// Value of a discrete velocity at `(x, y)`.
pub fn evaluate_velocity(mesh: &Mesh, layout: &DofLayout, u: &[f64], x: f64, y: f64) -> [f64; 2] {
    let (t, l) = mesh.locate(x, y);
    let el = Element::new(mesh, t);
    velocity_at(&el, &local_velocity(mesh, layout, t, u), &l).0
}

/// Value of a discrete current density at `(x, y)`.
pub fn evaluate_current(mesh: &Mesh, j: &[f64], x: f64, y: f64) -> [f64; 2] {
    let (t, l) = mesh.locate(x, y);
    let el = Element::new(mesh, t);
    current_at(&el, &local_current(&el, j), &l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assembly::assemble_velocity_mass;
    use crate::fem::boundary::{interpolate_current, interpolate_velocity};
    use crate::mesh::build_unit_square_mesh;

    fn setup(n: usize) -> (Mesh, DofLayout) {
        let mesh = build_unit_square_mesh(n).unwrap();
        let layout = DofLayout::new(&mesh);
        (mesh, layout)
    }

    #[test]
    fn convection_of_constant_field_vanishes() {
        let (mesh, layout) = setup(3);
        let u = interpolate_velocity(&mesh, &layout, |_, _| [0.7, -0.2]);
        let c = assemble_convection_rhs(&mesh, &layout, &u);
        assert!(c.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn lorentz_of_unit_current_is_rotated_mass_action() {
        let (mesh, layout) = setup(3);
        let j = interpolate_current(&mesh, &layout, |_, _| [1.0, 0.0]);
        let lhs = assemble_lorentz_rhs(&mesh, &layout, &j, |_, _| 1.0);
        let m = assemble_velocity_mass(&mesh, &layout);
        let rot = interpolate_velocity(&mesh, &layout, |_, _| [0.0, -1.0]);
        let rhs = m.mul_vec(&rot);
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_fields_give_zero_vectors() {
        let (mesh, layout) = setup(2);
        let zu = vec![0.0; layout.n_velocity];
        let zj = vec![0.0; layout.n_current];
        assert!(assemble_cross_rhs(&mesh, &layout, &zu, |_, _| 1.0).iter().all(|&v| v == 0.0));
        assert!(assemble_lorentz_rhs(&mesh, &layout, &zj, |_, _| 1.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn point_evaluation_reproduces_linear_fields() {
        let (mesh, layout) = setup(4);
        let u = interpolate_velocity(&mesh, &layout, |x, y| [x - 2.0 * y, 3.0 * x * 0.5 + y]);
        let j = interpolate_current(&mesh, &layout, |_, _| [0.25, -1.5]);
        for &(x, y) in &[(0.13, 0.77), (0.5, 0.5), (0.91, 0.02), (1.0, 1.0)] {
            let v = evaluate_velocity(&mesh, &layout, &u, x, y);
            assert!((v[0] - (x - 2.0 * y)).abs() < 1e-13);
            assert!((v[1] - (1.5 * x + y)).abs() < 1e-13);
            let jv = evaluate_current(&mesh, &j, x, y);
            assert!((jv[0] - 0.25).abs() < 1e-13 && (jv[1] + 1.5).abs() < 1e-13);
        }
    }
}
