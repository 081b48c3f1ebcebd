//! Discrete spaces and assembly.
//!
//! | unknown  | element              | dofs                                   |
//! |----------|----------------------|----------------------------------------|
//! | velocity | Mini (P1 + bubble)^2 | per component: vertices, then bubbles  |
//! | pressure | continuous P1        | vertices                               |
//! | current  | RT0                  | edges, flux along the global normal    |
//! | potential| P0                   | triangles                              |
//!
//! Every integral, bilinear or not, goes through the same degree-6 rule so the
//! discrete coupling identities hold to rounding.

pub mod assembly;
pub mod boundary;
mod element;
pub mod forms;
mod quadrature;

pub use assembly::{
    assemble_rt0_div, assemble_rt0_mass, assemble_velocity_mass, assemble_velocity_pressure_div,
    assemble_velocity_stiffness, zero_mean_constraint,
};
pub use boundary::{
    apply_current_normal_trace, apply_velocity_dirichlet, boundary_energy_flux, current_boundary_fluxes,
    interpolate_current, interpolate_velocity, velocity_boundary_values, EssentialCondition,
};
pub use element::Element;
pub use forms::{
    assemble_convection_rhs, assemble_cross_rhs, assemble_current_load, assemble_lorentz_rhs,
    assemble_velocity_load, evaluate_current, evaluate_velocity,
};
pub use quadrature::{edge_gauss3, QuadratureRule};

use crate::mesh::Mesh;

/// Tag for the four discrete spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Velocity,
    Pressure,
    Current,
    Potential,
}

/// Degree-of-freedom maps for the four spaces on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DofLayout {
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub n_velocity: usize,
    pub n_pressure: usize,
    pub n_current: usize,
    pub n_potential: usize,
    /// Vertex dofs of both velocity components on the boundary, sorted.
    pub boundary_velocity_dofs: Vec<usize>,
    /// Boundary edges, sorted.
    pub boundary_current_dofs: Vec<usize>,
}

impl DofLayout {
    pub fn new(mesh: &Mesh) -> Self {
        let nv = mesh.n_vertices();
        let nt = mesh.n_triangles();
        let per_component = nv + nt;
        let boundary_vertices: Vec<usize> = (0..nv).filter(|&v| mesh.boundary_vertex[v]).collect();
        let boundary_velocity_dofs = (0..2)
            .flat_map(|c| boundary_vertices.iter().map(move |&v| c * per_component + v))
            .collect();
        let boundary_current_dofs = (0..mesh.n_edges()).filter(|&e| mesh.boundary_edge[e]).collect();
        Self {
            n_vertices: nv,
            n_triangles: nt,
            n_velocity: 2 * per_component,
            n_pressure: nv,
            n_current: mesh.n_edges(),
            n_potential: nt,
            boundary_velocity_dofs,
            boundary_current_dofs,
        }
    }

    pub fn len(&self, space: Space) -> usize {
        match space {
            Space::Velocity => self.n_velocity,
            Space::Pressure => self.n_pressure,
            Space::Current => self.n_current,
            Space::Potential => self.n_potential,
        }
    }

    /// Offset of velocity component `c` (0 or 1).
    #[inline]
    pub fn component_offset(&self, c: usize) -> usize {
        c * (self.n_vertices + self.n_triangles)
    }

    #[inline]
    pub fn velocity_vertex_dof(&self, c: usize, v: usize) -> usize {
        self.component_offset(c) + v
    }

    #[inline]
    pub fn velocity_bubble_dof(&self, c: usize, t: usize) -> usize {
        self.component_offset(c) + self.n_vertices + t
    }

    /// The four local velocity dofs of component `c` on triangle `t`.
    #[inline]
    pub fn local_velocity_dofs(&self, mesh: &Mesh, t: usize, c: usize) -> [usize; 4] {
        let [a, b, d] = mesh.triangles[t];
        let off = self.component_offset(c);
        [off + a, off + b, off + d, self.velocity_bubble_dof(c, t)]
    }
}

/// Coefficient vector tagged with its space.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    pub space: Space,
    pub values: Vec<f64>,
}

impl FieldVector {
    pub fn zeros(layout: &DofLayout, space: Space) -> Self {
        Self {
            space,
            values: vec![0.0; layout.len(space)],
        }
    }

    pub fn new(space: Space, values: Vec<f64>) -> Self {
        Self { space, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn matches(&self, layout: &DofLayout) -> bool {
        self.values.len() == layout.len(self.space)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &FieldVector) -> FieldVector {
        debug_assert_eq!(self.space, other.space);
        FieldVector {
            space: self.space,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect(),
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &FieldVector, b: f64) -> FieldVector {
        debug_assert_eq!(self.space, other.space);
        FieldVector {
            space: self.space,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;

    #[test]
    fn dof_counts_follow_mesh() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let l = DofLayout::new(&mesh);
        let (v, e, t) = (mesh.n_vertices(), mesh.n_edges(), mesh.n_triangles());
        assert_eq!(l.n_velocity, 2 * (v + t));
        assert_eq!(l.n_pressure, v);
        assert_eq!(l.n_current, e);
        assert_eq!(l.n_potential, t);
        assert_eq!(l.boundary_velocity_dofs.len(), 2 * 12);
        assert_eq!(l.boundary_current_dofs.len(), 12);
        for list in [&l.boundary_velocity_dofs, &l.boundary_current_dofs] {
            assert!(list.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
