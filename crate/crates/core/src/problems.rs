//! Test problems: a manufactured solution, a decaying vortex and a driven cavity.
//!
//! All data are closures of `(x, y, t)` behind `Arc`, so a definition is cheap
//! to clone and can be shared across threads.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type ScalarFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;
pub type TensorFn = Arc<dyn Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync>;
/// Normal boundary flux density `J·n` given `(x, y, t, n_out)`.
pub type FluxFn = Arc<dyn Fn(f64, f64, f64, [f64; 2]) -> f64 + Send + Sync>;

/// Closed-form fields of a problem with a known solution.
#[derive(Clone)]
pub struct ExactSolution {
    pub u: VectorFn,
    /// `grad_u[c] = ∇u_c`.
    pub grad_u: TensorFn,
    pub p: ScalarFn,
    pub j: VectorFn,
    pub div_j: ScalarFn,
    pub phi: ScalarFn,
}

/// Everything the stepper needs to know about one experiment.
#[derive(Clone)]
pub struct ProblemDefinition {
    pub name: &'static str,
    pub re: f64,
    pub kappa: f64,
    pub t_final: f64,
    /// Out-of-plane magnetic field `B3`.
    pub b3: ScalarFn,
    pub u0: VectorFn,
    /// Dirichlet velocity data; `None` means homogeneous.
    pub velocity_bc: Option<VectorFn>,
    /// Normal current data; `None` means `J·n = 0`.
    pub current_bc: Option<FluxFn>,
    pub f_u: Option<VectorFn>,
    pub f_j: Option<VectorFn>,
    pub exact: Option<ExactSolution>,
}

impl fmt::Debug for ProblemDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDefinition")
            .field("name", &self.name)
            .field("re", &self.re)
            .field("kappa", &self.kappa)
            .field("t_final", &self.t_final)
            .field("velocity_bc", &self.velocity_bc.is_some())
            .field("current_bc", &self.current_bc.is_some())
            .field("forced", &(self.f_u.is_some() || self.f_j.is_some()))
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl ProblemDefinition {
    /// True when the boundary data and forcing all vanish, so the discrete
    /// energy balance holds with equality.
    pub fn is_homogeneous(&self) -> bool {
        self.velocity_bc.is_none() && self.current_bc.is_none() && self.f_u.is_none() && self.f_j.is_none()
    }

    pub fn with_parameters(mut self, re: f64, kappa: f64) -> Self {
        self.re = re;
        self.kappa = kappa;
        self
    }
}

/// Manufactured solution with `Re = kappa = 1` and `T = 1`:
///
/// ```text
/// u = (y e^-t, x cos t),  p = sin t,  J = (sin t, cos t),  phi = cos t,  B = (0, 0, 1)
/// ```
pub fn accuracy_problem_2d() -> ProblemDefinition {
    accuracy_problem_2d_with(1.0, 1.0)
}

/// The manufactured solution with other material parameters. The forcing is
/// rebuilt for `re` and `kappa`; the Laplacian of `u` vanishes, so only `kappa`
/// enters it.
pub fn accuracy_problem_2d_with(re: f64, kappa: f64) -> ProblemDefinition {
    let u: VectorFn = Arc::new(|x, y, t| [y * (-t).exp(), x * t.cos()]);
    let j: VectorFn = Arc::new(|_, _, t| [t.sin(), t.cos()]);
    let exact = ExactSolution {
        u: u.clone(),
        grad_u: Arc::new(|_, _, t| [[0.0, (-t).exp()], [t.cos(), 0.0]]),
        p: Arc::new(|_, _, t| t.sin()),
        j: j.clone(),
        div_j: Arc::new(|_, _, _| 0.0),
        phi: Arc::new(|_, _, t| t.cos()),
    };
    // u_t + u·∇u - κ J x B with J x B = (J2, -J1)
    let f_u: VectorFn = Arc::new(move |x, y, t| {
        let (e, c, s) = ((-t).exp(), t.cos(), t.sin());
        [-y * e + x * e * c - kappa * c, -x * s + y * e * c + kappa * s]
    });
    // J + ∇phi - u x B with u x B = (u2, -u1)
    let f_j: VectorFn = Arc::new(|x, y, t| [t.sin() - x * t.cos(), t.cos() + y * (-t).exp()]);
    let jb = j.clone();
    ProblemDefinition {
        name: "accuracy",
        re,
        kappa,
        t_final: 1.0,
        b3: Arc::new(|_, _, _| 1.0),
        u0: Arc::new(move |x, y, _| u(x, y, 0.0)),
        velocity_bc: Some(exact.u.clone()),
        current_bc: Some(Arc::new(move |x, y, t, n| {
            let v = jb(x, y, t);
            v[0] * n[0] + v[1] * n[1]
        })),
        f_u: Some(f_u),
        f_j: Some(f_j),
        exact: Some(exact),
    }
}

/// Decaying vortex `u0 = (sin πx cos πy, -cos πx sin πy)` with homogeneous
/// data, no forcing and `T = 3`.
pub fn stability_problem_2d(re: f64, kappa: f64) -> ProblemDefinition {
    ProblemDefinition {
        name: "stability",
        re,
        kappa,
        t_final: 3.0,
        b3: Arc::new(|_, _, _| 1.0),
        u0: Arc::new(|x, y, _| [(PI * x).sin() * (PI * y).cos(), -(PI * x).cos() * (PI * y).sin()]),
        velocity_bc: None,
        current_bc: None,
        f_u: None,
        f_j: None,
        exact: None,
    }
}

/// Regularized lid speed: 1 on the top edge, dropping linearly to 0 within
/// one cell of width `h` at each corner.
pub fn lid_profile(x: f64, h: f64) -> f64 {
    (x / h).min((1.0 - x) / h).clamp(0.0, 1.0)
}

/// Driven cavity on a mesh with `mesh_n` cells per side: the lid moves along
/// `y = 1`, `Re = 200`, `kappa = 10`, `B3 = 1`, `T = 2`.
pub fn cavity_problem_2d(mesh_n: usize) -> ProblemDefinition {
    let h = 1.0 / mesh_n.max(1) as f64;
    let lid: VectorFn = Arc::new(move |x, y, _| if y >= 1.0 { [lid_profile(x, h), 0.0] } else { [0.0, 0.0] });
    ProblemDefinition {
        name: "cavity2d",
        re: 200.0,
        kappa: 10.0,
        t_final: 2.0,
        b3: Arc::new(|_, _, _| 1.0),
        u0: lid.clone(),
        velocity_bc: Some(lid),
        current_bc: None,
        f_u: None,
        f_j: None,
        exact: None,
    }
}
