//! Decoupled SAV time stepping.
//!
//! Each step solves two generalized Stokes problems and one or two Darcy
//! problems with constant matrices, then a scalar equation for
//! `S = q e^{t/T}`, and finally combines `field = field_1 + S field_2`. The
//! first-order scheme uses backward Euler; the second-order scheme uses BDF2
//! with the extrapolants `2 x^n - x^{n-1}` and bootstraps its first step with
//! backward Euler.

use crate::error::{Error, Result};
use crate::fem::{
    apply_current_normal_trace, apply_velocity_dirichlet, assemble_convection_rhs, assemble_cross_rhs,
    assemble_current_load, assemble_lorentz_rhs, assemble_rt0_div, assemble_rt0_mass, assemble_velocity_load,
    assemble_velocity_mass, assemble_velocity_pressure_div, assemble_velocity_stiffness, boundary_energy_flux,
    interpolate_velocity, zero_mean_constraint, DofLayout, FieldVector, Space,
};
use crate::linsolve::{dot, norm2, PreparedSaddle, SaddleSystem, SparseMatrix};
use crate::mesh::Mesh;
use crate::problems::ProblemDefinition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeOrder {
    First,
    Second,
}

impl SchemeOrder {
    pub fn from_number(order: u8) -> Result<Self> {
        match order {
            1 => Ok(Self::First),
            2 => Ok(Self::Second),
            other => Err(Error::InvalidConfig(format!("scheme order must be 1 or 2, got {other}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::First => 1,
            Self::Second => 2,
        }
    }
}

/// Mass coefficient of the second Stokes solve in BDF2 steps.
///
/// Only [`SplitCoefficient::Consistent`] makes `u_1 + S u_2` solve the coupled
/// BDF2 system. `Backward` (`1/tau`) is kept so the coupled-residual check can
/// be shown to catch it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitCoefficient {
    /// `3 / (2 tau)`, the same as the first solve.
    #[default]
    Consistent,
    /// `1 / tau`.
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub order: SchemeOrder,
    pub tau: f64,
    /// Final time; also the `T` of `q(t) = exp(-t / T)`.
    pub t_final: f64,
    pub re: f64,
    pub kappa: f64,
    pub split: SplitCoefficient,
}

impl SchemeConfig {
    pub fn new(order: SchemeOrder, tau: f64, t_final: f64, re: f64, kappa: f64) -> Self {
        Self {
            order,
            tau,
            t_final,
            re,
            kappa,
            split: SplitCoefficient::Consistent,
        }
    }

    /// Config with the problem's own `Re`, `kappa` and final time.
    pub fn for_problem(problem: &ProblemDefinition, order: SchemeOrder, tau: f64) -> Self {
        Self::new(order, tau, problem.t_final, problem.re, problem.kappa)
    }

    /// Number of steps `N = T / tau`.
    pub fn n_steps(&self) -> Result<usize> {
        self.validate()?;
        Ok((self.t_final / self.tau).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive(self.tau, "tau")?;
        positive(self.t_final, "final time")?;
        positive(self.re, "Re")?;
        positive(self.kappa, "kappa")?;
        let ratio = self.t_final / self.tau;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidConfig(format!(
                "final time {} is not a whole number of steps of {}",
                self.t_final, self.tau
            )));
        }
        Ok(())
    }

    /// Time of step `n`.
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.tau
    }
}

/// Discrete state at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct SavState {
    pub n: usize,
    pub t: f64,
    pub u: FieldVector,
    pub p: FieldVector,
    pub j: FieldVector,
    pub phi: FieldVector,
    pub q: f64,
    /// Previous level, kept for BDF2.
    pub prev: Option<Box<PreviousLevel>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreviousLevel {
    pub u: FieldVector,
    pub j: FieldVector,
    pub q: f64,
}

/// Residuals of every equation of the coupled (undecoupled) scheme, evaluated
/// at the reconstructed solution. Each is a max-norm scaled by the largest
/// term of its equation (at least 1).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoupledResidual {
    pub momentum: f64,
    pub continuity: f64,
    pub ohm: f64,
    pub charge: f64,
    pub sav: f64,
}

impl CoupledResidual {
    pub fn max(&self) -> f64 {
        [self.momentum, self.continuity, self.ohm, self.charge, self.sav]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Diagnostics of one step `n -> n + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Index of the new level.
    pub n: usize,
    pub t: f64,
    /// Order of the formula used for this step (BDF2 runs report 1 on the first).
    pub order: SchemeOrder,
    pub s: f64,
    pub a1: f64,
    pub a2: f64,
    /// Boundary energy flux subtracted from `A1`.
    pub gamma: f64,
    /// `c_q - exp(2t/T) A2`; positive for a solvable step.
    pub denominator: f64,
    /// Mass coefficient `c_tau` of both Stokes solves.
    pub mass_coefficient: f64,
    /// `½‖u‖² + ½q²` at the new level.
    pub energy: f64,
    /// `¼(‖u‖² + ‖2u - u^n‖²) + ¼(q² + (2q - q^n)²)` at the new level.
    pub energy_bdf: f64,
    /// `Re⁻¹‖∇u‖² + kappa‖J‖² + q²/T` at the new level.
    pub dissipation: f64,
    /// Residual of the exact discrete energy balance of this step's formula.
    /// Meaningful only for homogeneous data.
    pub energy_identity_residual: f64,
    /// `|A2 + (c_tau‖u2‖² + Re⁻¹‖∇u2‖² + kappa‖J2‖²)|` relative to the bracket.
    pub a2_identity_residual: f64,
    /// `8 eps ‖x2‖ ‖b2‖` over the bracket, summed over both second solves:
    /// the relative accuracy the identity can reach given the solver
    /// residuals. Only exceeds the residual tolerance when `u2` and `J2` are
    /// rounding noise.
    pub a2_rounding_floor: f64,
    /// `max_K |∫_K div J| / |K|`.
    pub max_div_j: f64,
    /// Relative residuals of the linear solves (Stokes 1, Stokes 2, Darcy 1, Darcy 2).
    pub solver_residuals: [f64; 4],
    pub coupled: CoupledResidual,
}

impl StepReport {
    /// True when the A2 identity holds to `tol`, or to the rounding floor
    /// when that is larger.
    pub fn a2_identity_within(&self, tol: f64) -> bool {
        self.a2_identity_residual <= tol.max(self.a2_rounding_floor)
    }
}

/// Outcome of [`SavStepper::run`]. On failure `reports` and `final_state`
/// describe the last successful level.
#[derive(Debug)]
pub struct RunOutcome {
    pub initial: SavState,
    pub reports: Vec<StepReport>,
    pub final_state: SavState,
    pub failure: Option<Error>,
}

impl RunOutcome {
    pub fn into_result(self) -> Result<(SavState, Vec<StepReport>)> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok((self.final_state, self.reports)),
        }
    }
}

/// Time-independent matrices.
#[derive(Debug, Clone)]
pub struct Operators {
    pub velocity_mass: SparseMatrix,
    pub velocity_stiffness: SparseMatrix,
    pub velocity_pressure_div: SparseMatrix,
    pub rt0_mass: SparseMatrix,
    pub rt0_div: SparseMatrix,
    pub pressure_weights: Vec<f64>,
    pub potential_weights: Vec<f64>,
}

impl Operators {
    pub fn assemble(mesh: &Mesh, layout: &DofLayout) -> Self {
        Self {
            velocity_mass: assemble_velocity_mass(mesh, layout),
            velocity_stiffness: assemble_velocity_stiffness(mesh, layout),
            velocity_pressure_div: assemble_velocity_pressure_div(mesh, layout),
            rt0_mass: assemble_rt0_mass(mesh, layout),
            rt0_div: assemble_rt0_div(mesh, layout),
            pressure_weights: zero_mean_constraint(mesh, layout, Space::Pressure),
            potential_weights: zero_mean_constraint(mesh, layout, Space::Potential),
        }
    }

    pub fn velocity_norm2(&self, u: &[f64]) -> f64 {
        self.velocity_mass.bilinear(u, u)
    }

    pub fn gradient_norm2(&self, u: &[f64]) -> f64 {
        self.velocity_stiffness.bilinear(u, u)
    }

    pub fn current_norm2(&self, j: &[f64]) -> f64 {
        self.rt0_mass.bilinear(j, j)
    }

    /// `½‖u‖² + ½q²`.
    pub fn energy(&self, u: &[f64], q: f64) -> f64 {
        0.5 * self.velocity_norm2(u) + 0.5 * q * q
    }

    /// Largest elementwise divergence `|∫_K div J| / |K|`.
    pub fn max_div(&self, j: &[f64]) -> f64 {
        self.rt0_div
            .mul_vec(j)
            .iter()
            .zip(&self.potential_weights)
            .map(|(d, a)| (d / a).abs())
            .fold(0.0, f64::max)
    }
}

/// Owns the mesh, the factorized systems and the problem data of one run.
pub struct SavStepper {
    mesh: Mesh,
    layout: DofLayout,
    problem: ProblemDefinition,
    config: SchemeConfig,
    ops: Operators,
    stokes_backward: PreparedSaddle,
    stokes_bdf2: Option<PreparedSaddle>,
    darcy: PreparedSaddle,
}

impl std::fmt::Debug for SavStepper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SavStepper")
            .field("n_subdiv", &self.mesh.n_subdiv)
            .field("problem", &self.problem.name)
            .field("config", &self.config)
            .finish()
    }
}

/// Vectors that depend on the explicit (extrapolated) fields of one step.
struct ExplicitTerms {
    conv: Vec<f64>,
    lorentz: Vec<f64>,
    cross: Vec<f64>,
}

impl SavStepper {
    /// Assembles and factorizes everything the run needs.
    pub fn new(mesh: Mesh, problem: ProblemDefinition, config: SchemeConfig) -> Result<Self> {
        config.validate()?;
        let layout = DofLayout::new(&mesh);
        let ops = Operators::assemble(&mesh, &layout);
        let stokes = |c: f64| -> Result<PreparedSaddle> {
            let a = ops.velocity_mass.add_scaled(c, &ops.velocity_stiffness, 1.0 / config.re);
            SaddleSystem::new(
                a,
                ops.velocity_pressure_div.clone(),
                Some(ops.pressure_weights.clone()),
                layout.boundary_velocity_dofs.clone(),
            )?
            .prepare()
        };
        let stokes_backward = stokes(1.0 / config.tau)?;
        let stokes_bdf2 = match config.order {
            SchemeOrder::First => None,
            SchemeOrder::Second => Some(stokes(1.5 / config.tau)?),
        };
        let darcy = SaddleSystem::new(
            ops.rt0_mass.clone(),
            ops.rt0_div.clone(),
            Some(ops.potential_weights.clone()),
            layout.boundary_current_dofs.clone(),
        )?
        .prepare()?;
        Ok(Self {
            mesh,
            layout,
            problem,
            config,
            ops,
            stokes_backward,
            stokes_bdf2,
            darcy,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn layout(&self) -> &DofLayout {
        &self.layout
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn problem(&self) -> &ProblemDefinition {
        &self.problem
    }

    pub fn operators(&self) -> &Operators {
        &self.ops
    }

    fn b3_at(&self, t: f64) -> impl Fn(f64, f64) -> f64 + '_ {
        move |x, y| (self.problem.b3)(x, y, t)
    }

    /// Darcy solve `(J, K) - (phi, div K) = rhs` with prescribed boundary fluxes.
    fn solve_darcy(&self, rhs: &[f64], fluxes: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let sol = self.darcy.solve_saddle(rhs, None, fluxes)?;
        Ok((sol.primal, sol.multiplier, sol.relative_residual))
    }

    fn current_fluxes(&self, t: f64) -> Vec<f64> {
        match &self.problem.current_bc {
            Some(jb) => apply_current_normal_trace(&self.mesh, &self.layout, |x, y, n| jb(x, y, t, n)).values,
            None => vec![0.0; self.layout.boundary_current_dofs.len()],
        }
    }

    fn velocity_values(&self, t: f64) -> Vec<f64> {
        match &self.problem.velocity_bc {
            Some(g) => apply_velocity_dirichlet(&self.mesh, &self.layout, |x, y| g(x, y, t)).values,
            None => vec![0.0; self.layout.boundary_velocity_dofs.len()],
        }
    }

    fn current_load(&self, t: f64) -> Option<Vec<f64>> {
        self.problem
            .f_j
            .as_ref()
            .map(|f| assemble_current_load(&self.mesh, &self.layout, |x, y| f(x, y, t)))
    }

    /// Level 0: interpolated velocity, `q = 1`, `p = 0` and `(J, phi)` from the
    /// Darcy problem driven by `u0 x B`.
    pub fn init_state(&self) -> Result<SavState> {
        let u0 = &self.problem.u0;
        let u = interpolate_velocity(&self.mesh, &self.layout, |x, y| u0(x, y, 0.0));
        let mut rhs = assemble_cross_rhs(&self.mesh, &self.layout, &u, self.b3_at(0.0));
        if let Some(load) = self.current_load(0.0) {
            rhs.iter_mut().zip(&load).for_each(|(r, l)| *r += l);
        }
        let (j, phi, _) = self.solve_darcy(&rhs, &self.current_fluxes(0.0))?;
        Ok(SavState {
            n: 0,
            t: 0.0,
            u: FieldVector::new(Space::Velocity, u),
            p: FieldVector::zeros(&self.layout, Space::Pressure),
            j: FieldVector::new(Space::Current, j),
            phi: FieldVector::new(Space::Potential, phi),
            q: 1.0,
            prev: None,
        })
    }

    fn check_state(&self, state: &SavState) -> Result<()> {
        for f in [&state.u, &state.p, &state.j, &state.phi] {
            if !f.matches(&self.layout) {
                return Err(Error::DimensionMismatch {
                    context: "state field",
                    expected: self.layout.len(f.space),
                    found: f.len(),
                });
            }
        }
        if !state.q.is_finite() {
            return Err(Error::InvalidConfig(format!("state q is not finite at step {}", state.n)));
        }
        Ok(())
    }

    fn explicit_terms(&self, u: &[f64], j: &[f64], t: f64) -> ExplicitTerms {
        ExplicitTerms {
            conv: assemble_convection_rhs(&self.mesh, &self.layout, u),
            lorentz: assemble_lorentz_rhs(&self.mesh, &self.layout, j, self.b3_at(t)),
            cross: assemble_cross_rhs(&self.mesh, &self.layout, u, self.b3_at(t)),
        }
    }

    /// One backward Euler step.
    pub fn step_first_order(&self, state: &SavState) -> Result<(SavState, StepReport)> {
        self.check_state(state)?;
        self.advance(state, SchemeOrder::First)
    }

    /// One BDF2 step; the first step (no previous level) is backward Euler.
    pub fn step_second_order(&self, state: &SavState) -> Result<(SavState, StepReport)> {
        self.check_state(state)?;
        match state.prev {
            None => self.advance(state, SchemeOrder::First),
            Some(_) => self.advance(state, SchemeOrder::Second),
        }
    }

    /// Steps with the configured order.
    pub fn step(&self, state: &SavState) -> Result<(SavState, StepReport)> {
        match self.config.order {
            SchemeOrder::First => self.step_first_order(state),
            SchemeOrder::Second => self.step_second_order(state),
        }
    }

    fn advance(&self, state: &SavState, formula: SchemeOrder) -> Result<(SavState, StepReport)> {
        let tau = self.config.tau;
        let big_t = self.config.t_final;
        let kappa = self.config.kappa;
        let nu = 1.0 / self.config.re;
        let n1 = state.n + 1;
        let t1 = self.config.time(n1);
        let ops = &self.ops;
        let un = &state.u.values;

        // explicit fields, time-derivative history and scalar coefficients
        let (ue, je, history, c_tau, c_q, q_hist, stokes1, stokes2) = match formula {
            SchemeOrder::First => {
                let history: Vec<f64> = un.iter().map(|v| v / tau).collect();
                let q_hist = state.q / tau;
                (
                    un.clone(),
                    state.j.values.clone(),
                    history,
                    1.0 / tau,
                    (big_t + tau) / (big_t * tau),
                    q_hist,
                    &self.stokes_backward,
                    &self.stokes_backward,
                )
            }
            SchemeOrder::Second => {
                let prev = state.prev.as_ref().expect("BDF2 step needs the previous level");
                let stokes = self.stokes_bdf2.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("BDF2 step requested from a first-order stepper".into())
                })?;
                let ue = state.u.combine(2.0, &prev.u, -1.0).values;
                let je = state.j.combine(2.0, &prev.j, -1.0).values;
                let history = state.u.combine(4.0 / (2.0 * tau), &prev.u, -1.0 / (2.0 * tau)).values;
                let q_hist = (4.0 * state.q - prev.q) / (2.0 * tau);
                let split = match self.config.split {
                    SplitCoefficient::Consistent => stokes,
                    SplitCoefficient::Backward => &self.stokes_backward,
                };
                (ue, je, history, 1.5 / tau, (3.0 * big_t + 2.0 * tau) / (2.0 * tau * big_t), q_hist, stokes, split)
            }
        };
        let ex = self.explicit_terms(&ue, &je, t1);

        // Stokes 1: history, forcing and boundary data
        let mut rhs1 = ops.velocity_mass.mul_vec(&history);
        let f_u_load = self.problem.f_u.as_ref().map(|f| assemble_velocity_load(&self.mesh, &self.layout, |x, y| f(x, y, t1)));
        if let Some(load) = &f_u_load {
            rhs1.iter_mut().zip(load).for_each(|(r, l)| *r += l);
        }
        let ub = self.velocity_values(t1);
        let s1 = stokes1.solve_saddle(&rhs1, None, &ub)?;

        // Stokes 2: explicit nonlinear and Lorentz terms, homogeneous data
        let rhs2: Vec<f64> = ex.lorentz.iter().zip(&ex.conv).map(|(l, c)| kappa * l - c).collect();
        let zeros_u = vec![0.0; ub.len()];
        let s2 = stokes2.solve_saddle(&rhs2, None, &zeros_u)?;

        // Darcy 1 carries J_b and f_J; it vanishes for homogeneous data
        let jb = self.current_fluxes(t1);
        let f_j_load = self.current_load(t1);
        let (j1, phi1, r3) = if jb.iter().any(|&v| v != 0.0) || f_j_load.is_some() {
            let rhs = f_j_load.clone().unwrap_or_else(|| vec![0.0; self.layout.n_current]);
            self.solve_darcy(&rhs, &jb)?
        } else {
            (vec![0.0; self.layout.n_current], vec![0.0; self.layout.n_potential], 0.0)
        };
        let zeros_j = vec![0.0; jb.len()];
        let (j2, phi2, r4) = self.solve_darcy(&ex.cross, &zeros_j)?;

        // scalar equation
        let a_i = |u: &[f64], j: &[f64]| dot(&ex.conv, u) - kappa * dot(&ex.lorentz, u) - kappa * dot(&ex.cross, j);
        let a1 = a_i(&s1.primal, &j1);
        let a2 = a_i(&s2.primal, &j2);
        let gamma = match &self.problem.velocity_bc {
            Some(g) => boundary_energy_flux(&self.mesh, |x, y| g(x, y, t1)),
            None => 0.0,
        };
        let growth = (t1 / big_t).exp();
        let denominator = c_q - growth * growth * a2;
        if !(denominator > 0.0) {
            return Err(Error::NonPositiveDenominator {
                step: n1,
                value: denominator,
            });
        }
        let s = (growth * (a1 - gamma) + q_hist) / (denominator / growth);
        let q1 = s / growth;

        let combine = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + s * y).collect() };
        let u = combine(&s1.primal, &s2.primal);
        let p = combine(&s1.multiplier, &s2.multiplier);
        let j = combine(&j1, &j2);
        let phi = combine(&phi1, &phi2);

        // diagnostics
        let u_norm2 = ops.velocity_norm2(&u);
        let grad2 = ops.gradient_norm2(&u);
        let j_norm2 = ops.current_norm2(&j);
        let energy = 0.5 * u_norm2 + 0.5 * q1 * q1;
        let extrap: Vec<f64> = u.iter().zip(un).map(|(a, b)| 2.0 * a - b).collect();
        let q_ex = 2.0 * q1 - state.q;
        let energy_bdf = 0.25 * (u_norm2 + ops.velocity_norm2(&extrap)) + 0.25 * (q1 * q1 + q_ex * q_ex);
        let dissipation = nu * grad2 + kappa * j_norm2 + q1 * q1 / big_t;
        let energy_identity_residual = match formula {
            SchemeOrder::First => {
                let du: Vec<f64> = u.iter().zip(un).map(|(a, b)| a - b).collect();
                let dq = q1 - state.q;
                (u_norm2 - ops.velocity_norm2(un) + ops.velocity_norm2(&du)) / (2.0 * tau)
                    + (q1 * q1 - state.q * state.q + dq * dq) / (2.0 * tau)
                    + dissipation
            }
            SchemeOrder::Second => {
                let prev = state.prev.as_ref().expect("checked above");
                let old_ex = state.u.combine(2.0, &prev.u, -1.0).values;
                let curv: Vec<f64> = u.iter().zip(un).zip(&prev.u.values).map(|((a, b), c)| a - 2.0 * b + c).collect();
                let old_q_ex = 2.0 * state.q - prev.q;
                let q_curv = q1 - 2.0 * state.q + prev.q;
                (u_norm2 + ops.velocity_norm2(&extrap) - ops.velocity_norm2(un) - ops.velocity_norm2(&old_ex)
                    + ops.velocity_norm2(&curv))
                    / (4.0 * tau)
                    + (q1 * q1 + q_ex * q_ex - state.q * state.q - old_q_ex * old_q_ex + q_curv * q_curv) / (4.0 * tau)
                    + dissipation
            }
        };
        let bracket = c_tau * ops.velocity_norm2(&s2.primal) + nu * ops.gradient_norm2(&s2.primal) + kappa * ops.current_norm2(&j2);
        // The identity holds only up to x·r for the solver residual r of each
        // second solve, with |r| ~ eps |b|. When the loads are nearly discrete
        // gradients, u2 and J2 sit at that noise floor and the bracket cannot
        // be resolved below it.
        let backward = norm2(&s2.primal).hypot(norm2(&s2.multiplier)) * norm2(&rhs2)
            + kappa * norm2(&j2).hypot(norm2(&phi2)) * norm2(&ex.cross);
        let bracket_safe = bracket.max(f64::MIN_POSITIVE);
        let a2_identity_residual = (a2 + bracket).abs() / bracket_safe;
        let a2_rounding_floor = 8.0 * f64::EPSILON * backward / bracket_safe;

        let mean_u = s1.mean_multiplier + s * s2.mean_multiplier;
        let new_prev = PreviousLevel {
            u: state.u.clone(),
            j: state.j.clone(),
            q: state.q,
        };
        let next = SavState {
            n: n1,
            t: t1,
            u: FieldVector::new(Space::Velocity, u),
            p: FieldVector::new(Space::Pressure, p),
            j: FieldVector::new(Space::Current, j),
            phi: FieldVector::new(Space::Potential, phi),
            q: q1,
            prev: Some(Box::new(new_prev)),
        };
        let coupled = self.coupled_residual(
            state,
            &next,
            formula,
            &ex,
            &CoupledInputs {
                f_u: f_u_load.as_deref(),
                f_j: f_j_load.as_deref(),
                ub: &ub,
                jb: &jb,
                gamma,
                mean_u,
            },
        );
        let report = StepReport {
            n: n1,
            t: t1,
            order: formula,
            s,
            a1,
            a2,
            gamma,
            denominator,
            mass_coefficient: c_tau,
            energy,
            energy_bdf,
            dissipation,
            energy_identity_residual,
            a2_identity_residual,
            a2_rounding_floor,
            max_div_j: ops.max_div(&next.j.values),
            solver_residuals: [s1.relative_residual, s2.relative_residual, r3, r4],
            coupled,
        };
        Ok((next, report))
    }

    /// Plugs the new level into every equation of the coupled scheme.
    fn coupled_residual(
        &self,
        old: &SavState,
        new: &SavState,
        formula: SchemeOrder,
        ex: &ExplicitTerms,
        inputs: &CoupledInputs<'_>,
    ) -> CoupledResidual {
        let ops = &self.ops;
        let tau = self.config.tau;
        let big_t = self.config.t_final;
        let kappa = self.config.kappa;
        let nu = 1.0 / self.config.re;
        let u = &new.u.values;
        let j = &new.j.values;
        let s = new.q * (new.t / big_t).exp();

        // time difference of u and q for this formula
        let (du, dq): (Vec<f64>, f64) = match formula {
            SchemeOrder::First => (
                u.iter().zip(&old.u.values).map(|(a, b)| (a - b) / tau).collect(),
                (new.q - old.q) / tau,
            ),
            SchemeOrder::Second => {
                let prev = old.prev.as_ref().expect("BDF2 residual needs the previous level");
                (
                    u.iter()
                        .zip(&old.u.values)
                        .zip(&prev.u.values)
                        .map(|((a, b), c)| (3.0 * a - 4.0 * b + c) / (2.0 * tau))
                        .collect(),
                    (3.0 * new.q - 4.0 * old.q + prev.q) / (2.0 * tau),
                )
            }
        };

        let scaled = |terms: &[&[f64]], free: &dyn Fn(usize) -> bool| -> f64 {
            let len = terms[0].len();
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 1.0;
            for i in (0..len).filter(|&i| free(i)) {
                let r: f64 = terms.iter().map(|t| t[i]).sum();
                worst = worst.max(r.abs());
                for t in terms {
                    scale = scale.max(t[i].abs());
                }
            }
            worst / scale
        };

        let mut fixed_u = vec![false; u.len()];
        for &d in &self.layout.boundary_velocity_dofs {
            fixed_u[d] = true;
        }
        let m_du = ops.velocity_mass.mul_vec(&du);
        let k_u: Vec<f64> = ops.velocity_stiffness.mul_vec(u).iter().map(|v| nu * v).collect();
        let bt_p: Vec<f64> = ops.velocity_pressure_div.mul_transpose_vec(&new.p.values).iter().map(|v| -v).collect();
        let nonlinear: Vec<f64> = ex.conv.iter().zip(&ex.lorentz).map(|(c, l)| s * (c - kappa * l)).collect();
        let zero_u = vec![0.0; u.len()];
        let f_u: Vec<f64> = inputs.f_u.map_or(zero_u.clone(), |f| f.iter().map(|v| -v).collect());
        let mut momentum = scaled(&[&m_du, &k_u, &bt_p, &nonlinear, &f_u], &|i| !fixed_u[i]);
        for (&d, &v) in self.layout.boundary_velocity_dofs.iter().zip(inputs.ub) {
            momentum = momentum.max((u[d] - v).abs() / v.abs().max(1.0));
        }

        let bu: Vec<f64> = ops.velocity_pressure_div.mul_vec(u).iter().map(|v| -v).collect();
        let wl: Vec<f64> = ops.pressure_weights.iter().map(|w| w * inputs.mean_u).collect();
        let continuity = scaled(&[&bu, &wl], &|_| true);

        let mut fixed_j = vec![false; j.len()];
        for &d in &self.layout.boundary_current_dofs {
            fixed_j[d] = true;
        }
        let mj = ops.rt0_mass.mul_vec(j);
        let dt_phi: Vec<f64> = ops.rt0_div.mul_transpose_vec(&new.phi.values).iter().map(|v| -v).collect();
        let s_cross: Vec<f64> = ex.cross.iter().map(|c| -s * c).collect();
        let zero_j = vec![0.0; j.len()];
        let f_j: Vec<f64> = inputs.f_j.map_or(zero_j, |f| f.iter().map(|v| -v).collect());
        let mut ohm = scaled(&[&mj, &dt_phi, &s_cross, &f_j], &|i| !fixed_j[i]);
        for (&d, &v) in self.layout.boundary_current_dofs.iter().zip(inputs.jb) {
            ohm = ohm.max((j[d] - v).abs() / v.abs().max(1.0));
        }

        // RT0 divergence is tested against P0, so compatible data leave no mean part
        let dj = ops.rt0_div.mul_vec(j);
        let charge = scaled(&[&dj], &|_| true);

        let growth = (new.t / big_t).exp();
        let coupling = dot(&ex.conv, u) - kappa * dot(&ex.cross, j) - kappa * dot(&ex.lorentz, u) - inputs.gamma;
        let sav_terms = [dq, new.q / big_t, -growth * coupling];
        let sav = sav_terms.iter().sum::<f64>().abs() / sav_terms.iter().fold(1.0f64, |m, v| m.max(v.abs()));

        CoupledResidual {
            momentum,
            continuity,
            ohm,
            charge,
            sav,
        }
    }

    /// Runs all `N = T / tau` steps. `observer` sees the initial state (with no
    /// report) and every new level. A failing step stops the run; the outcome
    /// then carries the error and everything computed before it.
    pub fn run<F>(&self, mut observer: F) -> RunOutcome
    where
        F: FnMut(&SavState, Option<&StepReport>),
    {
        let n_steps = self.config.n_steps().unwrap_or(0);
        let initial = match self.init_state() {
            Ok(s) => s,
            Err(e) => {
                let empty = self.empty_state();
                return RunOutcome {
                    initial: empty.clone(),
                    reports: Vec::new(),
                    final_state: empty,
                    failure: Some(e),
                };
            }
        };
        observer(&initial, None);
        let mut reports = Vec::with_capacity(n_steps);
        let mut state = initial.clone();
        for _ in 0..n_steps {
            match self.step(&state) {
                Ok((next, report)) => {
                    observer(&next, Some(&report));
                    reports.push(report);
                    state = next;
                }
                Err(e) => {
                    return RunOutcome {
                        initial,
                        reports,
                        final_state: state,
                        failure: Some(e),
                    }
                }
            }
        }
        RunOutcome {
            initial,
            reports,
            final_state: state,
            failure: None,
        }
    }

    fn empty_state(&self) -> SavState {
        SavState {
            n: 0,
            t: 0.0,
            u: FieldVector::zeros(&self.layout, Space::Velocity),
            p: FieldVector::zeros(&self.layout, Space::Pressure),
            j: FieldVector::zeros(&self.layout, Space::Current),
            phi: FieldVector::zeros(&self.layout, Space::Potential),
            q: 1.0,
            prev: None,
        }
    }
}

struct CoupledInputs<'a> {
    f_u: Option<&'a [f64]>,
    f_j: Option<&'a [f64]>,
    ub: &'a [f64],
    jb: &'a [f64],
    gamma: f64,
    mean_u: f64,
}
