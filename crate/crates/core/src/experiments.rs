//! The three experiments as library calls: time-convergence sweeps on the
//! manufactured solution, energy traces of the decaying vortex, and the driven
//! cavity. Each collects the per-step invariants of every run it performs.

use std::fmt::Write as _;

use crate::diagnostics::{compute_errors, convergence_table, num, EnergyTrace, ErrorRecord};
use crate::error::{Error, Result};
use crate::fem::forms::evaluate_velocity;
use crate::mesh::build_unit_square_mesh;
use crate::problems::{accuracy_problem_2d_with, cavity_problem_2d, stability_problem_2d};
use crate::sav_stepper::{SavStepper, SchemeConfig, SchemeOrder, StepReport};

pub const ACCURACY_TAUS: [f64; 5] = [0.2, 0.1, 0.05, 0.025, 0.0125];
pub const ACCURACY_MESH_N: usize = 6;
pub const STABILITY_TAUS: [f64; 4] = [0.5, 0.2, 0.1, 0.01];
pub const STABILITY_MESH_N: usize = 64;
pub const STABILITY_PARAMETERS: [f64; 2] = [20.0, 100.0];
pub const CAVITY_MESH_N: usize = 32;
pub const CAVITY_TAU: f64 = 0.01;
pub const CAVITY_SAMPLE_TIMES: [f64; 3] = [0.1, 1.0, 2.0];

/// Worst values of the per-step invariants over any number of runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantSummary {
    pub steps: usize,
    pub min_denominator: f64,
    pub max_a2_identity: f64,
    pub max_energy_identity: f64,
    pub max_div_j: f64,
    pub max_coupled: f64,
    pub max_solver_residual: f64,
}

impl Default for InvariantSummary {
    fn default() -> Self {
        Self {
            steps: 0,
            min_denominator: f64::INFINITY,
            max_a2_identity: 0.0,
            max_energy_identity: 0.0,
            max_div_j: 0.0,
            max_coupled: 0.0,
            max_solver_residual: 0.0,
        }
    }
}

impl InvariantSummary {
    pub fn from_reports(reports: &[StepReport]) -> Self {
        let mut s = Self::default();
        for r in reports {
            s.add(r);
        }
        s
    }

    pub fn add(&mut self, r: &StepReport) {
        self.steps += 1;
        self.min_denominator = self.min_denominator.min(r.denominator);
        self.max_a2_identity = self.max_a2_identity.max(r.a2_identity_residual);
        self.max_energy_identity = self.max_energy_identity.max(r.energy_identity_residual);
        self.max_div_j = self.max_div_j.max(r.max_div_j);
        self.max_coupled = self.max_coupled.max(r.coupled.max());
        let solver = r.solver_residuals.iter().copied().fold(0.0, f64::max);
        self.max_solver_residual = self.max_solver_residual.max(solver);
    }

    pub fn merge(&mut self, other: &Self) {
        self.steps += other.steps;
        self.min_denominator = self.min_denominator.min(other.min_denominator);
        self.max_a2_identity = self.max_a2_identity.max(other.max_a2_identity);
        self.max_energy_identity = self.max_energy_identity.max(other.max_energy_identity);
        self.max_div_j = self.max_div_j.max(other.max_div_j);
        self.max_coupled = self.max_coupled.max(other.max_coupled);
        self.max_solver_residual = self.max_solver_residual.max(other.max_solver_residual);
    }

    pub fn denominators_positive(&self) -> bool {
        self.min_denominator > 0.0
    }
}

/// Result of a sweep over time step sizes. `failure` holds the error of the
/// first run that stopped early; rows before it are kept.
#[derive(Debug)]
pub struct AccuracySweep {
    pub order: SchemeOrder,
    pub rows: Vec<ErrorRecord>,
    pub invariants: InvariantSummary,
    pub failure: Option<Error>,
}

/// Runs the manufactured problem for each `tau` on the `mesh_n` mesh and
/// tabulates the errors at `t_final` with rates.
pub fn accuracy_sweep(
    order: SchemeOrder,
    mesh_n: usize,
    re: f64,
    kappa: f64,
    t_final: f64,
    taus: &[f64],
) -> Result<AccuracySweep> {
    let problem = accuracy_problem_2d_with(re, kappa);
    let mesh = build_unit_square_mesh(mesh_n)?;
    let mut rows = Vec::new();
    let mut invariants = InvariantSummary::default();
    let mut failure = None;
    for &tau in taus {
        let config = SchemeConfig::new(order, tau, t_final, re, kappa);
        let stepper = SavStepper::new(mesh.clone(), problem.clone(), config)?;
        let out = stepper.run(|_, _| {});
        invariants.merge(&InvariantSummary::from_reports(&out.reports));
        if let Some(e) = out.failure {
            failure = Some(e);
            break;
        }
        rows.push(compute_errors(
            stepper.mesh(),
            stepper.layout(),
            &out.final_state,
            &problem,
            t_final,
            tau,
        )?);
    }
    Ok(AccuracySweep {
        order,
        rows: convergence_table(&rows),
        invariants,
        failure,
    })
}

/// Energy traces of the decaying vortex for one `(order, Re = kappa)` pair.
#[derive(Debug)]
pub struct StabilitySweep {
    pub order: SchemeOrder,
    pub re: f64,
    pub kappa: f64,
    pub traces: Vec<EnergyTrace>,
    pub invariants: InvariantSummary,
    pub failure: Option<Error>,
}

impl StabilitySweep {
    /// Largest `E^{n+1} - E^n` over all traces.
    pub fn max_increase(&self) -> f64 {
        self.traces.iter().map(EnergyTrace::max_increase).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_increase_bdf(&self) -> f64 {
        self.traces.iter().map(EnergyTrace::max_increase_bdf).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn stability_sweep(
    order: SchemeOrder,
    mesh_n: usize,
    re: f64,
    kappa: f64,
    t_final: f64,
    taus: &[f64],
) -> Result<StabilitySweep> {
    let problem = stability_problem_2d(re, kappa);
    let mesh = build_unit_square_mesh(mesh_n)?;
    let mut sweep = StabilitySweep {
        order,
        re,
        kappa,
        traces: Vec::new(),
        invariants: InvariantSummary::default(),
        failure: None,
    };
    for &tau in taus {
        let config = SchemeConfig::new(order, tau, t_final, re, kappa);
        let stepper = SavStepper::new(mesh.clone(), problem.clone(), config)?;
        let mut trace = EnergyTrace::new(tau);
        let out = stepper.run(|state, report| trace.record(stepper.operators(), state, report));
        sweep.invariants.merge(&InvariantSummary::from_reports(&out.reports));
        sweep.traces.push(trace);
        if let Some(e) = out.failure {
            sweep.failure = Some(e);
            break;
        }
    }
    Ok(sweep)
}

/// Velocity at the mesh vertices at one sampled time.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySnapshot {
    /// The requested sample time.
    pub sample: f64,
    /// Time of the level actually recorded.
    pub t: f64,
    /// `(x, y, u1, u2)` per vertex.
    pub values: Vec<[f64; 4]>,
}

/// Profiles along the cavity's center lines at the final time: `u1(0.5, s)`
/// and `u2(s, 0.5)` for `s` on the vertex grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineProfile {
    pub t: f64,
    /// `(s, u1(0.5, s), u2(s, 0.5))`.
    pub values: Vec<[f64; 3]>,
}

#[derive(Debug)]
pub struct CavityRun {
    pub snapshots: Vec<VelocitySnapshot>,
    pub centerline: CenterlineProfile,
    /// `(t, ‖u^{n+1} - u^n‖ / tau)` per step.
    pub steady_residual: Vec<(f64, f64)>,
    pub invariants: InvariantSummary,
    pub failure: Option<Error>,
}

/// Runs the driven cavity to `t_final`, sampling the velocity at the levels
/// nearest to each of `sample_times` that falls inside the run.
pub fn cavity_run(
    order: SchemeOrder,
    mesh_n: usize,
    tau: f64,
    t_final: f64,
    re: f64,
    kappa: f64,
    sample_times: &[f64],
) -> Result<CavityRun> {
    let problem = cavity_problem_2d(mesh_n).with_parameters(re, kappa);
    let mesh = build_unit_square_mesh(mesh_n)?;
    let config = SchemeConfig::new(order, tau, t_final, re, kappa);
    let stepper = SavStepper::new(mesh, problem, config)?;
    let (mesh, layout) = (stepper.mesh(), stepper.layout());
    let ops = stepper.operators();

    let mut snapshots = Vec::new();
    let mut steady_residual = Vec::new();
    let mut previous: Option<Vec<f64>> = None;
    let out = stepper.run(|state, _| {
        let u = &state.u.values;
        if let Some(prev) = &previous {
            let diff: Vec<f64> = u.iter().zip(prev).map(|(a, b)| a - b).collect();
            steady_residual.push((state.t, ops.velocity_norm2(&diff).sqrt() / tau));
        }
        previous = Some(u.clone());
        if let Some(&sample) = sample_times.iter().find(|&&s| (state.t - s).abs() < 0.5 * tau) {
            let values = (0..mesh.n_vertices())
                .map(|v| {
                    let [x, y] = mesh.vertices[v];
                    [x, y, u[layout.velocity_vertex_dof(0, v)], u[layout.velocity_vertex_dof(1, v)]]
                })
                .collect();
            snapshots.push(VelocitySnapshot {
                sample,
                t: state.t,
                values,
            });
        }
    });

    let u = &out.final_state.u.values;
    let values = (0..=mesh_n)
        .map(|k| {
            let s = if k == mesh_n { 1.0 } else { k as f64 / mesh_n as f64 };
            let vertical = evaluate_velocity(mesh, layout, u, 0.5, s);
            let horizontal = evaluate_velocity(mesh, layout, u, s, 0.5);
            [s, vertical[0], horizontal[1]]
        })
        .collect();
    Ok(CavityRun {
        snapshots,
        centerline: CenterlineProfile {
            t: out.final_state.t,
            values,
        },
        steady_residual,
        invariants: InvariantSummary::from_reports(&out.reports),
        failure: out.failure,
    })
}

/// CSV of a snapshot: header `x,y,u1,u2`, one row per vertex.
pub fn snapshot_csv(snapshot: &VelocitySnapshot) -> String {
    let mut s = String::from("x,y,u1,u2\n");
    for v in &snapshot.values {
        let _ = writeln!(s, "{},{},{},{}", num(v[0]), num(v[1]), num(v[2]), num(v[3]));
    }
    s
}

/// CSV of the center line profiles: header `s,u1_x05,u2_y05`.
pub fn centerline_csv(profile: &CenterlineProfile) -> String {
    let mut s = String::from("s,u1_x05,u2_y05\n");
    for v in &profile.values {
        let _ = writeln!(s, "{},{},{}", num(v[0]), num(v[1]), num(v[2]));
    }
    s
}

/// CSV of the steady-state residual history: header `t,steady_residual`.
pub fn steady_residual_csv(history: &[(f64, f64)]) -> String {
    let mut s = String::from("t,steady_residual\n");
    for (t, r) in history {
        let _ = writeln!(s, "{},{}", num(*t), num(*r));
    }
    s
}

/// File-name friendly rendering of a sample time, e.g. `0.1` -> `0p1`.
pub fn time_label(t: f64) -> String {
    let s = format!("{t}");
    s.replace('.', "p")
}
