//! Oracle-equivalence and identity suites on tiny meshes.
//!
//! Each suite reports the worst value it saw against its tolerance. The
//! Lorentz assembler and the BDF2 split coefficient can be swapped out, which
//! is how the suites are shown to catch a sign error or a wrong coefficient.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fem::{
    assemble_convection_rhs, assemble_cross_rhs, assemble_current_load, assemble_lorentz_rhs, assemble_velocity_load,
    DofLayout,
};
use crate::linsolve::{dot, SaddleSystem, SparseMatrix};
use crate::mesh::{build_unit_square_mesh, Mesh};
use crate::oracle::{
    dense_convection, dense_cross_matrix, dense_current_load, dense_lorentz_matrix, dense_saddle_solve,
    dense_velocity_load, DenseOperators,
};
use crate::problems::{accuracy_problem_2d, stability_problem_2d, ProblemDefinition};
use crate::sav_stepper::{SavStepper, SchemeConfig, SchemeOrder, SplitCoefficient, StepReport};

pub const MATRIX_TOL: f64 = 1e-13;
pub const SOLVE_TOL: f64 = 1e-9;
pub const DUALITY_TOL: f64 = 1e-12;
pub const A2_TOL: f64 = 1e-10;
pub const ENERGY_TOL: f64 = 1e-8;
pub const DIV_TOL: f64 = 1e-9;
pub const COUPLED_TOL: f64 = 1e-8;

/// `(mesh, layout, J, B3) -> ∫ (J x B)·v`.
pub type LorentzAssembler = dyn Fn(&Mesh, &DofLayout, &[f64], &dyn Fn(f64, f64) -> f64) -> Vec<f64> + Send + Sync;

pub struct SelftestOptions {
    pub lorentz: Box<LorentzAssembler>,
    pub split: SplitCoefficient,
    pub seed: u64,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            lorentz: Box::new(|mesh, layout, j, b3| assemble_lorentz_rhs(mesh, layout, j, b3)),
            split: SplitCoefficient::Consistent,
            seed: 2024,
        }
    }
}

impl std::fmt::Debug for SelftestOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SelftestOptions")
            .field("split", &self.split)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    fn new(name: &'static str, worst: f64, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            worst,
            tolerance,
            passed: worst <= tolerance,
            detail,
        }
    }
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: worst {:.3e} (tolerance {:.0e}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

const MESHES: [usize; 3] = [1, 2, 3];

fn setup(n: usize) -> (Mesh, DofLayout) {
    let mesh = build_unit_square_mesh(n).expect("n >= 1");
    let layout = DofLayout::new(&mesh);
    (mesh, layout)
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_diff_sparse(a: &SparseMatrix, b: &DMatrix<f64>) -> f64 {
    (a.to_dense() - b).abs().max()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn b3_varying(x: f64, y: f64) -> f64 {
    1.0 + 0.5 * x * y
}

/// Every assembled matrix and right-hand side against the dense oracle.
pub fn assembly_suite(opts: &SelftestOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst: f64 = 0.0;
    for n in MESHES {
        let (mesh, layout) = setup(n);
        let ops = crate::sav_stepper::Operators::assemble(&mesh, &layout);
        let dense = DenseOperators::assemble(&mesh, &layout);
        worst = worst
            .max(max_diff_sparse(&ops.velocity_mass, &dense.velocity_mass))
            .max(max_diff_sparse(&ops.velocity_stiffness, &dense.velocity_stiffness))
            .max(max_diff_sparse(&ops.velocity_pressure_div, &dense.velocity_pressure_div))
            .max(max_diff_sparse(&ops.rt0_mass, &dense.rt0_mass))
            .max(max_diff_sparse(&ops.rt0_div, &dense.rt0_div))
            .max(max_diff(&ops.pressure_weights, dense.pressure_weights.as_slice()))
            .max(max_diff(&ops.potential_weights, dense.potential_weights.as_slice()));

        let u = random_vec(&mut rng, layout.n_velocity);
        let j = random_vec(&mut rng, layout.n_current);
        let conv = assemble_convection_rhs(&mesh, &layout, &u);
        worst = worst.max(max_diff(&conv, dense_convection(&mesh, &layout, &u).as_slice()));
        let lor = (opts.lorentz)(&mesh, &layout, &j, &b3_varying);
        let lor_dense = dense_lorentz_matrix(&mesh, &layout, b3_varying) * DVector::from_column_slice(&j);
        worst = worst.max(max_diff(&lor, lor_dense.as_slice()));
        let cross = assemble_cross_rhs(&mesh, &layout, &u, b3_varying);
        let cross_dense = dense_cross_matrix(&mesh, &layout, b3_varying) * DVector::from_column_slice(&u);
        worst = worst.max(max_diff(&cross, cross_dense.as_slice()));
        let f = |x: f64, y: f64| [(3.0 * x).sin() + y, x * y * y];
        let fu = assemble_velocity_load(&mesh, &layout, f);
        worst = worst.max(max_diff(&fu, dense_velocity_load(&mesh, &layout, f).as_slice()));
        let fj = assemble_current_load(&mesh, &layout, f);
        worst = worst.max(max_diff(&fj, dense_current_load(&mesh, &layout, f).as_slice()));
    }
    SuiteResult::new("assembly", worst, MATRIX_TOL, "matrices and load vectors, n = 1..3".into())
}

/// Sparse factorized solves against dense LU, with random loads and data.
pub fn saddle_suite(opts: &SelftestOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x51);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for n in MESHES {
        let (mesh, layout) = setup(n);
        let ops = crate::sav_stepper::Operators::assemble(&mesh, &layout);
        let dense = DenseOperators::assemble(&mesh, &layout);
        let (c, nu) = (5.0, 0.3);
        let cases = [
            (
                "stokes",
                ops.velocity_mass.add_scaled(c, &ops.velocity_stiffness, nu),
                &dense.velocity_mass * c + &dense.velocity_stiffness * nu,
                ops.velocity_pressure_div.clone(),
                &dense.velocity_pressure_div,
                ops.pressure_weights.clone(),
                &dense.pressure_weights,
                layout.boundary_velocity_dofs.clone(),
            ),
            (
                "darcy",
                ops.rt0_mass.clone(),
                dense.rt0_mass.clone(),
                ops.rt0_div.clone(),
                &dense.rt0_div,
                ops.potential_weights.clone(),
                &dense.potential_weights,
                layout.boundary_current_dofs.clone(),
            ),
        ];
        for (name, a, a_dense, b, b_dense, w, w_dense, fixed) in cases {
            let n_primal = a.n_rows();
            let prepared = match SaddleSystem::new(a, b, Some(w), fixed.clone()).and_then(|s| s.prepare()) {
                Ok(p) => p,
                Err(e) => {
                    failures.push(format!("{name} n={n}: {e}"));
                    worst = f64::INFINITY;
                    continue;
                }
            };
            let f = random_vec(&mut rng, n_primal);
            let values = random_vec(&mut rng, fixed.len());
            let pairs: Vec<(usize, f64)> = fixed.iter().copied().zip(values.iter().copied()).collect();
            let reference = dense_saddle_solve(&a_dense, b_dense, Some(w_dense), &pairs, &f, None);
            match (prepared.solve_saddle(&f, None, &values), reference) {
                (Ok(sol), Some(r)) => {
                    worst = worst.max(max_diff(&sol.primal, &r.primal)).max(max_diff(&sol.multiplier, &r.multiplier));
                }
                (Err(e), _) => {
                    failures.push(format!("{name} n={n}: {e}"));
                    worst = f64::INFINITY;
                }
                (_, None) => failures.push(format!("{name} n={n}: dense oracle singular")),
            }
        }
    }
    let detail = if failures.is_empty() {
        "Stokes and Darcy, n = 1..3".to_string()
    } else {
        failures.join("; ")
    };
    SuiteResult::new("saddle-solves", worst, SOLVE_TOL, detail)
}

/// `J·cross(u) + u·lorentz(J) = 0` for random coefficient pairs.
pub fn duality_suite(opts: &SelftestOptions) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xd0a1);
    let (mesh, layout) = setup(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let u = random_vec(&mut rng, layout.n_velocity);
        let j = random_vec(&mut rng, layout.n_current);
        let cross = assemble_cross_rhs(&mesh, &layout, &u, b3_varying);
        let lor = (opts.lorentz)(&mesh, &layout, &j, &b3_varying);
        worst = worst.max((dot(&j, &cross) + dot(&u, &lor)).abs());
    }
    SuiteResult::new("duality", worst, DUALITY_TOL, "100 random pairs, n = 3".into())
}

fn collect_run(problem: ProblemDefinition, mut config: SchemeConfig, split: SplitCoefficient, n: usize) -> Result<Vec<StepReport>, String> {
    config.split = split;
    let stepper = SavStepper::new(build_unit_square_mesh(n).map_err(|e| e.to_string())?, problem, config)
        .map_err(|e| e.to_string())?;
    stepper.run(|_, _| {}).into_result().map(|(_, r)| r).map_err(|e| e.to_string())
}

/// Short runs behind the identity suites: the decaying vortex with both
/// orders, plus the manufactured problem with BDF2.
struct IdentityRuns {
    homogeneous: Vec<(SchemeOrder, Vec<StepReport>)>,
    manufactured: Vec<StepReport>,
    errors: Vec<String>,
}

fn identity_runs(opts: &SelftestOptions) -> IdentityRuns {
    let mut out = IdentityRuns {
        homogeneous: Vec::new(),
        manufactured: Vec::new(),
        errors: Vec::new(),
    };
    for order in [SchemeOrder::First, SchemeOrder::Second] {
        let p = stability_problem_2d(20.0, 20.0);
        let cfg = SchemeConfig::for_problem(&p, order, 0.1);
        match collect_run(p, cfg, opts.split, 3) {
            Ok(r) => out.homogeneous.push((order, r)),
            Err(e) => out.errors.push(format!("vortex order {}: {e}", order.number())),
        }
    }
    let p = accuracy_problem_2d();
    let cfg = SchemeConfig::for_problem(&p, SchemeOrder::Second, 0.1);
    match collect_run(p, cfg, opts.split, 3) {
        Ok(r) => out.manufactured = r,
        Err(e) => out.errors.push(format!("manufactured BDF2: {e}")),
    }
    out
}

fn fold_reports<'a>(reports: impl Iterator<Item = &'a StepReport>, f: impl Fn(&StepReport) -> f64) -> f64 {
    reports.map(f).fold(0.0, f64::max)
}

/// Runs every suite with `opts`.
pub fn run_selftest(opts: &SelftestOptions) -> Vec<SuiteResult> {
    let mut results = vec![assembly_suite(opts), saddle_suite(opts), duality_suite(opts)];
    let runs = identity_runs(opts);
    let note = |base: &str| {
        if runs.errors.is_empty() {
            base.to_string()
        } else {
            format!("{base}; {}", runs.errors.join("; "))
        }
    };
    let penalty = if runs.errors.is_empty() { 0.0 } else { f64::INFINITY };
    let all = || runs.homogeneous.iter().flat_map(|(_, r)| r.iter()).chain(runs.manufactured.iter());

    // Steps whose u2 and J2 are rounding noise are judged against their
    // floor: the residual is shrunk by tol / floor when the floor is larger.
    let a2 = all()
        .map(|r| r.a2_identity_residual * (A2_TOL / r.a2_rounding_floor).min(1.0))
        .fold(penalty, f64::max);
    let raw = all().map(|r| r.a2_identity_residual).fold(0.0, f64::max);
    let floored = all().filter(|r| r.a2_rounding_floor > A2_TOL).count();
    let min_denominator = all().map(|r| r.denominator).fold(f64::INFINITY, f64::min);
    let a2_worst = if min_denominator > 0.0 { a2 } else { f64::INFINITY };
    results.push(SuiteResult::new(
        "a2-identity",
        a2_worst,
        A2_TOL,
        note(&format!(
            "smallest denominator {min_denominator:.3e}, raw worst {raw:.3e}, {floored} steps with a floor above tolerance"
        )),
    ));
    let energy = runs
        .homogeneous
        .iter()
        .flat_map(|(_, r)| r.iter())
        .map(|r| r.energy_identity_residual.abs())
        .fold(penalty, f64::max);
    results.push(SuiteResult::new("energy-identity", energy, ENERGY_TOL, note("vortex, both orders, n = 3")));
    let div = fold_reports(all(), |r| r.max_div_j).max(penalty);
    results.push(SuiteResult::new("charge-conservation", div, DIV_TOL, note("all identity runs")));
    let coupled = fold_reports(runs.manufactured.iter(), |r| r.coupled.max()).max(penalty);
    results.push(SuiteResult::new(
        "coupled-residual",
        coupled,
        COUPLED_TOL,
        note("manufactured problem, BDF2, n = 3"),
    ));
    results
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_checkout_passes() {
        for r in run_selftest(&SelftestOptions::default()) {
            assert!(r.passed, "{r}");
        }
    }

    #[test]
    fn flipped_lorentz_sign_fails_duality() {
        let opts = SelftestOptions {
            lorentz: Box::new(|mesh, layout, j, b3| {
                assemble_lorentz_rhs(mesh, layout, j, b3).into_iter().map(|v| -v).collect()
            }),
            ..SelftestOptions::default()
        };
        assert!(!duality_suite(&opts).passed);
    }

    #[test]
    fn backward_split_coefficient_fails_coupled_residual() {
        let opts = SelftestOptions {
            split: SplitCoefficient::Backward,
            ..SelftestOptions::default()
        };
        let results = run_selftest(&opts);
        let coupled = results.iter().find(|r| r.name == "coupled-residual").unwrap();
        assert!(!coupled.passed, "{coupled}");
    }
}
