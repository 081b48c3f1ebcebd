//! The split stepper against one monolithic dense solve of the coupled
//! scheme, plus run-level behaviour.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use savmhd::diagnostics::{compute_errors, energy_csv, error_table_csv};
use savmhd::experiments::{accuracy_sweep, stability_sweep};
use savmhd::fem::boundary::{interpolate_current, interpolate_velocity};
use savmhd::fem::{DofLayout, FieldVector, Space};
use savmhd::mesh::{build_unit_square_mesh, Mesh};
use savmhd::oracle::{dense_convection, dense_cross_matrix, dense_lorentz_matrix, DenseOperators};
use savmhd::problems::{accuracy_problem_2d, stability_problem_2d, ProblemDefinition};
use savmhd::sav_stepper::{SavState, SavStepper, SchemeConfig, SchemeOrder};
use savmhd::Error;

/// Solves the undecoupled step for `(u, p, J, phi, q)` at once: the scheme is
/// linear in the new level once `q` multiplies the explicit terms.
/// `ue`, `je` are the explicit fields, `history` the velocity history (already
/// divided by the step), `c_tau`, `c_q`, `q_hist` the scalar coefficients.
/// Homogeneous data and no forcing only.
#[allow(clippy::too_many_arguments)]
fn monolithic_step(
    mesh: &Mesh,
    layout: &DofLayout,
    re: f64,
    kappa: f64,
    big_t: f64,
    t1: f64,
    ue: &[f64],
    je: &[f64],
    history: &[f64],
    c_tau: f64,
    c_q: f64,
    q_hist: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64) {
    let d = DenseOperators::assemble(mesh, layout);
    let (nu_, np, nj, nphi) = (layout.n_velocity, layout.n_pressure, layout.n_current, layout.n_potential);
    let conv = dense_convection(mesh, layout, ue);
    let lor = dense_lorentz_matrix(mesh, layout, |x, y| b3(x, y, t1)) * DVector::from_column_slice(je);
    let cross = dense_cross_matrix(mesh, layout, |x, y| b3(x, y, t1)) * DVector::from_column_slice(ue);
    let growth = (t1 / big_t).exp();

    // unknown ordering: u, p, lambda, J, phi, mu, q
    let (ip, il, ij, iphi, imu, iq) = (nu_, nu_ + np, nu_ + np + 1, nu_ + np + 1 + nj, nu_ + np + 1 + nj + nphi, nu_ + np + 2 + nj + nphi);
    let dim = iq + 1;
    let mut k = DMatrix::<f64>::zeros(dim, dim);
    let mut b = DVector::<f64>::zeros(dim);

    let a = &d.velocity_mass * c_tau + &d.velocity_stiffness / re;
    k.view_mut((0, 0), (nu_, nu_)).copy_from(&a);
    k.view_mut((0, ip), (nu_, np)).copy_from(&(-d.velocity_pressure_div.transpose()));
    let explicit_u = &lor * kappa - &conv;
    for i in 0..nu_ {
        k[(i, iq)] = -growth * explicit_u[i];
    }
    b.rows_mut(0, nu_).copy_from(&(&d.velocity_mass * DVector::from_column_slice(history)));

    k.view_mut((ip, 0), (np, nu_)).copy_from(&(-&d.velocity_pressure_div));
    for i in 0..np {
        k[(ip + i, il)] = d.pressure_weights[i];
        k[(il, ip + i)] = d.pressure_weights[i];
    }

    k.view_mut((ij, ij), (nj, nj)).copy_from(&d.rt0_mass);
    k.view_mut((ij, iphi), (nj, nphi)).copy_from(&(-d.rt0_div.transpose()));
    for i in 0..nj {
        k[(ij + i, iq)] = -growth * cross[i];
    }
    k.view_mut((iphi, ij), (nphi, nj)).copy_from(&(-&d.rt0_div));
    for i in 0..nphi {
        k[(iphi + i, imu)] = d.potential_weights[i];
        k[(imu, iphi + i)] = d.potential_weights[i];
    }

    // c_q q - growth (conv·u - kappa lor·u - kappa cross·J) = q_hist
    k[(iq, iq)] = c_q;
    for i in 0..nu_ {
        k[(iq, i)] = -growth * (conv[i] - kappa * lor[i]);
    }
    for i in 0..nj {
        k[(iq, ij + i)] = growth * kappa * cross[i];
    }
    b[iq] = q_hist;

    let fixed = layout
        .boundary_velocity_dofs
        .iter()
        .copied()
        .chain(layout.boundary_current_dofs.iter().map(|&e| ij + e));
    for dof in fixed {
        k.row_mut(dof).fill(0.0);
        k[(dof, dof)] = 1.0;
        b[dof] = 0.0;
    }
    let x = k.lu().solve(&b).expect("monolithic system is nonsingular");
    let part = |from: usize, len: usize| x.rows(from, len).iter().copied().collect::<Vec<f64>>();
    (part(0, nu_), part(ip, np), part(ij, nj), part(iphi, nphi), x[iq])
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn b3(x: f64, y: f64, _t: f64) -> f64 {
    1.0 + 0.5 * x * y
}

fn vortex_stepper(order: SchemeOrder, n: usize, tau: f64, t_final: f64) -> SavStepper {
    let problem = stability_problem_2d(20.0, 20.0);
    SavStepper::new(build_unit_square_mesh(n).unwrap(), problem, SchemeConfig::new(order, tau, t_final, 20.0, 20.0)).unwrap()
}

/// The vortex under a varying field: with constant `B3` the induced current
/// is a discrete gradient and `J` is rounding noise.
fn varying_field_stepper(order: SchemeOrder, n: usize, tau: f64, t_final: f64) -> SavStepper {
    let mut problem = stability_problem_2d(20.0, 20.0);
    problem.b3 = Arc::new(b3);
    let mesh = build_unit_square_mesh(n).unwrap();
    SavStepper::new(mesh, problem, SchemeConfig::new(order, tau, t_final, 20.0, 20.0)).unwrap()
}

fn assert_matches(state: &SavState, dense: &(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64)) {
    let jmax = dense.2.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(jmax > 1e-4, "current is trivial: {jmax}");
    assert!(max_rel(&state.u.values, &dense.0) < 1e-10, "u {}", max_rel(&state.u.values, &dense.0));
    assert!(max_rel(&state.p.values, &dense.1) < 1e-10, "p {}", max_rel(&state.p.values, &dense.1));
    assert!(max_rel(&state.j.values, &dense.2) < 1e-10, "J {}", max_rel(&state.j.values, &dense.2));
    assert!(max_rel(&state.phi.values, &dense.3) < 1e-10, "phi {}", max_rel(&state.phi.values, &dense.3));
    assert!((state.q - dense.4).abs() < 1e-12, "q {} vs {}", state.q, dense.4);
}

#[test]
fn first_order_step_equals_monolithic_solve() {
    let (tau, big_t) = (0.1, 3.0);
    let st = varying_field_stepper(SchemeOrder::First, 3, tau, big_t);
    let mut state = st.init_state().unwrap();
    for _ in 0..3 {
        let (next, _) = st.step(&state).unwrap();
        let un = &state.u.values;
        let history: Vec<f64> = un.iter().map(|v| v / tau).collect();
        let dense = monolithic_step(
            st.mesh(),
            st.layout(),
            20.0,
            20.0,
            big_t,
            next.t,
            un,
            &state.j.values,
            &history,
            1.0 / tau,
            (big_t + tau) / (big_t * tau),
            state.q / tau,
        );
        assert_matches(&next, &dense);
        state = next;
    }
}

#[test]
fn bdf2_step_equals_monolithic_solve() {
    let (tau, big_t) = (0.1, 3.0);
    let st = varying_field_stepper(SchemeOrder::Second, 3, tau, big_t);
    let mut state = st.step(&st.init_state().unwrap()).unwrap().0;
    for _ in 0..3 {
        let (next, report) = st.step(&state).unwrap();
        assert_eq!(report.order, SchemeOrder::Second);
        let prev = state.prev.as_ref().unwrap();
        let ue = state.u.combine(2.0, &prev.u, -1.0).values;
        let je = state.j.combine(2.0, &prev.j, -1.0).values;
        let history = state.u.combine(2.0 / tau, &prev.u, -0.5 / tau).values;
        let dense = monolithic_step(
            st.mesh(),
            st.layout(),
            20.0,
            20.0,
            big_t,
            next.t,
            &ue,
            &je,
            &history,
            1.5 / tau,
            1.5 / tau + 1.0 / big_t,
            (4.0 * state.q - prev.q) / (2.0 * tau),
        );
        assert_matches(&next, &dense);
        state = next;
    }
}

#[test]
fn single_step_run_equals_manual_step() {
    let st = vortex_stepper(SchemeOrder::First, 3, 0.25, 0.25);
    let (final_state, reports) = st.run(|_, _| {}).into_result().unwrap();
    let manual = st.step(&st.init_state().unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(final_state, manual.0);
    assert_eq!(reports[0], manual.1);
}

#[test]
fn second_order_single_step_equals_first_order() {
    let first = vortex_stepper(SchemeOrder::First, 3, 0.25, 0.25).run(|_, _| {});
    let second = vortex_stepper(SchemeOrder::Second, 3, 0.25, 0.25).run(|_, _| {});
    assert_eq!(first.final_state, second.final_state);
    assert_eq!(second.reports[0].order, SchemeOrder::First);
}

#[test]
fn observer_sees_every_level() {
    let st = vortex_stepper(SchemeOrder::Second, 2, 0.5, 3.0);
    let mut seen = Vec::new();
    let out = st.run(|s, r| seen.push((s.n, r.is_some())));
    assert!(out.failure.is_none());
    assert_eq!(seen.len(), 7);
    assert_eq!(seen[0], (0, false));
    assert!(seen[1..].iter().enumerate().all(|(k, &(n, has))| n == k + 1 && has));
}

#[test]
fn zero_initial_data_only_decays_q() {
    let mut problem = stability_problem_2d(20.0, 20.0);
    problem.u0 = Arc::new(|_, _, _| [0.0, 0.0]);
    let (tau, big_t) = (0.1, 1.0);
    let mesh = build_unit_square_mesh(3).unwrap();
    let st = SavStepper::new(mesh, problem, SchemeConfig::new(SchemeOrder::First, tau, big_t, 20.0, 20.0)).unwrap();
    let (_, reports) = st.run(|_, _| {}).into_result().unwrap();
    // with no flow q^{n+1} = q^n T / (T + tau)
    let ratio: f64 = big_t / (big_t + tau);
    for r in &reports {
        let q = ratio.powi(r.n as i32);
        assert!((r.energy - 0.5 * q * q).abs() < 1e-15, "step {}", r.n);
    }
}

#[test]
fn interpolated_exact_fields_have_no_u_or_j_error() {
    let problem = accuracy_problem_2d();
    let mesh = build_unit_square_mesh(4).unwrap();
    let layout = DofLayout::new(&mesh);
    let ex = problem.exact.as_ref().unwrap();
    let t = 0.7;
    let state = SavState {
        n: 0,
        t,
        u: FieldVector::new(Space::Velocity, interpolate_velocity(&mesh, &layout, |x, y| (ex.u)(x, y, t))),
        p: FieldVector::zeros(&layout, Space::Pressure),
        j: FieldVector::new(Space::Current, interpolate_current(&mesh, &layout, |x, y| (ex.j)(x, y, t))),
        phi: FieldVector::zeros(&layout, Space::Potential),
        q: (-t / 1.0_f64).exp(),
        prev: None,
    };
    let e = compute_errors(&mesh, &layout, &state, &problem, 1.0, 0.1).unwrap();
    assert!(e.err_u_l2 <= 1e-12 && e.err_u_h1 <= 1e-12, "{e:?}");
    assert!(e.err_j_div <= 1e-12, "{e:?}");
    assert_eq!(e.err_q_abs, 0.0);
    // both exact scalars are spatially constant, so their zero-mean parts vanish
    assert!(e.err_p_l2 <= 1e-13 && e.err_phi_l2 <= 1e-13, "{e:?}");
}

#[test]
fn errors_need_an_exact_solution() {
    let problem: ProblemDefinition = stability_problem_2d(20.0, 20.0);
    let st = vortex_stepper(SchemeOrder::First, 1, 0.5, 3.0);
    let s = st.init_state().unwrap();
    let err = compute_errors(st.mesh(), st.layout(), &s, &problem, 3.0, 0.5).unwrap_err();
    assert!(matches!(err, Error::NoExactSolution(_)));
}

#[test]
fn step_not_dividing_final_time_is_rejected() {
    let problem = stability_problem_2d(20.0, 20.0);
    let mesh = build_unit_square_mesh(2).unwrap();
    let err = SavStepper::new(mesh, problem, SchemeConfig::new(SchemeOrder::First, 0.7, 3.0, 20.0, 20.0)).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)), "{err:?}");
}

#[test]
fn single_tau_table_has_no_rates() {
    let sweep = accuracy_sweep(SchemeOrder::First, 2, 1.0, 1.0, 1.0, &[0.25]).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    assert!(sweep.rows[0].rates.is_none());
    let csv = error_table_csv(&sweep.rows);
    assert!(csv.lines().nth(1).unwrap().ends_with(",,,,,,"));
}

#[test]
fn identical_runs_write_identical_tables() {
    let a = accuracy_sweep(SchemeOrder::Second, 3, 1.0, 1.0, 1.0, &[0.25, 0.125]).unwrap();
    let b = accuracy_sweep(SchemeOrder::Second, 3, 1.0, 1.0, 1.0, &[0.25, 0.125]).unwrap();
    assert_eq!(error_table_csv(&a.rows), error_table_csv(&b.rows));
    let c = stability_sweep(SchemeOrder::First, 3, 20.0, 20.0, 1.0, &[0.5, 0.25]).unwrap();
    let d = stability_sweep(SchemeOrder::First, 3, 20.0, 20.0, 1.0, &[0.5, 0.25]).unwrap();
    assert_eq!(energy_csv(&c.traces), energy_csv(&d.traces));
}
