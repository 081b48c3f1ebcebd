use approx::assert_relative_eq;
use proptest::prelude::*;

use savmhd::diagnostics::{
    convergence_table, energy_csv, error_table_csv, parse_energy_csv, parse_error_table_csv, EnergyPoint,
    EnergyTrace, ErrorRecord,
};
use savmhd::fem::forms::{assemble_cross_rhs, assemble_lorentz_rhs};
use savmhd::fem::DofLayout;
use savmhd::mesh::{build_unit_square_mesh, validate_mesh};
use savmhd::problems::accuracy_problem_2d_with;

/// Rounds to the 12 significant digits the CSV files carry.
fn twelve(v: f64) -> f64 {
    format!("{v:.11e}").parse().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    // The forcing must make the closed-form fields solve the continuous
    // equations: check with central differences of the exact fields.
    #[test]
    fn forcing_matches_exact_fields(x in 0.0..1.0f64, y in 0.0..1.0f64, t in 0.0..1.0f64,
                                    re in 0.5..50.0f64, kappa in 0.5..50.0f64) {
        let p = accuracy_problem_2d_with(re, kappa);
        let ex = p.exact.as_ref().unwrap();
        let d = 1e-5;
        let u = (ex.u)(x, y, t);
        let dt = |c: usize| ((ex.u)(x, y, t + d)[c] - (ex.u)(x, y, t - d)[c]) / (2.0 * d);
        let dx = |c: usize| ((ex.u)(x + d, y, t)[c] - (ex.u)(x - d, y, t)[c]) / (2.0 * d);
        let dy = |c: usize| ((ex.u)(x, y + d, t)[c] - (ex.u)(x, y - d, t)[c]) / (2.0 * d);
        let lap = |c: usize| {
            ((ex.u)(x + d, y, t)[c] + (ex.u)(x - d, y, t)[c] + (ex.u)(x, y + d, t)[c] + (ex.u)(x, y - d, t)[c]
                - 4.0 * u[c]) / (d * d)
        };
        let gp = [((ex.p)(x + d, y, t) - (ex.p)(x - d, y, t)) / (2.0 * d), ((ex.p)(x, y + d, t) - (ex.p)(x, y - d, t)) / (2.0 * d)];
        let gphi = [((ex.phi)(x + d, y, t) - (ex.phi)(x - d, y, t)) / (2.0 * d), ((ex.phi)(x, y + d, t) - (ex.phi)(x, y - d, t)) / (2.0 * d)];
        let j = (ex.j)(x, y, t);
        let b = (p.b3)(x, y, t);
        let j_cross_b = [j[1] * b, -j[0] * b];
        let u_cross_b = [u[1] * b, -u[0] * b];
        let fu = p.f_u.as_ref().unwrap()(x, y, t);
        let fj = p.f_j.as_ref().unwrap()(x, y, t);
        for c in 0..2 {
            let lhs = dt(c) + u[0] * dx(c) + u[1] * dy(c) - lap(c) / re + gp[c] - kappa * j_cross_b[c];
            prop_assert!((lhs - fu[c]).abs() < 1e-5, "momentum {c}: {lhs} vs {}", fu[c]);
            let ohm = j[c] + gphi[c] - u_cross_b[c];
            prop_assert!((ohm - fj[c]).abs() < 1e-8, "Ohm {c}: {ohm} vs {}", fj[c]);
        }
        let div_u = dx(0) + dy(1);
        prop_assert!(div_u.abs() < 1e-8);
    }

    #[test]
    fn coupling_terms_cancel(n in 1usize..=3, seed in any::<u64>(), a in -2.0..2.0f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mesh = build_unit_square_mesh(n).unwrap();
        let layout = DofLayout::new(&mesh);
        let u: Vec<f64> = (0..layout.n_velocity).map(|_| rng.random_range(-1.0..1.0)).collect();
        let j: Vec<f64> = (0..layout.n_current).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b3 = |x: f64, y: f64| 1.0 + a * x * y;
        let cross = assemble_cross_rhs(&mesh, &layout, &u, b3);
        let lorentz = assemble_lorentz_rhs(&mesh, &layout, &j, b3);
        let s: f64 = cross.iter().zip(&j).map(|(c, v)| c * v).sum::<f64>()
            + lorentz.iter().zip(&u).map(|(l, v)| l * v).sum::<f64>();
        prop_assert!(s.abs() < 1e-12, "duality defect {s}");
    }

    #[test]
    fn rates_ignore_uniform_scaling(e in proptest::collection::vec(1e-8..1.0f64, 2..6), k in 1e-3..1e3f64) {
        let rows = |scale: f64| -> Vec<ErrorRecord> {
            e.iter().enumerate().map(|(i, &v)| ErrorRecord {
                tau: 0.2 / f64::from(1u32 << i),
                err_u_l2: scale * v,
                err_u_h1: scale * v,
                err_p_l2: scale * v,
                err_j_div: scale * v,
                err_phi_l2: scale * v,
                err_q_abs: scale * v,
                rates: None,
            }).collect()
        };
        let a = convergence_table(&rows(1.0));
        let b = convergence_table(&rows(k));
        prop_assert!(a[0].rates.is_none());
        for (ra, rb) in a.iter().zip(&b).skip(1) {
            for (x, y) in ra.rates.unwrap().to_array().iter().zip(rb.rates.unwrap().to_array()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn error_table_round_trips(v in proptest::collection::vec(1e-12..10.0f64, 6 * 3)) {
        let rows: Vec<ErrorRecord> = v.chunks(6).enumerate().map(|(i, c)| ErrorRecord {
            tau: 0.1 / f64::from(1u32 << i),
            err_u_l2: twelve(c[0]),
            err_u_h1: twelve(c[1]),
            err_p_l2: twelve(c[2]),
            err_j_div: twelve(c[3]),
            err_phi_l2: twelve(c[4]),
            err_q_abs: twelve(c[5]),
            rates: None,
        }).collect();
        let table = convergence_table(&rows);
        let parsed = parse_error_table_csv(&error_table_csv(&table)).unwrap();
        prop_assert_eq!(parsed.len(), table.len());
        for (p, r) in parsed.iter().zip(&table) {
            prop_assert_eq!(p.tau, r.tau);
            prop_assert_eq!(p.err_u_l2, r.err_u_l2);
            prop_assert_eq!(p.err_q_abs, r.err_q_abs);
            prop_assert_eq!(p.rates.is_some(), r.rates.is_some());
            if let (Some(a), Some(b)) = (p.rates, r.rates) {
                for (x, y) in a.to_array().iter().zip(b.to_array()) {
                    prop_assert!((x - y).abs() <= 1e-10 * y.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn energy_table_round_trips(e in proptest::collection::vec(0.0..2.0f64, 1..20)) {
        let trace = |tau: f64| EnergyTrace {
            tau,
            points: e.iter().enumerate().map(|(n, &v)| EnergyPoint {
                n,
                t: twelve(n as f64 * tau),
                energy: twelve(v),
                energy_bdf: (n > 0).then(|| twelve(0.5 * v)),
            }).collect(),
        };
        let traces = vec![trace(0.5), trace(0.25)];
        prop_assert_eq!(parse_energy_csv(&energy_csv(&traces)).unwrap(), traces);
    }

    #[test]
    fn meshes_are_valid_and_tile_the_square(n in 1usize..40) {
        let mesh = build_unit_square_mesh(n).unwrap();
        prop_assert!(validate_mesh(&mesh).is_empty());
        let area: f64 = (0..mesh.n_triangles()).map(|t| mesh.signed_area(t)).sum();
        prop_assert!((area - 1.0).abs() < 1e-12);
        // Euler characteristic of a disk
        prop_assert_eq!(mesh.n_vertices() + mesh.n_triangles(), mesh.n_edges() + 1);
    }
}

#[test]
fn rate_of_table_one_pair() {
    // finest pair of the first-order table: 2.48e-5 -> 1.24e-5
    let rows = convergence_table(&[
        ErrorRecord { tau: 0.025, err_u_l2: 2.48e-5, ..Default::default() },
        ErrorRecord { tau: 0.0125, err_u_l2: 1.24e-5, ..Default::default() },
    ]);
    assert_relative_eq!(rows[1].rates.unwrap().u_l2, 1.0, epsilon = 1e-12);
}
