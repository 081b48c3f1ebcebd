use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use savmhd::diagnostics::{parse_energy_csv, parse_error_table_csv};

fn savmhd(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_savmhd"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn final_u_rate(dir: &Path, order: u8) -> f64 {
    let text = fs::read_to_string(dir.join(format!("accuracy_order{order}.csv"))).unwrap();
    let rows = parse_error_table_csv(&text).unwrap();
    assert_eq!(rows.len(), 5);
    rows.last().unwrap().rates.unwrap().u_l2
}

#[test]
fn accuracy_defaults_reach_first_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = savmhd(&["accuracy"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rate = final_u_rate(dir.path(), 1);
    assert!((0.85..=1.15).contains(&rate), "rate {rate}");
    let script = fs::read_to_string(dir.path().join("accuracy_order1.gp")).unwrap();
    assert!(script.contains("'accuracy_order1.csv'"));
}

#[test]
fn accuracy_order_two_reaches_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = savmhd(&["accuracy", "--order", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rate = final_u_rate(dir.path(), 2);
    assert!((1.8..=2.2).contains(&rate), "rate {rate}");
}

#[test]
fn single_tau_leaves_rate_cells_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = savmhd(&["accuracy", "--tau", "0.1"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("accuracy_order1.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].ends_with(",,,,,,"));
}

#[test]
fn identical_flags_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["accuracy", "--order", "2", "--mesh-n", "4", "--tau", "0.25", "--tau", "0.125"];
    assert!(savmhd(&args, a.path()).status.success());
    assert!(savmhd(&args, b.path()).status.success());
    let read = |d: &Path| fs::read(d.join("accuracy_order2.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn stability_writes_monotone_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = savmhd(
        &["stability", "--mesh-n", "6", "--re", "20", "--tau", "0.5", "--tau", "0.1"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traces = parse_energy_csv(&fs::read_to_string(dir.path().join("energy_1_20.csv")).unwrap()).unwrap();
    assert_eq!(traces.len(), 2);
    assert_eq!(traces[0].points.len(), 7);
    assert!(traces.iter().all(|t| t.is_monotone(1e-12)));
    assert!(dir.path().join("energy_1_20.gp").exists());
}

#[test]
fn cavity_writes_snapshots_and_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = savmhd(&["cavity2d", "--mesh-n", "8", "--tau", "0.05"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["cavity_u_t0p1.csv", "cavity_u_t1.csv", "cavity_u_t2.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().next(), Some("x,y,u1,u2"));
        assert_eq!(text.lines().count(), 1 + 81);
    }
    let profile = fs::read_to_string(dir.path().join("cavity_centerline.csv")).unwrap();
    // the lid drives u1 = 1 at the top of the vertical center line
    let top: Vec<f64> = profile.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(top[0], 1.0);
    assert!((top[1] - 1.0).abs() < 1e-12);
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_savmhd")).arg("selftest").current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 7, "{text}");
}

#[test]
fn operational_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // 0.3 does not divide T = 1
    assert_eq!(savmhd(&["accuracy", "--tau", "0.3"], dir.path()).status.code(), Some(1));
    assert_eq!(savmhd(&["accuracy", "--order", "3"], dir.path()).status.code(), Some(1));
    assert_eq!(savmhd(&["accuracy", "--mesh-n", "0"], dir.path()).status.code(), Some(1));
    assert_eq!(savmhd(&["accuracy", "--bogus"], dir.path()).status.code(), Some(1));
}
