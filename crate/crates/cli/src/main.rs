use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use savmhd::diagnostics::{accuracy_plot_script, energy_csv, energy_plot_script, error_table_csv, write_text};
use savmhd::experiments::{
    accuracy_sweep, cavity_run, centerline_csv, snapshot_csv, stability_sweep, steady_residual_csv, time_label,
    InvariantSummary, ACCURACY_MESH_N, ACCURACY_TAUS, CAVITY_MESH_N, CAVITY_SAMPLE_TIMES, CAVITY_TAU,
    STABILITY_MESH_N, STABILITY_PARAMETERS, STABILITY_TAUS,
};
use savmhd::sav_stepper::SchemeOrder;
use savmhd::selftest::{run_selftest, SelftestOptions};
use savmhd::Error;

/// Energy may not grow by more than this between consecutive levels.
const ENERGY_SLACK: f64 = 1e-12;

#[derive(Parser, Debug)]
#[command(name = "savmhd", version, about = "SAV finite element schemes for inductionless MHD in 2D")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time-convergence table on the manufactured solution.
    Accuracy(RunArgs),
    /// Energy traces of the decaying vortex.
    Stability(RunArgs),
    /// Lid-driven cavity with velocity snapshots and center line profiles.
    Cavity2d(RunArgs),
    /// Dense-oracle and identity checks on meshes with n <= 3.
    Selftest,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Scheme order, 1 (backward Euler) or 2 (BDF2).
    #[arg(long, default_value_t = 1)]
    order: u8,
    /// Cells per side of the unit square.
    #[arg(long)]
    mesh_n: Option<usize>,
    /// Time step; repeat for a sweep.
    #[arg(long = "tau")]
    tau: Vec<f64>,
    #[arg(long)]
    re: Option<f64>,
    /// Defaults to Re for the stability runs.
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

/// Outcome of a command that ran to the end.
enum Verdict {
    Ok,
    Violated(String),
}

fn main() -> ExitCode {
    // exit code 2 is reserved for invariant violations, so usage errors get 1
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Accuracy(a) => cmd_accuracy(&a),
        Command::Stability(a) => cmd_stability(&a),
        Command::Cavity2d(a) => cmd_cavity2d(&a),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(Verdict::Ok) => ExitCode::SUCCESS,
        Ok(Verdict::Violated(msg)) => {
            eprintln!("invariant violated: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            // a nonpositive SAV denominator is an invariant failure, not an operational one
            if let Some(Error::NonPositiveDenominator { .. }) = e.downcast_ref::<Error>() {
                eprintln!("invariant violated: {e:#}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn order(args: &RunArgs) -> anyhow::Result<SchemeOrder> {
    Ok(SchemeOrder::from_number(args.order)?)
}

fn taus(args: &RunArgs, defaults: &[f64]) -> Vec<f64> {
    if args.tau.is_empty() {
        defaults.to_vec()
    } else {
        args.tau.clone()
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    write_text(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report_invariants(s: &InvariantSummary) {
    println!(
        "{} steps: min denominator {:.3e}, A2 identity {:.2e}, div J {:.2e}, coupled residual {:.2e}, solver residual {:.2e}",
        s.steps, s.min_denominator, s.max_a2_identity, s.max_div_j, s.max_coupled, s.max_solver_residual
    );
}

fn denominator_check(s: &InvariantSummary) -> Option<String> {
    (s.steps > 0 && !s.denominators_positive())
        .then(|| format!("SAV denominator reached {:.3e}", s.min_denominator))
}

fn cmd_accuracy(args: &RunArgs) -> anyhow::Result<Verdict> {
    let order = order(args)?;
    let taus = taus(args, &ACCURACY_TAUS);
    let mesh_n = args.mesh_n.unwrap_or(ACCURACY_MESH_N);
    let sweep = accuracy_sweep(
        order,
        mesh_n,
        args.re.unwrap_or(1.0),
        args.kappa.unwrap_or(1.0),
        args.t_final.unwrap_or(1.0),
        &taus,
    )?;

    let name = format!("accuracy_order{}.csv", order.number());
    // rows finished before a failure are written regardless
    write(&args.out, &name, &error_table_csv(&sweep.rows))?;
    write(
        &args.out,
        &format!("accuracy_order{}.gp", order.number()),
        &accuracy_plot_script(&name, &format!("order {} errors, h = 1/{mesh_n}", order.number())),
    )?;
    for r in &sweep.rows {
        let rate = r.rates.map(|x| format!("{:.3}", x.u_l2)).unwrap_or_else(|| "-".into());
        println!("tau {:<8} err_u_l2 {:.4e} rate {rate}", r.tau, r.err_u_l2);
    }
    report_invariants(&sweep.invariants);
    if let Some(e) = sweep.failure {
        return Err(e).context("accuracy sweep stopped early");
    }
    Ok(denominator_check(&sweep.invariants).map_or(Verdict::Ok, Verdict::Violated))
}

fn cmd_stability(args: &RunArgs) -> anyhow::Result<Verdict> {
    let order = order(args)?;
    let taus = taus(args, &STABILITY_TAUS);
    let mesh_n = args.mesh_n.unwrap_or(STABILITY_MESH_N);
    let t_final = args.t_final.unwrap_or(3.0);
    let pairs: Vec<(f64, f64)> = match (args.re, args.kappa) {
        (Some(re), kappa) => vec![(re, kappa.unwrap_or(re))],
        (None, Some(kappa)) => STABILITY_PARAMETERS.iter().map(|&re| (re, kappa)).collect(),
        (None, None) => STABILITY_PARAMETERS.iter().map(|&re| (re, re)).collect(),
    };

    let mut violations = Vec::new();
    for (re, kappa) in pairs {
        let sweep = stability_sweep(order, mesh_n, re, kappa, t_final, &taus)?;
        let name = format!("energy_{}_{re}.csv", order.number());
        write(&args.out, &name, &energy_csv(&sweep.traces))?;
        let done: Vec<f64> = sweep.traces.iter().map(|t| t.tau).collect();
        write(
            &args.out,
            &format!("energy_{}_{re}.gp", order.number()),
            &energy_plot_script(&name, &format!("order {}, Re = {re}, kappa = {kappa}", order.number()), &done),
        )?;
        for tr in &sweep.traces {
            let inc = tr.max_increase();
            println!("Re {re} kappa {kappa} tau {:<6} max energy increase {inc:.3e}", tr.tau);
            if !tr.is_monotone(ENERGY_SLACK) {
                violations.push(format!("energy grew by {inc:.3e} (Re {re}, tau {})", tr.tau));
            }
        }
        report_invariants(&sweep.invariants);
        if let Some(e) = sweep.failure {
            return Err(e).context(format!("stability run Re {re} stopped early"));
        }
        violations.extend(denominator_check(&sweep.invariants));
    }
    Ok(if violations.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Violated(violations.join("; "))
    })
}

fn cmd_cavity2d(args: &RunArgs) -> anyhow::Result<Verdict> {
    let order = order(args)?;
    let tau = match args.tau.as_slice() {
        [] => CAVITY_TAU,
        [tau] => *tau,
        _ => bail!("cavity2d takes a single --tau"),
    };
    let mesh_n = args.mesh_n.unwrap_or(CAVITY_MESH_N);
    let run = cavity_run(
        order,
        mesh_n,
        tau,
        args.t_final.unwrap_or(2.0),
        args.re.unwrap_or(200.0),
        args.kappa.unwrap_or(10.0),
        &CAVITY_SAMPLE_TIMES,
    )?;
    for snap in &run.snapshots {
        write(&args.out, &format!("cavity_u_t{}.csv", time_label(snap.sample)), &snapshot_csv(snap))?;
    }
    write(&args.out, "cavity_centerline.csv", &centerline_csv(&run.centerline))?;
    write(&args.out, "cavity_steady.csv", &steady_residual_csv(&run.steady_residual))?;
    if let (Some(first), Some(last)) = (run.steady_residual.first(), run.steady_residual.last()) {
        println!("steady residual {:.3e} at t = {} -> {:.3e} at t = {}", first.1, first.0, last.1, last.0);
    }
    report_invariants(&run.invariants);
    if let Some(e) = run.failure {
        return Err(e).context("cavity run stopped early");
    }
    Ok(denominator_check(&run.invariants).map_or(Verdict::Ok, Verdict::Violated))
}

fn cmd_selftest() -> anyhow::Result<Verdict> {
    let results = run_selftest(&SelftestOptions::default());
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    Ok(if failed.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Violated(format!("failed suites: {}", failed.join(", ")))
    })
}
