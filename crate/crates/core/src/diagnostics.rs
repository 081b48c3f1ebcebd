//! Error norms, convergence rates, energy traces and their CSV/gnuplot output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fem::forms::{current_at, local_current, local_velocity, velocity_at};
use crate::fem::{DofLayout, Element, QuadratureRule};
use crate::mesh::Mesh;
use crate::problems::ProblemDefinition;
use crate::sav_stepper::{Operators, SavState, StepReport};

/// Errors at one time step size, plus log2 rates against the previous
/// (coarser) row of a table.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorRecord {
    pub tau: f64,
    pub err_u_l2: f64,
    pub err_u_h1: f64,
    pub err_p_l2: f64,
    pub err_j_div: f64,
    pub err_phi_l2: f64,
    pub err_q_abs: f64,
    pub rates: Option<ErrorRates>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRates {
    pub u_l2: f64,
    pub u_h1: f64,
    pub p_l2: f64,
    pub j_div: f64,
    pub phi_l2: f64,
    pub q_abs: f64,
}

pub const ERROR_COLUMNS: [&str; 7] = ["tau", "err_u_l2", "err_u_h1", "err_p_l2", "err_J_div", "err_phi_l2", "err_q_abs"];

impl ErrorRecord {
    fn errors(&self) -> [f64; 6] {
        [self.err_u_l2, self.err_u_h1, self.err_p_l2, self.err_j_div, self.err_phi_l2, self.err_q_abs]
    }
}

impl ErrorRates {
    fn from_array(r: [f64; 6]) -> Self {
        Self {
            u_l2: r[0],
            u_h1: r[1],
            p_l2: r[2],
            j_div: r[3],
            phi_l2: r[4],
            q_abs: r[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.u_l2, self.u_h1, self.p_l2, self.j_div, self.phi_l2, self.q_abs]
    }
}

/// Errors of `state` against the problem's exact solution at `state.t`.
///
/// Pressure and potential are compared with the zero-mean part of the exact
/// field, since the discrete ones are normalized to zero mean. `t_final` is
/// the `T` of `q(t) = exp(-t / T)`.
pub fn compute_errors(
    mesh: &Mesh,
    layout: &DofLayout,
    state: &SavState,
    problem: &ProblemDefinition,
    t_final: f64,
    tau: f64,
) -> Result<ErrorRecord> {
    let exact = problem.exact.as_ref().ok_or_else(|| Error::NoExactSolution(problem.name.to_string()))?;
    let t = state.t;
    let rule = QuadratureRule::degree6();
    let (u, p, j, phi) = (&state.u.values, &state.p.values, &state.j.values, &state.phi.values);

    // domain means of the exact scalars (the domain has unit area)
    let (mut p_mean, mut phi_mean) = (0.0, 0.0);
    for tri in 0..mesh.n_triangles() {
        let el = Element::new(mesh, tri);
        for (l, w) in rule.iter() {
            let x = el.point(l);
            let jw = 2.0 * el.area * w;
            p_mean += jw * (exact.p)(x[0], x[1], t);
            phi_mean += jw * (exact.phi)(x[0], x[1], t);
        }
    }

    let (mut eu, mut egu, mut ep, mut ej, mut ediv, mut ephi) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for tri in 0..mesh.n_triangles() {
        let el = Element::new(mesh, tri);
        let uc = local_velocity(mesh, layout, tri, u);
        let jc = local_current(&el, j);
        let tv = mesh.triangles[tri];
        let div_h: f64 = el.rt0_divergence().iter().zip(&jc).map(|(d, c)| d * c).sum();
        for (l, w) in rule.iter() {
            let x = el.point(l);
            let jw = 2.0 * el.area * w;
            let (uh, guh) = velocity_at(&el, &uc, l);
            let ue = (exact.u)(x[0], x[1], t);
            let gue = (exact.grad_u)(x[0], x[1], t);
            eu += jw * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
            for c in 0..2 {
                egu += jw * ((guh[c][0] - gue[c][0]).powi(2) + (guh[c][1] - gue[c][1]).powi(2));
            }
            let ph: f64 = (0..3).map(|a| l[a] * p[tv[a]]).sum();
            ep += jw * (ph - ((exact.p)(x[0], x[1], t) - p_mean)).powi(2);
            let jh = current_at(&el, &jc, l);
            let je = (exact.j)(x[0], x[1], t);
            ej += jw * ((jh[0] - je[0]).powi(2) + (jh[1] - je[1]).powi(2));
            ediv += jw * (div_h - (exact.div_j)(x[0], x[1], t)).powi(2);
            ephi += jw * (phi[tri] - ((exact.phi)(x[0], x[1], t) - phi_mean)).powi(2);
        }
    }
    Ok(ErrorRecord {
        tau,
        err_u_l2: eu.sqrt(),
        err_u_h1: egu.sqrt(),
        err_p_l2: ep.sqrt(),
        err_j_div: (ej + ediv).sqrt(),
        err_phi_l2: ephi.sqrt(),
        err_q_abs: (state.q - (-t / t_final).exp()).abs(),
        rates: None,
    })
}

/// `log2(e_prev / e)` scaled for the actual step ratio; `NaN` when either
/// error is not positive.
pub fn observed_rate(tau_prev: f64, e_prev: f64, tau: f64, e: f64) -> f64 {
    if e_prev > 0.0 && e > 0.0 && tau_prev != tau {
        (e_prev / e).ln() / (tau_prev / tau).ln()
    } else {
        f64::NAN
    }
}

/// Attaches rates to each row from its predecessor. Rows are used in the
/// given order (normally decreasing `tau`).
pub fn convergence_table(rows: &[ErrorRecord]) -> Vec<ErrorRecord> {
    let mut out: Vec<ErrorRecord> = rows.to_vec();
    for i in 0..out.len() {
        out[i].rates = if i == 0 {
            None
        } else {
            let (a, b) = (rows[i - 1], rows[i]);
            let ea = a.errors();
            let eb = b.errors();
            Some(ErrorRates::from_array(std::array::from_fn(|k| observed_rate(a.tau, ea[k], b.tau, eb[k]))))
        };
    }
    out
}

pub(crate) fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        String::new()
    }
}

/// CSV text of a convergence table: the error columns followed by one
/// `rate_*` column each. The first row's rate cells are empty.
pub fn error_table_csv(rows: &[ErrorRecord]) -> String {
    let mut s = ERROR_COLUMNS.join(",");
    for c in &ERROR_COLUMNS[1..] {
        let _ = write!(s, ",rate_{}", c.trim_start_matches("err_"));
    }
    s.push('\n');
    for r in rows {
        let mut cells = vec![num(r.tau)];
        cells.extend(r.errors().iter().map(|&e| num(e)));
        match r.rates {
            Some(rates) => cells.extend(rates.to_array().iter().map(|&v| num(v))),
            None => cells.extend(std::iter::repeat_n(String::new(), 6)),
        }
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parses text written by [`error_table_csv`].
pub fn parse_error_table_csv(text: &str) -> Result<Vec<ErrorRecord>> {
    let bad = |msg: String| Error::InvalidConfig(format!("error table: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))?;
    if !header.starts_with(&ERROR_COLUMNS.join(",")) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let cell = |c: &str| -> Result<f64> {
        if c.is_empty() {
            Ok(f64::NAN)
        } else {
            c.parse().map_err(|_| bad(format!("bad number {c:?}")))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let v: Vec<f64> = line.split(',').map(cell).collect::<Result<_>>()?;
            if v.len() != 13 {
                return Err(bad(format!("expected 13 cells, found {}", v.len())));
            }
            let rates = if v[7..].iter().all(|r| r.is_nan()) {
                None
            } else {
                Some(ErrorRates::from_array(std::array::from_fn(|k| v[7 + k])))
            };
            Ok(ErrorRecord {
                tau: v[0],
                err_u_l2: v[1],
                err_u_h1: v[2],
                err_p_l2: v[3],
                err_j_div: v[4],
                err_phi_l2: v[5],
                err_q_abs: v[6],
                rates,
            })
        })
        .collect()
}

/// One point of an energy history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyPoint {
    pub n: usize,
    pub t: f64,
    /// `½‖u‖² + ½q²`.
    pub energy: f64,
    /// The BDF2 energy, when defined (from step 1 on).
    pub energy_bdf: Option<f64>,
}

/// Energy history of one run, one entry per level including `t = 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnergyTrace {
    pub tau: f64,
    pub points: Vec<EnergyPoint>,
}

impl EnergyTrace {
    pub fn new(tau: f64) -> Self {
        Self { tau, points: Vec::new() }
    }

    /// Appends level `state`. `report` is the step that produced it.
    pub fn record(&mut self, ops: &Operators, state: &SavState, report: Option<&StepReport>) {
        self.points.push(EnergyPoint {
            n: state.n,
            t: state.t,
            energy: ops.energy(&state.u.values, state.q),
            energy_bdf: report.map(|r| r.energy_bdf),
        });
    }

    /// Largest increase `E^{n+1} - E^n` of the plain energy (negative when
    /// strictly decaying).
    pub fn max_increase(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1].energy - w[0].energy)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest increase of the BDF2 energy between consecutive levels where
    /// both are defined.
    pub fn max_increase_bdf(&self) -> f64 {
        self.points
            .windows(2)
            .filter_map(|w| Some(w[1].energy_bdf? - w[0].energy_bdf?))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self, tol: f64) -> bool {
        self.points.len() < 2 || self.max_increase() <= tol
    }
}

/// Builds a trace from a finished run.
pub fn energy_trace(ops: &Operators, tau: f64, initial: &SavState, states: &[(SavState, StepReport)]) -> EnergyTrace {
    let mut trace = EnergyTrace::new(tau);
    trace.record(ops, initial, None);
    for (s, r) in states {
        trace.record(ops, s, Some(r));
    }
    trace
}

pub const ENERGY_COLUMNS: [&str; 5] = ["tau", "n", "t", "energy", "energy_bdf"];

/// Long-format CSV of several traces: one row per level, `energy_bdf` empty
/// where undefined.
pub fn energy_csv(traces: &[EnergyTrace]) -> String {
    let mut s = ENERGY_COLUMNS.join(",");
    s.push('\n');
    for tr in traces {
        for p in &tr.points {
            let bdf = p.energy_bdf.map(num).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", num(tr.tau), p.n, num(p.t), num(p.energy), bdf);
        }
    }
    s
}

/// Parses text written by [`energy_csv`], grouping rows by `tau` in order of
/// appearance.
pub fn parse_energy_csv(text: &str) -> Result<Vec<EnergyTrace>> {
    let bad = |msg: String| Error::InvalidConfig(format!("energy table: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(ENERGY_COLUMNS.join(",").as_str()) {
        return Err(bad("unexpected header".into()));
    }
    let mut out: Vec<EnergyTrace> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 5 {
            return Err(bad(format!("expected 5 cells in {line:?}")));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
        let tau = f(c[0])?;
        let point = EnergyPoint {
            n: c[1].parse().map_err(|_| bad(format!("bad step {:?}", c[1])))?,
            t: f(c[2])?,
            energy: f(c[3])?,
            energy_bdf: if c[4].is_empty() { None } else { Some(f(c[4])?) },
        };
        match out.last_mut() {
            Some(tr) if tr.tau == tau => tr.points.push(point),
            _ => out.push(EnergyTrace { tau, points: vec![point] }),
        }
    }
    Ok(out)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

/// Gnuplot script drawing error-vs-tau on log axes from `csv_name`.
pub fn accuracy_plot_script(csv_name: &str, title: &str) -> String {
    let mut s = format!(
        "set datafile separator ','\nset logscale xy\nset key left top\nset xlabel 'tau'\nset ylabel 'error'\nset title '{title}'\n\
         set terminal pngcairo size 800,600\nset output '{}.png'\nplot \\\n",
        csv_name.trim_end_matches(".csv")
    );
    let cols: Vec<String> = ERROR_COLUMNS[1..]
        .iter()
        .enumerate()
        .map(|(i, c)| format!("  '{csv_name}' using 1:{} skip 1 with linespoints title '{c}'", i + 2))
        .collect();
    s.push_str(&cols.join(", \\\n"));
    s.push('\n');
    s
}

/// Gnuplot script drawing one energy curve per `tau` from a long-format CSV.
pub fn energy_plot_script(csv_name: &str, title: &str, taus: &[f64]) -> String {
    let mut s = format!(
        "set datafile separator ','\nset key right top\nset xlabel 't'\nset ylabel 'E'\nset title '{title}'\n\
         set terminal pngcairo size 800,600\nset output '{}.png'\nplot \\\n",
        csv_name.trim_end_matches(".csv")
    );
    let curves: Vec<String> = taus
        .iter()
        .map(|tau| {
            format!(
                "  '{csv_name}' using (abs($1 - {tau}) < 1e-12 ? $3 : 1/0):4 skip 1 with lines title 'tau = {tau}'"
            )
        })
        .collect();
    s.push_str(&curves.join(", \\\n"));
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(tau: f64, e: f64) -> ErrorRecord {
        ErrorRecord {
            tau,
            err_u_l2: e,
            err_u_h1: 2.0 * e,
            err_p_l2: 3.0 * e,
            err_j_div: e,
            err_phi_l2: e,
            err_q_abs: 0.0,
            rates: None,
        }
    }

    #[test]
    fn halving_errors_give_rate_one() {
        let t = convergence_table(&[row(0.2, 1.0), row(0.1, 0.5), row(0.05, 0.25)]);
        assert!(t[0].rates.is_none());
        let r = t[2].rates.unwrap();
        assert!((r.u_l2 - 1.0).abs() < 1e-15 && (r.p_l2 - 1.0).abs() < 1e-15);
        assert!(r.q_abs.is_nan());
    }

    #[test]
    fn quartering_errors_give_rate_two() {
        let t = convergence_table(&[row(0.2, 1.0), row(0.1, 0.25)]);
        assert!((t[1].rates.unwrap().u_h1 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn error_csv_round_trips() {
        let t = convergence_table(&[row(0.2, 1.23456789012e-3), row(0.1, 6.1e-4)]);
        let text = error_table_csv(&t);
        assert!(text.starts_with("tau,err_u_l2,err_u_h1,err_p_l2,err_J_div,err_phi_l2,err_q_abs,rate_u_l2,"));
        assert!(!text.contains('\r'));
        let back = parse_error_table_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].err_u_l2, 1.23456789012e-3);
        assert!(back[0].rates.is_none());
        assert_eq!(error_table_csv(&back), text);
    }
}
