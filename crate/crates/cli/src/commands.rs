//! The `narz` subcommands. Each one writes its artifacts into an output
//! directory and returns a one-paragraph summary for standard output.

use std::fs;
use std::path::Path;

use narz_core::cumulative::{certificate_rows, entropy_residual, BumpTest, CertificateRow, KruzkovPair};
use narz_core::dynamics::{a_priori_bounds, compute_psi, simulate as run_dynamics, EventKind, Frame, Trajectory};
use narz_core::io::{atomic_write, events_json, read_trajectory_csv, study_csv, to_csv, to_json, trajectory_csv};
use narz_core::kernel::{validate_hypotheses, Kernel, KernelFamily};
use narz_core::metrics::{convergence_study, stability_experiment, RunSettings, StabilityBounds};
use narz_core::Error;
use serde::Serialize;
use thiserror::Error as ThisError;

use crate::scenario::{InputError, Scenario};

/// Why a command did not succeed.
#[derive(Debug, ThisError)]
pub enum Failure {
    /// Bad scenario, flag or input file (exit code 2).
    #[error("{0}")]
    Input(String),
    /// A certificate or bound does not hold (exit code 1).
    #[error("{0}")]
    Assertion(String),
    /// The solver or the file system gave up (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Assertion(_) | Failure::Runtime(_) => 1,
        }
    }
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Failure {
        Failure::Input(e.0)
    }
}

/// Argument and data errors are the caller's; everything else is a solver
/// or file-system failure.
fn core(context: &str) -> impl Fn(Error) -> Failure + '_ {
    move |e| {
        let msg = format!("{context}: {e}");
        match e {
            Error::UnknownFamily(_)
            | Error::NonpositiveSupport(_)
            | Error::BadKernelParams(_)
            | Error::BadMassRule(_)
            | Error::InvalidSystem(_)
            | Error::InvalidDatum(_)
            | Error::InvalidArgument(_)
            | Error::GridMismatch { .. } => Failure::Input(msg),
            _ => Failure::Runtime(msg),
        }
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    atomic_write(&dir.join(name), bytes).map_err(core(name))
}

/// Slack on the a-priori bounds.
const BOUNDS_SLACK: f64 = 1e-9;

#[derive(Serialize)]
struct SimulateSummary {
    kernel: String,
    particles: usize,
    horizon: f64,
    frames: usize,
    collisions: usize,
    final_clusters: usize,
    psi_range: [f64; 2],
    velocity_range: [f64; 2],
    radius_at_horizon: f64,
    /// Largest excess over any a-priori bound (negative when all hold).
    worst_bound_excess: f64,
}

pub fn simulate(scn: &Scenario, out: &Path, substep: Option<f64>) -> Result<String, Failure> {
    if let Some(h) = substep {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Failure::Input(format!("--substep: must be positive, got {h}")));
        }
    }
    let setup = scn.setup()?;
    let k = &scn.kernel;
    let tol = scn.solver_tolerances(setup.s0.radius(), substep);
    let traj = run_dynamics(&setup.s0, k, scn.horizon, &scn.snapshots, &tol).map_err(core("simulate"))?;

    let bounds = a_priori_bounds(&setup.s0, k);
    let mut excess = f64::NEG_INFINITY;
    let mut first_bad = None;
    for f in &traj.frames {
        let mut worst = f64::NEG_INFINITY;
        for (i, &p) in f.psi.0.iter().enumerate() {
            let v = f.state.velocities()[i];
            let x = f.state.positions()[i];
            worst = worst
                .max(bounds.psi_lo - p)
                .max(p - bounds.psi_hi)
                .max(bounds.vel_lo - v)
                .max(v - bounds.vel_hi)
                .max(x.abs() - bounds.radius(f.time));
        }
        if worst > BOUNDS_SLACK && first_bad.is_none() {
            first_bad = Some(f.time);
        }
        excess = excess.max(worst);
    }

    write(out, "trajectory.csv", &trajectory_csv(&traj).map_err(core("trajectory.csv"))?)?;
    write(out, "events.json", &events_json(&traj).map_err(core("events.json"))?)?;
    let last = traj.final_state();
    let summary = SimulateSummary {
        kernel: k.name().to_string(),
        particles: setup.s0.len(),
        horizon: scn.horizon,
        frames: traj.frames.len(),
        collisions: traj.collisions().count(),
        final_clusters: last.clusters().len(),
        psi_range: [bounds.psi_lo, bounds.psi_hi],
        velocity_range: [bounds.vel_lo, bounds.vel_hi],
        radius_at_horizon: bounds.radius(scn.horizon),
        worst_bound_excess: excess,
    };
    write(out, "summary.json", &to_json(&summary).map_err(core("summary.json"))?)?;

    if let Some(t) = first_bad {
        return Err(Failure::Assertion(format!("a-priori bounds exceeded by {excess:.3e} (first at t = {t})")));
    }
    Ok(format!(
        "simulated {} particles to t = {} under {}: {}, {} at the horizon\nwrote {}",
        summary.particles,
        summary.horizon,
        summary.kernel,
        plural(summary.collisions, "collision"),
        plural(summary.final_clusters, "cluster"),
        out.display()
    ))
}

fn plural(n: usize, noun: &str) -> String {
    format!("{n} {noun}{}", if n == 1 { "" } else { "s" })
}

/// Uniform frames used when certify simulates on its own.
pub const CERTIFY_FRAMES: usize = 2000;

/// Three bumps covering the occupied part of space-time: a wide one and
/// two narrower ones, early-left and late-right.
pub fn default_bumps(traj: &Trajectory) -> Vec<BumpTest> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for f in &traj.frames {
        for &x in f.state.positions() {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    let len = (hi - lo).max(1e-6);
    let mid = 0.5 * (lo + hi);
    let t0 = traj.frames.first().map_or(0.0, |f| f.time);
    let span = traj.frames.last().map_or(0.0, |f| f.time) - t0;
    vec![
        BumpTest { x_center: mid, x_width: 0.75 * len, t_center: t0 + 0.5 * span, t_width: 0.45 * span },
        BumpTest { x_center: mid - 0.25 * len, x_width: 0.5 * len, t_center: t0 + 0.3 * span, t_width: 0.25 * span },
        BumpTest { x_center: mid + 0.25 * len, x_width: 0.5 * len, t_center: t0 + 0.7 * span, t_width: 0.25 * span },
    ]
}

#[derive(Serialize)]
struct KruzkovRecord {
    test: usize,
    alpha: f64,
    value: Option<f64>,
    error_estimate: Option<f64>,
    skipped: Option<String>,
}

#[derive(Serialize)]
struct Violation {
    check: &'static str,
    t: Option<f64>,
    cluster: Option<usize>,
    value: f64,
}

#[derive(Serialize)]
struct CertificateSummary {
    source: String,
    frames: usize,
    certificate_tol: f64,
    entropy_tol: f64,
    worst_rh_residual: f64,
    worst_oleinik_margin: Option<f64>,
    tests: Vec<BumpTest>,
    kruzkov: Vec<KruzkovRecord>,
    violations: Vec<Violation>,
    passed: bool,
}

/// Parses `lo:hi:step` or a comma-separated list.
pub fn parse_alphas(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Input(format!("--alphas: expected `lo:hi:step` or a comma list, got `{spec}`"));
    let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
    let parts: Vec<&str> = spec.split(':').collect();
    let alphas = match parts.as_slice() {
        [lo, hi, step] => {
            let (lo, hi, step) = (num(lo).ok_or_else(bad)?, num(hi).ok_or_else(bad)?, num(step).ok_or_else(bad)?);
            if !(step > 0.0) || hi < lo {
                return Err(bad());
            }
            let count = ((hi - lo) / step + 1e-9).floor() as usize;
            (0..=count).map(|i| lo + i as f64 * step).collect()
        }
        [list] => list.split(',').map(|s| num(s).ok_or_else(bad)).collect::<Result<Vec<f64>, _>>()?,
        _ => return Err(bad()),
    };
    if alphas.is_empty() {
        return Err(bad());
    }
    Ok(alphas)
}

fn frames_from_file(path: &Path, scn: &Scenario) -> Result<Trajectory, Failure> {
    let states = read_trajectory_csv(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if states.is_empty() {
        return Err(Failure::Input(format!("{}: no frames", path.display())));
    }
    let frames = states
        .into_iter()
        .map(|s| Frame { time: s.time, kind: EventKind::Snapshot, psi: compute_psi(&s, &scn.kernel), state: s })
        .collect();
    Ok(Trajectory { frames, events: Vec::new() })
}

pub fn certify(scn: &Scenario, out: &Path, alphas: &[f64], trajectory: Option<&Path>) -> Result<String, Failure> {
    let setup = scn.setup()?;
    let k = &scn.kernel;
    let (traj, source) = match trajectory {
        Some(p) => (frames_from_file(p, scn)?, p.display().to_string()),
        None => {
            let mut times: Vec<f64> = (1..CERTIFY_FRAMES).map(|i| scn.horizon * i as f64 / CERTIFY_FRAMES as f64).collect();
            times.extend(&scn.snapshots);
            times.sort_by(f64::total_cmp);
            times.dedup();
            let tol = scn.solver_tolerances(setup.s0.radius(), None);
            let traj = run_dynamics(&setup.s0, k, scn.horizon, &times, &tol).map_err(core("simulate"))?;
            (traj, "simulated".to_string())
        }
    };
    for f in &traj.frames {
        if f.state.masses() != setup.s0.masses() {
            return Err(Failure::Input(format!("trajectory: masses at t = {} differ from the scenario's", f.time)));
        }
    }

    let tol = scn.tolerances;
    let mut rows: Vec<CertificateRow> = Vec::new();
    for f in &traj.frames {
        rows.extend(certificate_rows(&f.state, &setup.flux, k).map_err(core("certificate"))?);
    }
    let mut violations = Vec::new();
    for r in &rows {
        if r.rh_residual > tol.certificate {
            violations.push(Violation { check: "rankine_hugoniot", t: Some(r.t), cluster: Some(r.cluster), value: r.rh_residual });
        }
        if let Some(m) = r.oleinik_margin.filter(|&m| m < -tol.certificate) {
            violations.push(Violation { check: "oleinik", t: Some(r.t), cluster: Some(r.cluster), value: m });
        }
    }

    let tests = default_bumps(&traj);
    let mut kruzkov = Vec::new();
    for (ti, test) in tests.iter().enumerate() {
        for &alpha in alphas {
            let record = match entropy_residual(&traj, &setup.flux, k, KruzkovPair { alpha }, test, tol.entropy) {
                Ok(r) => {
                    if r.value < -tol.entropy {
                        violations.push(Violation { check: "kruzkov", t: None, cluster: None, value: r.value });
                    }
                    KruzkovRecord { test: ti, alpha, value: Some(r.value), error_estimate: Some(r.error_estimate), skipped: None }
                }
                Err(e @ Error::InsufficientSnapshots { .. }) => {
                    KruzkovRecord { test: ti, alpha, value: None, error_estimate: None, skipped: Some(e.to_string()) }
                }
                Err(e) => return Err(core("entropy residual")(e)),
            };
            kruzkov.push(record);
        }
    }

    let worst_rh = rows.iter().map(|r| r.rh_residual).fold(0.0, f64::max);
    let worst_ol = rows.iter().filter_map(|r| r.oleinik_margin).reduce(f64::min);
    let skipped = kruzkov.iter().filter(|r| r.skipped.is_some()).count();
    let worst_kr = kruzkov.iter().filter_map(|r| r.value).reduce(f64::min);
    let summary = CertificateSummary {
        source,
        frames: traj.frames.len(),
        certificate_tol: tol.certificate,
        entropy_tol: tol.entropy,
        worst_rh_residual: worst_rh,
        worst_oleinik_margin: worst_ol,
        tests,
        kruzkov,
        passed: violations.is_empty(),
        violations,
    };
    write(out, "certificate.csv", &to_csv(&rows).map_err(core("certificate.csv"))?)?;
    write(out, "certificate.json", &to_json(&summary).map_err(core("certificate.json"))?)?;

    if let Some(v) = summary.violations.first() {
        let what = match v.check {
            "rankine_hugoniot" => format!("Rankine-Hugoniot residual {:.3e} exceeds {:.1e}", v.value, tol.certificate),
            "oleinik" => format!("Oleinik margin {:.3e} is below -{:.1e}", v.value, tol.certificate),
            _ => format!("Kruzkov residual {:.3e} is below -{:.1e}", v.value, tol.entropy),
        };
        let place = match (v.t, v.cluster) {
            (Some(t), Some(c)) => format!(" at t = {t}, cluster {c}"),
            _ => String::new(),
        };
        return Err(Failure::Assertion(format!(
            "certificate violated: {what}{place} ({} violations in total; see {})",
            summary.violations.len(),
            out.join("certificate.json").display()
        )));
    }
    let kr = match worst_kr {
        Some(v) => format!("min Kruzkov residual {v:.3e}"),
        None => "Kruzkov residuals skipped".to_string(),
    };
    let skipped_note = if skipped > 0 {
        format!(" ({skipped} Kruzkov checks skipped: too few frames for the time quadrature)")
    } else {
        String::new()
    };
    let ol = worst_ol.map_or("none (all singletons)".to_string(), |m| format!("{m:.3e}"));
    Ok(format!(
        "certified {} frames: max RH residual {worst_rh:.3e}, min Oleinik margin {ol}, {kr}{skipped_note}\nwrote {}",
        summary.frames,
        out.display()
    ))
}

pub fn converge(scn: &Scenario, out: &Path, ns: Option<&[usize]>, n_ref: Option<usize>) -> Result<String, Failure> {
    let (datum, _, rule) = scn
        .datum()
        .ok_or_else(|| Failure::Input("initial.kind: converge needs a `datum` scenario".into()))?;
    let ns: Vec<usize> = match (ns, &scn.ns) {
        (Some(ns), _) => ns.to_vec(),
        (None, Some(ns)) => ns.clone(),
        (None, None) => return Err(Failure::Input("ns: no particle counts given (scenario `ns` or --ns)".into())),
    };
    if ns.iter().any(|&n| n == 0) {
        return Err(Failure::Input("ns: counts must be positive".into()));
    }
    let n_ref = n_ref.or(scn.n_ref).unwrap_or(4096);
    let mut times = vec![0.0];
    times.extend(&scn.snapshots);
    times.push(scn.horizon);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let settings = RunSettings { rule, flux_tol: scn.tolerances.flux, substep: Some(scn.tolerances.substep) };
    let rows = convergence_study(&datum, &scn.kernel, scn.horizon, &ns, n_ref, &times, &settings).map_err(core("converge"))?;
    write(out, "convergence.csv", &study_csv(&rows).map_err(core("convergence.csv"))?)?;
    write(out, "convergence.json", &to_json(&rows).map_err(core("convergence.json"))?)?;

    let mut lines = vec![format!("N vs reference N = {n_ref} at t = {}:", scn.horizon)];
    let at_horizon: Vec<_> = rows.iter().filter(|r| r.t == scn.horizon).collect();
    for (i, r) in at_horizon.iter().enumerate() {
        let ratio = if i > 0 { format!("  ratio {:.3}", r.distance / at_horizon[i - 1].distance) } else { String::new() };
        lines.push(format!("  N = {:>6}  L1 distance {:.6e}{ratio}", r.n, r.distance));
    }
    lines.push(format!("wrote {}", out.display()));
    if let Some(r) = rows.iter().find(|r| r.bound.is_some_and(|b| r.distance > b)) {
        return Err(Failure::Assertion(format!(
            "initial discretization error {:.6e} exceeds 2 R0 / N = {:.6e} at N = {}",
            r.distance,
            r.bound.unwrap(),
            r.n
        )));
    }
    Ok(lines.join("\n"))
}

#[derive(Serialize)]
struct StabilityCsvRow {
    t: f64,
    measured: f64,
    exp_bound: f64,
    linear_bound: f64,
    min_bound: f64,
    slack: f64,
    holds: bool,
}

pub fn stability(a: &Scenario, b: &Scenario, out: &Path) -> Result<String, Failure> {
    let need = |s: &Scenario, which: &str| {
        s.datum().ok_or_else(|| Failure::Input(format!("{which}: initial.kind: stability needs `datum` scenarios")))
    };
    let (da, n, rule) = need(a, "first scenario")?;
    let (db, nb, _) = need(b, "second scenario")?;
    if a.kernel_spec != b.kernel_spec {
        return Err(Failure::Input("kernel: both scenarios must use the same kernel".into()));
    }
    if nb != n {
        return Err(Failure::Input(format!("initial.n: scenarios use {n} and {nb} particles")));
    }
    if a.horizon != b.horizon {
        return Err(Failure::Input(format!("horizon: scenarios end at {} and {}", a.horizon, b.horizon)));
    }
    let mut times: Vec<f64> = a.snapshots.clone();
    times.push(a.horizon);
    times.dedup();
    let settings = RunSettings { rule, flux_tol: a.tolerances.flux, substep: Some(a.tolerances.substep) };
    let report = stability_experiment(&da, &db, &a.kernel, a.horizon, n, &times, &settings).map_err(core("stability"))?;
    // each discretization sits within 2 R0 / N of its datum in W1
    let slack = 1e-6 + 2.0 * (da.r0 + db.r0) / n as f64;
    let rows: Vec<StabilityCsvRow> = report
        .rows
        .iter()
        .map(|r| {
            let StabilityBounds { exp_bound, linear_bound, min_bound } = r.bounds;
            StabilityCsvRow { t: r.t, measured: r.measured, exp_bound, linear_bound, min_bound, slack, holds: r.measured <= min_bound + slack }
        })
        .collect();
    write(out, "stability.csv", &to_csv(&rows).map_err(core("stability.csv"))?)?;
    write(out, "stability.json", &to_json(&report).map_err(core("stability.json"))?)?;

    let mut lines = vec![format!("W1 distance vs stability bound (N = {n}, slack {slack:.3e}):")];
    for r in &rows {
        lines.push(format!("  t = {:<8} measured {:.6e}  bound {:.6e}  {}", r.t, r.measured, r.min_bound, if r.holds { "ok" } else { "EXCEEDED" }));
    }
    lines.push(format!("wrote {}", out.display()));
    if let Some(r) = rows.iter().find(|r| !r.holds) {
        return Err(Failure::Assertion(format!(
            "stability bound exceeded at t = {}: measured {:.6e} > {:.6e} + {slack:.3e}",
            r.t, r.measured, r.min_bound
        )));
    }
    Ok(lines.join("\n"))
}

pub fn kernels(r: f64) -> Result<String, Failure> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Failure::Input(format!("--r: must be positive, got {r}")));
    }
    let mut lines = vec![format!(
        "{:<18} {:>10} {:>10} {:>10}  {:<5} {}",
        "family", "|omega|inf", "|phi|inf", "|phi|1", "(H)", "description"
    )];
    for fam in KernelFamily::ALL {
        let k = Kernel::builtin(fam, r).map_err(core(fam.name()))?;
        let report = validate_hypotheses(&k, 1e-10).map_err(core(fam.name()))?;
        lines.push(format!(
            "{:<18} {:>10.4} {:>10.4} {:>10.4}  {:<5} {}",
            fam.name(),
            k.sup_omega(),
            k.sup_phi(),
            k.l1_phi(),
            if report.passed { "ok" } else { "FAIL" },
            fam.description()
        ));
    }
    lines.push(format!("support parameter r = {r}; scenario syntax: {{ \"family\": \"raised_cosine\", \"params\": [{r}] }}"));
    Ok(lines.join("\n"))
}
