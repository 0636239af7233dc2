//! Distances between cumulative solutions, stability bounds and the study
//! drivers built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cumulative::{build_m, build_measure_pair, moment, AtomicMeasurePair, PiecewiseLinearFlux, StepFunction, Which};
use crate::discretize::{discretize, InitialDatum, MassRule};
use crate::dynamics::{simulate, BoundsReport, EventKind, Tolerances, Trajectory};
use crate::error::{Error, Result};
use crate::kernel::Kernel;

/// Exact `int |M1 - M2| dx`. Infinite when the total masses differ.
pub fn l1_distance(m1: &StepFunction, m2: &StepFunction) -> f64 {
    if (m1.total() - m2.total()).abs() > 1e-12 {
        return f64::INFINITY;
    }
    let (b1, l1) = (m1.breakpoints(), m1.levels());
    let (b2, l2) = (m2.breakpoints(), m2.levels());
    let (mut i, mut j) = (0, 0);
    let (mut v1, mut v2) = (0.0f64, 0.0f64);
    let mut x = f64::NEG_INFINITY;
    let mut total = 0.0;
    while i < b1.len() || j < b2.len() {
        let next = match (b1.get(i), b2.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        if x.is_finite() {
            total += (v1 - v2).abs() * (next - x);
        }
        while i < b1.len() && b1[i] == next {
            v1 = l1[i];
            i += 1;
        }
        while j < b2.len() && b2[j] == next {
            v2 = l2[j];
            j += 1;
        }
        x = next;
    }
    total
}

/// `W1` through the quantile functions, `int_0^1 |F^{-1} - G^{-1}| dm`.
pub fn wasserstein1(mu: &AtomicMeasurePair, nu: &AtomicMeasurePair) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ci, mut cj) = (mu.rho[0], nu.rho[0]);
    let mut level = 0.0;
    let mut total = 0.0;
    loop {
        let next = ci.min(cj);
        total += (next - level).max(0.0) * (mu.positions[i] - nu.positions[j]).abs();
        level = next;
        let adv_i = ci <= next && i + 1 < mu.rho.len();
        let adv_j = cj <= next && j + 1 < nu.rho.len();
        if !adv_i && !adv_j {
            break;
        }
        if adv_i {
            i += 1;
            ci += mu.rho[i];
        }
        if adv_j {
            j += 1;
            cj += nu.rho[j];
        }
    }
    total
}

/// `W1` as the `L1` distance of the two CDFs.
pub fn wasserstein1_cdf(mu: &AtomicMeasurePair, nu: &AtomicMeasurePair) -> f64 {
    l1_distance(&mu.cdf(), &nu.cdf())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityInputs {
    pub t: f64,
    /// `||M0 - M0~||_{L1}`.
    pub w1_0: f64,
    /// `|A - A~|_Lip`.
    pub lip_diff: f64,
    pub sup_phi: f64,
    pub sup_omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityBounds {
    pub exp_bound: f64,
    pub linear_bound: f64,
    pub min_bound: f64,
}

/// `e^{2tL} w + lip/(2L) (e^{tL} - 1)` with `L = ||phi||_inf` (limit
/// `lip t / 2` at `L = 0`), and `w + (lip + 4 ||omega||_inf) t`.
pub fn stability_bounds(p: &StabilityInputs) -> StabilityBounds {
    let l = p.sup_phi;
    let growth = if l == 0.0 { 0.5 * p.lip_diff * p.t } else { p.lip_diff / (2.0 * l) * (p.t * l).exp_m1() };
    let exp_bound = (2.0 * p.t * l).exp() * p.w1_0 + growth;
    let linear_bound = p.w1_0 + (p.lip_diff + 4.0 * p.sup_omega) * p.t;
    StabilityBounds { exp_bound, linear_bound, min_bound: exp_bound.min(linear_bound) }
}

/// Largest slope difference of two piecewise-linear fluxes over the union
/// of their grids.
pub fn flux_lip_difference(a: &PiecewiseLinearFlux, b: &PiecewiseLinearFlux) -> f64 {
    let mut grid: Vec<f64> = a.thetas().iter().chain(b.thetas()).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let (sa, sb) = (a.slopes(), b.slopes());
    let cell = |f: &PiecewiseLinearFlux, m: f64| f.thetas()[1..].partition_point(|&t| t <= m).min(f.cells() - 1);
    grid.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            (sa[cell(a, mid)] - sb[cell(b, mid)]).abs()
        })
        .fold(0.0, f64::max)
}

/// Worst `||M(t) - M(s)||_{L1} / (M~ (t - s))` over pairs of snapshot
/// frames.
pub fn time_modulus_check(traj: &Trajectory, bounds: &BoundsReport) -> f64 {
    let snaps: Vec<(f64, StepFunction)> = traj
        .frames
        .iter()
        .filter(|f| f.kind != EventKind::Collision)
        .map(|f| (f.time, build_m(&f.state)))
        .collect();
    let mut worst: f64 = 0.0;
    for (a, (s, ms)) in snaps.iter().enumerate() {
        for (t, mt) in &snaps[a + 1..] {
            if t <= s {
                continue;
            }
            let d = l1_distance(ms, mt);
            let ratio = if d == 0.0 { 0.0 } else { d / (bounds.m_tilde * (t - s)) };
            worst = worst.max(ratio);
        }
    }
    worst
}

/// Bounded test functions against which `P_N` is compared.
pub const MOMENT_BATTERY: [fn(f64) -> f64; 5] = [
    |_| 1.0,
    f64::cos,
    f64::sin,
    |x| (-x * x).exp(),
    |x| 1.0 / (1.0 + x * x),
];

pub fn p_moments(mp: &AtomicMeasurePair) -> Vec<f64> {
    MOMENT_BATTERY.iter().map(|f| moment(mp, f, Which::P)).collect()
}

/// Knobs shared by the study drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub rule: MassRule,
    /// Tolerance of the flux quadrature.
    pub flux_tol: f64,
    /// RK4 substep; `None` means `horizon / 1e4`.
    pub substep: Option<f64>,
}

impl Default for RunSettings {
    fn default() -> RunSettings {
        RunSettings { rule: MassRule::Uniform, flux_tol: 1e-10, substep: None }
    }
}

/// Discretizes with `n` particles and simulates up to `horizon`, recording
/// `times`.
pub fn evolve_datum(
    d: &InitialDatum,
    k: &Kernel,
    n: usize,
    horizon: f64,
    times: &[f64],
    settings: &RunSettings,
) -> Result<(Trajectory, PiecewiseLinearFlux)> {
    let (s0, a) = discretize(d, k, n, &settings.rule, settings.flux_tol)?;
    let mut tol = Tolerances::new(horizon, s0.radius());
    if let Some(h) = settings.substep {
        tol = tol.with_substep(h);
    }
    let traj = simulate(&s0, k, horizon, times, &tol)?;
    Ok((traj, a))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub t: f64,
    /// `||M_N(t) - M_ref(t)||_{L1}`.
    pub distance: f64,
    /// `2 R0 max m_i` at `t = 0`.
    pub bound: Option<f64>,
    /// `|int f dP_N - int f dP_ref|` for each battery function.
    pub p_moment_errors: Vec<f64>,
}

/// For each `N` in `ns`, distances to the `n_ref` solution at `times`.
/// Runs are independent and fan out over the rayon pool; rows come back
/// ordered by `N`, then `t`.
pub fn convergence_study(
    d: &InitialDatum,
    k: &Kernel,
    horizon: f64,
    ns: &[usize],
    n_ref: usize,
    times: &[f64],
    settings: &RunSettings,
) -> Result<Vec<ConvergenceRow>> {
    if ns.iter().any(|&n| n >= n_ref) {
        return Err(Error::InvalidArgument(format!("reference N = {n_ref} must exceed every study N")));
    }
    if let MassRule::Custom { .. } = settings.rule {
        return Err(Error::InvalidArgument("convergence studies use uniform masses".into()));
    }
    let mut all: Vec<usize> = ns.to_vec();
    all.push(n_ref);
    let runs: Vec<Result<Trajectory>> = all
        .par_iter()
        .map(|&n| evolve_datum(d, k, n, horizon, times, settings).map(|r| r.0))
        .collect();
    let runs: Vec<Trajectory> = runs.into_iter().collect::<Result<_>>()?;
    let reference = runs.last().unwrap();

    let mut rows = Vec::new();
    for (&n, traj) in ns.iter().zip(&runs) {
        for &t in times {
            let (fa, fb) = match (traj.snapshot_at(t), reference.snapshot_at(t)) {
                (Some(a), Some(b)) => (a, b),
                _ => return Err(Error::InvalidArgument(format!("no snapshot at t = {t}"))),
            };
            let distance = l1_distance(&build_m(&fa.state), &build_m(&fb.state));
            let bound = (t == 0.0).then(|| 2.0 * d.r0 / n as f64);
            let (pa, pb) = (p_moments(&build_measure_pair(&fa.state)), p_moments(&build_measure_pair(&fb.state)));
            rows.push(ConvergenceRow {
                n,
                t,
                distance,
                bound,
                p_moment_errors: pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).collect(),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub t: f64,
    pub measured: f64,
    pub bounds: StabilityBounds,
    /// Largest `|int f dP - int f dP~|` over the battery; informational.
    pub p_moment_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub n: usize,
    pub w1_0: f64,
    pub lip_diff: f64,
    pub rows: Vec<StabilityRow>,
}

impl StabilityReport {
    /// Whether every measured distance is within `min_bound + slack`.
    pub fn holds(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| r.measured <= r.bounds.min_bound + slack)
    }
}

/// Evolves both data with `n` particles and compares `W1(rho(t), mu(t))`
/// with the stability bounds. `w1_0` and `lip_diff` are measured on the
/// discretized data.
pub fn stability_experiment(
    a: &InitialDatum,
    b: &InitialDatum,
    k: &Kernel,
    horizon: f64,
    n: usize,
    times: &[f64],
    settings: &RunSettings,
) -> Result<StabilityReport> {
    let pair: Vec<Result<(Trajectory, PiecewiseLinearFlux)>> =
        [a, b].par_iter().map(|d| evolve_datum(d, k, n, horizon, times, settings)).collect();
    let mut pair = pair.into_iter();
    let (ta, fa) = pair.next().unwrap()?;
    let (tb, fb) = pair.next().unwrap()?;
    let w1_0 = wasserstein1(&build_measure_pair(&ta.frames[0].state), &build_measure_pair(&tb.frames[0].state));
    let lip_diff = flux_lip_difference(&fa, &fb);
    let mut rows = Vec::new();
    for &t in times {
        let (sa, sb) = match (ta.snapshot_at(t), tb.snapshot_at(t)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::InvalidArgument(format!("no snapshot at t = {t}"))),
        };
        let (ma, mb) = (build_measure_pair(&sa.state), build_measure_pair(&sb.state));
        let measured = wasserstein1(&ma, &mb);
        let bounds = stability_bounds(&StabilityInputs { t, w1_0, lip_diff, sup_phi: k.sup_phi(), sup_omega: k.sup_omega() });
        let p_moment_drift = p_moments(&ma).iter().zip(p_moments(&mb)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        rows.push(StabilityRow { t, measured, bounds, p_moment_drift });
    }
    Ok(StabilityReport { n, w1_0, lip_diff, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ParticleSystem;

    fn step(xs: &[f64], ms: &[f64]) -> StepFunction {
        StepFunction::new(xs.to_vec(), ms.to_vec()).unwrap()
    }

    fn measure(xs: &[f64], ms: &[f64]) -> AtomicMeasurePair {
        AtomicMeasurePair { positions: xs.to_vec(), rho: ms.to_vec(), momentum: vec![0.0; xs.len()] }
    }

    #[test]
    fn l1_basic_cases() {
        let a = step(&[0.0, 1.0], &[0.5, 0.5]);
        assert_eq!(l1_distance(&a, &a), 0.0);
        assert_eq!(l1_distance(&step(&[0.0], &[1.0]), &step(&[2.5], &[1.0])), 2.5);
        let b = step(&[0.5], &[1.0]);
        assert!((l1_distance(&a, &b) - 0.5).abs() < 1e-15);
        assert_eq!(l1_distance(&a, &step(&[0.0], &[0.5])), f64::INFINITY);
    }

    #[test]
    fn wasserstein_basic_cases() {
        let d0 = measure(&[0.0], &[1.0]);
        let d1 = measure(&[1.5], &[1.0]);
        assert_eq!(wasserstein1(&d0, &d1), 1.5);
        assert_eq!(wasserstein1(&d1, &d1), 0.0);
        let mu = measure(&[0.0, 1.0], &[0.25, 0.75]);
        let nu = measure(&[0.5, 2.0], &[0.5, 0.5]);
        // quantiles: [0,.25): 0 vs .5; [.25,.5): 1 vs .5; [.5,1]: 1 vs 2
        let expected = 0.25 * 0.5 + 0.25 * 0.5 + 0.5 * 1.0;
        assert!((wasserstein1(&mu, &nu) - expected).abs() < 1e-15);
        assert!((wasserstein1_cdf(&mu, &nu) - expected).abs() < 1e-15);
    }

    #[test]
    fn stability_bound_arithmetic() {
        let base = StabilityInputs { t: 0.0, w1_0: 0.3, lip_diff: 0.7, sup_phi: 2.0, sup_omega: 1.0 };
        let b = stability_bounds(&base);
        assert_eq!(b.exp_bound, 0.3);
        assert_eq!(b.linear_bound, 0.3);
        let b = stability_bounds(&StabilityInputs { t: 1.0, w1_0: 0.1, lip_diff: 0.0, sup_phi: 1.0, sup_omega: 0.0 });
        assert!((b.exp_bound - 0.1 * 2f64.exp()).abs() < 1e-15);
        let b = stability_bounds(&StabilityInputs { t: 2.0, w1_0: 0.0, lip_diff: 0.0, sup_phi: 1.0, sup_omega: 1.0 });
        assert_eq!(b.linear_bound, 8.0);
        let b = stability_bounds(&StabilityInputs { t: 2.0, w1_0: 0.0, lip_diff: 0.5, sup_phi: 0.0, sup_omega: 0.0 });
        assert_eq!(b.exp_bound, 0.5);
        let near = stability_bounds(&StabilityInputs { t: 2.0, w1_0: 0.0, lip_diff: 0.5, sup_phi: 1e-12, sup_omega: 0.0 });
        assert!((near.exp_bound - 0.5).abs() < 1e-10);
    }

    #[test]
    fn lip_difference_on_merged_grid() {
        let a = PiecewiseLinearFlux::from_slopes(&[0.5, 0.5], &[1.0, 2.0]).unwrap();
        let b = PiecewiseLinearFlux::from_slopes(&[0.25, 0.75], &[1.0, 4.0]).unwrap();
        // [0,.25): 0, [.25,.5): 3, [.5,1]: 2
        assert_eq!(flux_lip_difference(&a, &b), 3.0);
        assert_eq!(flux_lip_difference(&a, &a), 0.0);
    }

    #[test]
    fn time_modulus_translation_and_rest() {
        let k = Kernel::raised_cosine(0.1).unwrap();
        let s = ParticleSystem::new(vec![-1.0, 0.0, 1.0], vec![0.4; 3], vec![0.25, 0.25, 0.5]).unwrap();
        let bounds = crate::dynamics::a_priori_bounds(&s, &k);
        let traj = simulate(&s, &k, 1.0, &[0.25, 0.5, 0.75], &Tolerances::new(1.0, 1.0)).unwrap();
        let ratio = time_modulus_check(&traj, &bounds);
        assert!((ratio - 0.4 / bounds.m_tilde).abs() < 1e-9);

        let s = ParticleSystem::new(vec![-1.0, 1.0], vec![0.0; 2], vec![0.5; 2]).unwrap();
        let bounds = crate::dynamics::a_priori_bounds(&s, &k);
        let traj = simulate(&s, &k, 1.0, &[0.5], &Tolerances::new(1.0, 1.0)).unwrap();
        assert_eq!(time_modulus_check(&traj, &bounds), 0.0);
    }

    #[test]
    fn dyadic_atoms_converge_immediately() {
        let k = Kernel::raised_cosine(0.3).unwrap();
        let d = InitialDatum::new(
            crate::discretize::CdfSpec::Atoms { positions: vec![-0.5, 0.5], masses: vec![0.5, 0.5] },
            crate::discretize::VelocitySpec::Const { value: 0.0 },
            0.5,
        )
        .unwrap();
        let rows = convergence_study(&d, &k, 0.5, &[2, 4], 8, &[0.0, 0.5], &RunSettings::default()).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.distance < 1e-12));
    }

    #[test]
    fn identical_data_are_stable() {
        let k = Kernel::downstream_cosine(1.0).unwrap();
        let d = InitialDatum::new(
            crate::discretize::CdfSpec::Uniform { a: 0.0, b: 1.0 },
            crate::discretize::VelocitySpec::Const { value: 0.0 },
            1.0,
        )
        .unwrap();
        let rep = stability_experiment(&d, &d, &k, 0.5, 32, &[0.0, 0.5], &RunSettings::default()).unwrap();
        assert!(rep.rows.iter().all(|r| r.measured == 0.0));
        assert!(rep.holds(0.0));
    }
}
