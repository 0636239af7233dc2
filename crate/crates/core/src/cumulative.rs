//! Piecewise representations of the cumulative solution `M_N` and the flux
//! `A_N`, and the entropy certificates built on them.
//!
//! `M_N(x, t) = sum_i m_i H(x - x_i(t))` is a right-continuous staircase
//! whose plateau values are the cumulative masses `theta_i`; `A_N` is the
//! piecewise-linear flux through `(theta_i, A(theta_i))`. Composing the two
//! only ever evaluates `A_N` at its own nodes.

use serde::{Deserialize, Serialize};

use crate::dynamics::{cumulative_masses, ParticleSystem, Trajectory};
use crate::error::{Error, Result};
use crate::interaction;
use crate::kernel::Kernel;

/// Plateau values closer than this to a flux node are identified with it.
pub const GRID_TOL: f64 = 1e-12;

#[derive(Serialize, Deserialize)]
struct StepRepr {
    breakpoints: Vec<f64>,
    jumps: Vec<f64>,
}

/// Right-continuous nondecreasing staircase `sum_k jump_k H(x - b_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StepRepr", into = "StepRepr")]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    // levels[k]: value on [b_k, b_{k+1})
    levels: Vec<f64>,
}

impl TryFrom<StepRepr> for StepFunction {
    type Error = Error;

    fn try_from(r: StepRepr) -> Result<StepFunction> {
        StepFunction::new(r.breakpoints, r.jumps)
    }
}

impl From<StepFunction> for StepRepr {
    fn from(s: StepFunction) -> StepRepr {
        let jumps = s.jumps();
        StepRepr { breakpoints: s.breakpoints, jumps }
    }
}

impl StepFunction {
    /// Builds the staircase from sorted breakpoints and positive jumps;
    /// repeated breakpoints are collapsed into one with the summed jump.
    pub fn new(breakpoints: Vec<f64>, jumps: Vec<f64>) -> Result<StepFunction> {
        if breakpoints.len() != jumps.len() {
            return Err(Error::InvalidArgument(format!(
                "{} breakpoints but {} jumps",
                breakpoints.len(),
                jumps.len()
            )));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("non-finite breakpoint".into()));
        }
        if breakpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidArgument("breakpoints must be sorted".into()));
        }
        if jumps.iter().any(|&j| !(j > 0.0) || !j.is_finite()) {
            return Err(Error::InvalidArgument("jumps must be positive".into()));
        }
        Ok(StepFunction::from_sorted_atoms(&breakpoints, &jumps))
    }

    /// Sorted atoms; the running sum is taken atom by atom so plateau values
    /// coincide bitwise with `cumulative_masses`.
    fn from_sorted_atoms(positions: &[f64], masses: &[f64]) -> StepFunction {
        let mut breakpoints: Vec<f64> = Vec::new();
        let mut levels: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for (&x, &m) in positions.iter().zip(masses) {
            acc += m;
            if breakpoints.last() == Some(&x) {
                *levels.last_mut().unwrap() = acc;
            } else {
                breakpoints.push(x);
                levels.push(acc);
            }
        }
        StepFunction { breakpoints, levels }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Value on `[b_k, b_{k+1})` for each `k`.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn jumps(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.levels
            .iter()
            .map(|&l| {
                let j = l - prev;
                prev = l;
                j
            })
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.levels.last().copied().unwrap_or(0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b <= x);
        if k == 0 {
            0.0
        } else {
            self.levels[k - 1]
        }
    }

    /// `M(x-)`.
    pub fn left_limit(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b < x);
        if k == 0 {
            0.0
        } else {
            self.levels[k - 1]
        }
    }
}

/// `M_N(x) = sum_i m_i H(x - x_i)`; clusters give one breakpoint each.
pub fn build_m(s: &ParticleSystem) -> StepFunction {
    StepFunction::from_sorted_atoms(s.positions(), s.masses())
}

/// `(phi * M)(x) = sum_j m_j omega(x - x_j)`.
pub fn conv_phi_m(m: &StepFunction, k: &Kernel, x: f64) -> f64 {
    conv_phi_m_many(m, k, &[x])[0]
}

pub fn conv_phi_m_many(m: &StepFunction, k: &Kernel, xs: &[f64]) -> Vec<f64> {
    interaction::omega_sums(k, &m.breakpoints, &m.jumps(), xs)
}

#[derive(Serialize, Deserialize)]
struct FluxRepr {
    thetas: Vec<f64>,
    values: Vec<f64>,
}

/// Continuous piecewise-linear flux through `(theta_i, A(theta_i))`, with
/// `theta_0 = 0` and `A(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FluxRepr", into = "FluxRepr")]
pub struct PiecewiseLinearFlux {
    thetas: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<FluxRepr> for PiecewiseLinearFlux {
    type Error = Error;

    fn try_from(r: FluxRepr) -> Result<PiecewiseLinearFlux> {
        PiecewiseLinearFlux::new(r.thetas, r.values)
    }
}

impl From<PiecewiseLinearFlux> for FluxRepr {
    fn from(a: PiecewiseLinearFlux) -> FluxRepr {
        FluxRepr { thetas: a.thetas, values: a.values }
    }
}

impl PiecewiseLinearFlux {
    pub fn new(thetas: Vec<f64>, values: Vec<f64>) -> Result<PiecewiseLinearFlux> {
        if thetas.len() < 2 || thetas.len() != values.len() {
            return Err(Error::InvalidArgument("flux needs matching thetas and values, at least two".into()));
        }
        if thetas[0] != 0.0 || (thetas[thetas.len() - 1] - 1.0).abs() > GRID_TOL {
            return Err(Error::InvalidArgument("flux grid must run from 0 to 1".into()));
        }
        if thetas.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("flux grid must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite flux value".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidArgument("flux must vanish at 0".into()));
        }
        Ok(PiecewiseLinearFlux { thetas, values })
    }

    /// Flux with slope `psi_i` on the cell of mass `m_i`.
    pub fn from_slopes(masses: &[f64], slopes: &[f64]) -> Result<PiecewiseLinearFlux> {
        if masses.len() != slopes.len() {
            return Err(Error::InvalidArgument("masses and slopes differ in length".into()));
        }
        let thetas = cumulative_masses(masses);
        let mut values = Vec::with_capacity(thetas.len());
        values.push(0.0);
        let mut acc = 0.0;
        for (m, p) in masses.iter().zip(slopes) {
            acc += m * p;
            values.push(acc);
        }
        PiecewiseLinearFlux::new(thetas, values)
    }

    /// The flux attached to a system by its `psi` values,
    /// `A(theta_i) - A(theta_{i-1}) = m_i psi_i`.
    pub fn from_system(s: &ParticleSystem, k: &Kernel) -> Result<PiecewiseLinearFlux> {
        let psi = crate::dynamics::compute_psi(s, k);
        PiecewiseLinearFlux::from_slopes(s.masses(), &psi.0)
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cells(&self) -> usize {
        self.thetas.len() - 1
    }

    /// Slope on each cell.
    pub fn slopes(&self) -> Vec<f64> {
        (0..self.cells())
            .map(|i| (self.values[i + 1] - self.values[i]) / (self.thetas[i + 1] - self.thetas[i]))
            .collect()
    }

    pub fn lipschitz(&self) -> f64 {
        self.slopes().into_iter().fold(0.0, |a, s| a.max(s.abs()))
    }

    /// Linear interpolation, extended constantly outside `[0, 1]`.
    pub fn eval(&self, m: f64) -> f64 {
        let last = self.thetas.len() - 1;
        if m <= 0.0 {
            return self.values[0];
        }
        if m >= self.thetas[last] {
            return self.values[last];
        }
        let j = self.thetas.partition_point(|&t| t <= m).clamp(1, last);
        let (t0, t1) = (self.thetas[j - 1], self.thetas[j]);
        let w = (m - t0) / (t1 - t0);
        self.values[j - 1] + w * (self.values[j] - self.values[j - 1])
    }

    /// Index of the node equal to `theta` within `GRID_TOL`.
    pub fn node_index(&self, theta: f64) -> Result<usize> {
        let j = self.thetas.partition_point(|&t| t < theta);
        for c in [j.wrapping_sub(1), j] {
            if c < self.thetas.len() && (self.thetas[c] - theta).abs() <= GRID_TOL {
                return Ok(c);
            }
        }
        Err(Error::GridMismatch { value: theta })
    }

    /// Chord slope between the nodes `a < b`.
    pub fn chord(&self, a: usize, b: usize) -> f64 {
        (self.values[b] - self.values[a]) / (self.thetas[b] - self.thetas[a])
    }

    /// Checks that the grid is the cumulative-mass grid of `masses`.
    pub fn check_grid(&self, masses: &[f64]) -> Result<()> {
        if masses.len() != self.cells() {
            return Err(Error::GridMismatch { value: masses.len() as f64 });
        }
        for (t, u) in cumulative_masses(masses).iter().zip(&self.thetas) {
            if (t - u).abs() > GRID_TOL {
                return Err(Error::GridMismatch { value: *t });
            }
        }
        Ok(())
    }
}

/// `A(M(x))`; every plateau of `M` must be a node of `A`.
pub fn eval_a_of_m(m: &StepFunction, a: &PiecewiseLinearFlux, x: f64) -> Result<f64> {
    let level = m.eval(x);
    Ok(a.values[a.node_index(level)?])
}

/// Per-particle `v_i + (phi * M)(x_i)`, evaluated member by member so that
/// inconsistent (tampered) clusters are visible.
fn transport_speeds(s: &ParticleSystem, k: &Kernel) -> Vec<f64> {
    let m = build_m(s);
    let conv = conv_phi_m_many(&m, k, s.positions());
    s.velocities().iter().zip(conv).map(|(v, c)| v + c).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub per_cluster: Vec<f64>,
    pub worst: f64,
}

/// Rankine-Hugoniot residual `|v + (phi * M)(x) - chord|` per cluster, the
/// chord being taken over the cluster's mass range.
pub fn check_rankine_hugoniot(s: &ParticleSystem, a: &PiecewiseLinearFlux, k: &Kernel) -> Result<ClusterReport> {
    a.check_grid(s.masses())?;
    let speeds = transport_speeds(s, k);
    let per_cluster: Vec<f64> = s
        .clusters()
        .iter()
        .map(|c| {
            let chord = a.chord(c.start, c.end);
            c.range().map(|i| (speeds[i] - chord).abs()).fold(0.0, f64::max)
        })
        .collect();
    let worst = per_cluster.iter().copied().fold(0.0, f64::max);
    Ok(ClusterReport { per_cluster, worst })
}

/// Oleinik margin per cluster: the smallest chord slope from the cluster's
/// left node to an interior node, minus the cluster speed. Singletons have
/// no interior nodes and report `+inf`.
pub fn check_oleinik(s: &ParticleSystem, a: &PiecewiseLinearFlux, k: &Kernel) -> Result<ClusterReport> {
    a.check_grid(s.masses())?;
    let speeds = transport_speeds(s, k);
    let per_cluster: Vec<f64> = s
        .clusters()
        .iter()
        .map(|c| {
            let speed = c.range().map(|i| speeds[i]).fold(f64::NEG_INFINITY, f64::max);
            (c.start + 1..c.end).map(|j| a.chord(c.start, j) - speed).fold(f64::INFINITY, f64::min)
        })
        .collect();
    let worst = per_cluster.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ClusterReport { per_cluster, worst })
}

/// One row of a certificate report. An infinite Oleinik margin (singleton
/// cluster) is stored as `None` and serialized as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub t: f64,
    pub cluster: usize,
    pub rh_residual: f64,
    pub oleinik_margin: Option<f64>,
}

pub fn certificate_rows(s: &ParticleSystem, a: &PiecewiseLinearFlux, k: &Kernel) -> Result<Vec<CertificateRow>> {
    let rh = check_rankine_hugoniot(s, a, k)?;
    let ol = check_oleinik(s, a, k)?;
    Ok(rh
        .per_cluster
        .iter()
        .zip(&ol.per_cluster)
        .enumerate()
        .map(|(c, (&r, &o))| CertificateRow {
            t: s.time,
            cluster: c,
            rh_residual: r,
            oleinik_margin: o.is_finite().then_some(o),
        })
        .collect())
}

/// Kruzkov pair `eta(m) = |m - alpha|`, `q(m) = sgn(m - alpha)(A(m) - A(alpha))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruzkovPair {
    pub alpha: f64,
}

impl KruzkovPair {
    pub fn eta(&self, m: f64) -> f64 {
        (m - self.alpha).abs()
    }

    /// `A` is extended constantly outside `[0, 1]`; for `alpha` outside the
    /// range of `M` the flux then differs from the linear one by a constant,
    /// which the weak form does not see.
    pub fn q(&self, a: &PiecewiseLinearFlux, m: f64) -> f64 {
        let sgn = if m > self.alpha {
            1.0
        } else if m < self.alpha {
            -1.0
        } else {
            0.0
        };
        sgn * (a.eval(m) - a.eval(self.alpha))
    }
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        w * w * w
    }
}

fn bump_derivative(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let w = 1.0 - u * u;
        -6.0 * u * w * w
    }
}

/// `int_{-1}^u (1 - s^2)^3 ds`.
fn bump_antiderivative(u: f64) -> f64 {
    if u <= -1.0 {
        0.0
    } else if u >= 1.0 {
        32.0 / 35.0
    } else {
        let u2 = u * u;
        u * (1.0 - u2 + 0.6 * u2 * u2 - u2 * u2 * u2 / 7.0) + 16.0 / 35.0
    }
}

/// Separable C^2 test function `g(x) h(t)` with `g, h` scaled copies of the
/// bump `(1 - u^2)^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BumpTest {
    pub x_center: f64,
    pub x_width: f64,
    pub t_center: f64,
    pub t_width: f64,
}

impl BumpTest {
    pub fn g(&self, x: f64) -> f64 {
        bump((x - self.x_center) / self.x_width)
    }

    pub fn dg(&self, x: f64) -> f64 {
        bump_derivative((x - self.x_center) / self.x_width) / self.x_width
    }

    /// `int_{-inf}^x g`.
    pub fn g_integral(&self, x: f64) -> f64 {
        self.x_width * bump_antiderivative((x - self.x_center) / self.x_width)
    }

    pub fn h(&self, t: f64) -> f64 {
        bump((t - self.t_center) / self.t_width)
    }

    pub fn dh(&self, t: f64) -> f64 {
        bump_derivative((t - self.t_center) / self.t_width) / self.t_width
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.g(x) * self.h(t)
    }
}

/// Spatial part of the entropy functional at one instant:
/// `int [eta(M) d_t phi + q(M) d_x phi] dx + int phi (phi_k * M) d(d_x eta(M))`.
/// `M` is piecewise constant, so each term is an exact finite sum.
pub fn entropy_integrand(s: &ParticleSystem, a: &PiecewiseLinearFlux, k: &Kernel, pair: KruzkovPair, test: &BumpTest) -> f64 {
    let t = s.time;
    let (h, dh) = (test.h(t), test.dh(t));
    if h == 0.0 && dh == 0.0 {
        return 0.0;
    }
    let m = build_m(s);
    let b = m.breakpoints();
    let levels = m.levels();
    let conv = conv_phi_m_many(&m, k, b);
    let n = b.len();

    // plateaus: (-inf, b_0) at 0, then [b_k, b_{k+1}) at levels[k]
    let mut time_part = pair.eta(0.0) * test.g_integral(b[0]);
    let mut flux_part = pair.q(a, 0.0) * test.g(b[0]);
    let mut measure_part = 0.0;
    let mut prev_level = 0.0;
    for j in 0..n {
        let level = levels[j];
        let (g_lo, big_g_lo) = (test.g(b[j]), test.g_integral(b[j]));
        let (g_hi, big_g_hi) = if j + 1 < n {
            (test.g(b[j + 1]), test.g_integral(b[j + 1]))
        } else {
            (0.0, test.x_width * 32.0 / 35.0)
        };
        time_part += pair.eta(level) * (big_g_hi - big_g_lo);
        flux_part += pair.q(a, level) * (g_hi - g_lo);
        measure_part += g_lo * conv[j] * (pair.eta(level) - pair.eta(prev_level));
        prev_level = level;
    }
    dh * time_part + h * (flux_part + measure_part)
}

/// Value of the entropy inequality's left-hand side and the estimated
/// error of its time quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyResidual {
    pub value: f64,
    pub error_estimate: f64,
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2).zip(f.windows(2)).map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1])).sum()
}

/// Entropy functional over `[0, T]`, integrated in time by the trapezoid
/// rule over the trajectory frames; the error is estimated by comparing
/// with the rule on every other frame (Richardson, factor 1/3).
pub fn entropy_residual(
    traj: &Trajectory,
    a: &PiecewiseLinearFlux,
    k: &Kernel,
    pair: KruzkovPair,
    test: &BumpTest,
    tol: f64,
) -> Result<EntropyResidual> {
    if traj.frames.len() < 3 {
        return Err(Error::InsufficientSnapshots { estimate: f64::INFINITY, tolerance: tol });
    }
    let times: Vec<f64> = traj.frames.iter().map(|f| f.time).collect();
    let values: Vec<f64> = traj.frames.iter().map(|f| entropy_integrand(&f.state, a, k, pair, test)).collect();
    let fine = trapezoid(&times, &values);

    let mut ct: Vec<f64> = times.iter().copied().step_by(2).collect();
    let mut cv: Vec<f64> = values.iter().copied().step_by(2).collect();
    if (times.len() - 1) % 2 == 1 {
        ct.push(*times.last().unwrap());
        cv.push(*values.last().unwrap());
    }
    let coarse = trapezoid(&ct, &cv);
    let error_estimate = (fine - coarse).abs() / 3.0;
    if error_estimate > tol {
        return Err(Error::InsufficientSnapshots { estimate: error_estimate, tolerance: tol });
    }
    Ok(EntropyResidual { value: fine, error_estimate })
}

/// `rho_N = sum m_i delta_{x_i}` and `P_N = sum m_i v_i delta_{x_i}`, with
/// one atom per cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasurePair {
    pub positions: Vec<f64>,
    pub rho: Vec<f64>,
    pub momentum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Rho,
    P,
}

pub fn build_measure_pair(s: &ParticleSystem) -> AtomicMeasurePair {
    let mut out = AtomicMeasurePair { positions: Vec::new(), rho: Vec::new(), momentum: Vec::new() };
    for c in s.clusters() {
        out.positions.push(s.positions()[c.start]);
        out.rho.push(c.range().map(|i| s.masses()[i]).sum());
        out.momentum.push(c.range().map(|i| s.masses()[i] * s.velocities()[i]).sum());
    }
    out
}

impl AtomicMeasurePair {
    pub fn total_rho(&self) -> f64 {
        self.rho.iter().sum()
    }

    pub fn total_momentum(&self) -> f64 {
        self.momentum.iter().sum()
    }

    /// CDF of `rho`.
    pub fn cdf(&self) -> StepFunction {
        StepFunction::from_sorted_atoms(&self.positions, &self.rho)
    }
}

pub fn moment<F: Fn(f64) -> f64>(mp: &AtomicMeasurePair, f: F, which: Which) -> f64 {
    let weights = match which {
        Which::Rho => &mp.rho,
        Which::P => &mp.momentum,
    };
    mp.positions.iter().zip(weights).map(|(&x, w)| w * f(x)).sum()
}
