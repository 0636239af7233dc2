//! From initial data `(M0, u0)` to particle systems and fluxes.
//!
//! Atom positions are quantiles `x_i = inf{x : M0(x) >= theta_i}` of the
//! initial CDF, and the flux is `A(m) = int_0^m psi0(M0^{-1}(s)) ds` with
//! `psi0 = u0 + omega * rho0`. For atomic data every cell integrand is
//! constant and the flux is exact.

use serde::{Deserialize, Serialize};

use crate::cumulative::{PiecewiseLinearFlux, StepFunction};
use crate::dynamics::{cumulative_masses, ParticleSystem, MASS_TOL};
use crate::error::{Error, Result};
use crate::interaction;
use crate::kernel::Kernel;
use crate::quadrature::{integrate, integrate_with_breaks};

/// Cumulative masses closer than this to a target level count as reaching it.
pub const LEVEL_TOL: f64 = 1e-12;

/// Initial cumulative distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CdfSpec {
    /// Uniform density on `[a, b]`.
    Uniform {
        #[serde(default)]
        a: f64,
        #[serde(default = "one")]
        b: f64,
    },
    /// Point masses.
    Atoms { positions: Vec<f64>, masses: Vec<f64> },
    /// Monotone table read as a right-continuous step interpolant:
    /// `M0(x) = m[k]` on `[x[k], x[k+1])`.
    Table { x: Vec<f64>, m: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

/// Initial velocity profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum VelocitySpec {
    Const { value: f64 },
    /// `u0(x) = slope * x + intercept`.
    Affine { slope: f64, intercept: f64 },
    /// Right-continuous step interpolant, `u[0]` left of `x[0]`.
    Table { x: Vec<f64>, u: Vec<f64> },
}

impl VelocitySpec {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            VelocitySpec::Const { value } => *value,
            VelocitySpec::Affine { slope, intercept } => slope * x + intercept,
            VelocitySpec::Table { x: xs, u } => {
                let k = xs.partition_point(|&p| p <= x);
                u[k.saturating_sub(1)]
            }
        }
    }

    /// Shifts the profile by a constant.
    pub fn shifted(&self, eps: f64) -> VelocitySpec {
        match self {
            VelocitySpec::Const { value } => VelocitySpec::Const { value: value + eps },
            VelocitySpec::Affine { slope, intercept } => VelocitySpec::Affine { slope: *slope, intercept: intercept + eps },
            VelocitySpec::Table { x, u } => VelocitySpec::Table { x: x.clone(), u: u.iter().map(|v| v + eps).collect() },
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            VelocitySpec::Const { value } if !value.is_finite() => Err(Error::InvalidDatum("u0.value is not finite".into())),
            VelocitySpec::Affine { slope, intercept } if !(slope.is_finite() && intercept.is_finite()) => {
                Err(Error::InvalidDatum("u0 coefficients are not finite".into()))
            }
            VelocitySpec::Table { x, u } => {
                if x.is_empty() || x.len() != u.len() {
                    return Err(Error::InvalidDatum("u0.x and u0.u must be non-empty and of equal length".into()));
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().chain(u).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidDatum("u0.x must be strictly increasing and finite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Initial data `(M0, u0)` with support radius `R0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDatum {
    #[serde(rename = "M0")]
    pub m0: CdfSpec,
    pub u0: VelocitySpec,
    #[serde(rename = "R0")]
    pub r0: f64,
}

impl InitialDatum {
    pub fn new(m0: CdfSpec, u0: VelocitySpec, r0: f64) -> Result<InitialDatum> {
        let d = InitialDatum { m0, u0, r0 };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r0 >= 0.0 && self.r0.is_finite()) {
            return Err(Error::InvalidDatum(format!("R0 must be nonnegative, got {}", self.r0)));
        }
        self.u0.validate()?;
        let (lo, hi) = match &self.m0 {
            CdfSpec::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return Err(Error::InvalidDatum(format!("M0 uniform needs a < b, got [{a}, {b}]")));
                }
                (*a, *b)
            }
            CdfSpec::Atoms { positions, masses } => {
                if positions.is_empty() || positions.len() != masses.len() {
                    return Err(Error::InvalidDatum("M0.positions and M0.masses must be non-empty and of equal length".into()));
                }
                if positions.windows(2).any(|w| w[0] > w[1]) || positions.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidDatum("M0.positions must be sorted and finite".into()));
                }
                if masses.iter().any(|&m| !(m > 0.0)) {
                    return Err(Error::InvalidDatum("M0.masses must be positive".into()));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidDatum(format!("M0.masses sum to {total}, expected 1")));
                }
                (positions[0], positions[positions.len() - 1])
            }
            CdfSpec::Table { x, m } => {
                if x.is_empty() || x.len() != m.len() {
                    return Err(Error::InvalidDatum("M0.x and M0.m must be non-empty and of equal length".into()));
                }
                if x.windows(2).any(|w| !(w[1] > w[0])) || x.iter().any(|p| !p.is_finite()) {
                    return Err(Error::InvalidDatum("M0.x must be strictly increasing".into()));
                }
                if m.windows(2).any(|w| w[1] < w[0]) || !(m[0] >= 0.0) {
                    return Err(Error::InvalidDatum("M0.m must be nondecreasing and nonnegative".into()));
                }
                if (m[m.len() - 1] - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidDatum("M0.m must end at 1".into()));
                }
                let atoms = self.atoms().unwrap();
                (atoms.0[0], atoms.0[atoms.0.len() - 1])
            }
        };
        let slack = 1e-12 * (1.0 + self.r0);
        if lo < -self.r0 - slack || hi > self.r0 + slack {
            return Err(Error::InvalidDatum(format!("support [{lo}, {hi}] exceeds R0 = {}", self.r0)));
        }
        Ok(())
    }

    /// Atoms `(positions, masses)` of step data; `None` for a density.
    pub fn atoms(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.m0 {
            CdfSpec::Uniform { .. } => None,
            CdfSpec::Atoms { positions, masses } => Some((positions.clone(), masses.clone())),
            CdfSpec::Table { x, m } => {
                let mut pos = Vec::new();
                let mut mass = Vec::new();
                let mut prev = 0.0;
                for (&p, &level) in x.iter().zip(m) {
                    if level > prev {
                        pos.push(p);
                        mass.push(level - prev);
                        prev = level;
                    }
                }
                Some((pos, mass))
            }
        }
    }

    /// `M0(x)`, right-continuous.
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.m0 {
            CdfSpec::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            _ => {
                let (pos, mass) = self.atoms().unwrap();
                let k = pos.partition_point(|&p| p <= x);
                mass[..k].iter().sum()
            }
        }
    }

    /// Points where `M0` is not affine.
    pub fn cdf_breakpoints(&self) -> Vec<f64> {
        match &self.m0 {
            CdfSpec::Uniform { a, b } => vec![*a, *b],
            _ => self.atoms().unwrap().0,
        }
    }

    /// `psi0(x) = u0(x) + (omega * rho0)(x)`, the convolution written as
    /// `(phi * M0)(x)`: a finite sum for atoms, quadrature otherwise.
    pub fn psi0(&self, k: &Kernel, x: f64, tol: f64) -> Result<f64> {
        Ok(self.u0.eval(x) + self.omega_conv_rho(k, &[x], tol)?[0])
    }

    fn omega_conv_rho(&self, k: &Kernel, xs: &[f64], tol: f64) -> Result<Vec<f64>> {
        if let Some((pos, mass)) = self.atoms() {
            return Ok(interaction::omega_sums(k, &pos, &mass, xs));
        }
        let (lo, hi) = k.support();
        let kb = k.breakpoints();
        let cb = self.cdf_breakpoints();
        xs.iter()
            .map(|&x| {
                // y ranges over x - supp(phi); M0 kinks and kernel kinks split it
                let mut breaks: Vec<f64> = kb.iter().map(|b| x - b).collect();
                breaks.extend(&cb);
                let r = integrate_with_breaks(|y| k.phi(x - y) * self.cdf(y), x - hi, x - lo, &breaks, tol)?;
                Ok(r.value)
            })
            .collect()
    }
}

/// `inf{x : M0(x) >= m}` for `m` in `(0, 1]`.
pub fn pseudo_inverse(d: &InitialDatum, m: f64) -> f64 {
    match &d.m0 {
        CdfSpec::Uniform { a, b } => a + m.clamp(0.0, 1.0) * (b - a),
        _ => {
            let (pos, mass) = d.atoms().unwrap();
            let thetas = cumulative_masses(&mass);
            let j = thetas[1..].partition_point(|&t| t < m - LEVEL_TOL);
            pos[j.min(pos.len() - 1)]
        }
    }
}

/// How the `N` particle masses are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MassRule {
    Uniform,
    /// Explicit masses; with `c` and `gamma` set, also checks the decay
    /// `max m_i <= c / N^gamma`.
    Custom {
        masses: Vec<f64>,
        #[serde(default)]
        c: Option<f64>,
        #[serde(default)]
        gamma: Option<f64>,
    },
}

impl MassRule {
    pub fn masses(&self, n: usize) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::BadMassRule("N must be at least 1".into()));
        }
        match self {
            MassRule::Uniform => {
                // the last mass absorbs rounding so the running total ends at exactly 1
                let mut m = vec![1.0 / n as f64; n];
                let rest: f64 = m[..n - 1].iter().sum();
                m[n - 1] = 1.0 - rest;
                Ok(m)
            }
            MassRule::Custom { masses, c, gamma } => {
                if masses.len() != n {
                    return Err(Error::BadMassRule(format!("{} masses for N = {n}", masses.len())));
                }
                if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
                    return Err(Error::BadMassRule("masses must be positive".into()));
                }
                let total: f64 = masses.iter().sum();
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::BadMassRule(format!("masses sum to {total}, expected 1")));
                }
                match (c, gamma) {
                    (Some(c), Some(g)) => {
                        if !(*g > 0.0) {
                            return Err(Error::BadMassRule("gamma must be positive".into()));
                        }
                        let cap = c / (n as f64).powf(*g);
                        let worst = masses.iter().copied().fold(0.0, f64::max);
                        if worst > cap {
                            return Err(Error::BadMassRule(format!("max mass {worst} exceeds c/N^gamma = {cap}")));
                        }
                    }
                    (None, None) => {}
                    _ => return Err(Error::BadMassRule("c and gamma must be given together".into())),
                }
                Ok(masses.clone())
            }
        }
    }
}

/// Masses per `rule` and positions `x_i = M0^{-1}(theta_i)`.
pub fn atomize(d: &InitialDatum, n: usize, rule: &MassRule) -> Result<(Vec<f64>, Vec<f64>)> {
    let masses = rule.masses(n)?;
    let thetas = cumulative_masses(&masses);
    let positions = thetas[1..].iter().map(|&t| pseudo_inverse(d, t)).collect();
    Ok((masses, positions))
}

/// `A` on the cumulative grid of `masses`. Atomic data are integrated
/// exactly; for densities each cell is integrated by adaptive quadrature in
/// the mass variable.
pub fn build_flux_from_data(d: &InitialDatum, k: &Kernel, masses: &[f64], tol: f64) -> Result<PiecewiseLinearFlux> {
    let thetas = cumulative_masses(masses);
    let mut values = Vec::with_capacity(thetas.len());
    values.push(0.0);
    match d.atoms() {
        Some((pos, mass)) => {
            let psi: Vec<f64> = {
                let conv = interaction::omega_sums(k, &pos, &mass, &pos);
                pos.iter().zip(conv).map(|(&x, c)| d.u0.eval(x) + c).collect()
            };
            let atom_thetas = cumulative_masses(&mass);
            // A at an arbitrary level: whole atoms below it plus a partial one
            let mut whole = vec![0.0; pos.len() + 1];
            for j in 0..pos.len() {
                whole[j + 1] = whole[j] + mass[j] * psi[j];
            }
            for &t in &thetas[1..] {
                let j = atom_thetas[1..].partition_point(|&s| s < t - LEVEL_TOL);
                let value = if j >= pos.len() {
                    whole[pos.len()]
                } else {
                    whole[j] + (t - atom_thetas[j]).max(0.0) * psi[j]
                };
                values.push(value);
            }
        }
        None => {
            let cell_tol = tol / masses.len() as f64;
            let mut acc = 0.0;
            for w in thetas.windows(2) {
                let cell = integrate(
                    |m| {
                        let x = pseudo_inverse(d, m);
                        d.psi0(k, x, 0.01 * cell_tol).unwrap_or(f64::NAN)
                    },
                    w[0],
                    w[1],
                    cell_tol,
                )?;
                acc += cell.value;
                values.push(acc);
            }
        }
    }
    PiecewiseLinearFlux::new(thetas, values)
}

/// `psi_i = (A(theta_i) - A(theta_{i-1})) / m_i` and
/// `v_i = psi_i - sum_j m_j omega(x_i - x_j)`.
pub fn recover_initial_velocities(masses: &[f64], positions: &[f64], a: &PiecewiseLinearFlux, k: &Kernel) -> Result<Vec<f64>> {
    a.check_grid(masses)?;
    if positions.len() != masses.len() {
        return Err(Error::InvalidArgument("positions and masses differ in length".into()));
    }
    let values = a.values();
    let conv = interaction::omega_sums(k, positions, masses, positions);
    Ok((0..masses.len())
        .map(|i| (values[i + 1] - values[i]) / masses[i] - conv[i])
        .collect())
}

/// Atomize, build the flux and recover velocities in one go.
pub fn discretize(d: &InitialDatum, k: &Kernel, n: usize, rule: &MassRule, tol: f64) -> Result<(ParticleSystem, PiecewiseLinearFlux)> {
    d.validate()?;
    let (masses, positions) = atomize(d, n, rule)?;
    let a = build_flux_from_data(d, k, &masses, tol)?;
    let velocities = recover_initial_velocities(&masses, &positions, &a, k)?;
    Ok((ParticleSystem::new(positions, velocities, masses)?, a))
}

/// Sub-cells per flux cell in `flux_interpolation_error`.
pub const INTERPOLATION_SUBDIVISIONS: usize = 64;

/// `sup |A_N(m) - A(m)|` over a uniform refinement of the flux grid.
pub fn flux_interpolation_error<F: Fn(f64) -> f64>(exact: F, a_n: &PiecewiseLinearFlux) -> f64 {
    let th = a_n.thetas();
    let mut worst: f64 = 0.0;
    for w in th.windows(2) {
        for j in 0..=INTERPOLATION_SUBDIVISIONS {
            let m = w[0] + (w[1] - w[0]) * j as f64 / INTERPOLATION_SUBDIVISIONS as f64;
            worst = worst.max((a_n.eval(m) - exact(m)).abs());
        }
    }
    worst
}

// int_0^len |alpha + beta s| ds
fn abs_affine_integral(alpha: f64, beta: f64, len: f64) -> f64 {
    let end = alpha + beta * len;
    if alpha * end >= 0.0 {
        0.5 * len * (alpha.abs() + end.abs())
    } else {
        // sign change at s* = -alpha / beta
        let s = -alpha / beta;
        0.5 * (s * alpha.abs() + (len - s) * end.abs())
    }
}

/// Exact `||M_N - M0||_{L1}` for a staircase `M_N`: on every interval
/// between breakpoints `M0` is affine and `M_N` constant.
pub fn cdf_l1_error(d: &InitialDatum, m_n: &StepFunction) -> f64 {
    let mut pts: Vec<f64> = d.cdf_breakpoints();
    pts.extend_from_slice(m_n.breakpoints());
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (p, q) = (w[0], w[1]);
        let len = q - p;
        let c = m_n.eval(p);
        let start = d.cdf(p);
        let slope = match &d.m0 {
            CdfSpec::Uniform { a, b } if p >= *a && q <= *b => 1.0 / (b - a),
            _ => 0.0,
        };
        total += abs_affine_integral(start - c, slope, len);
    }
    total
}
