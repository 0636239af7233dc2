//! Convolution kernels `omega` and their derivatives `phi = omega'`.
//!
//! A kernel is admissible when it is nonnegative, compactly supported,
//! Lipschitz (no jumps, in particular at the support endpoints) and has
//! unit mass. The built-in families satisfy this in closed form; custom
//! kernels can be checked with [`validate_hypotheses`].
//!
//! Orientation: the nonlocal term at `x` is `sum_j m_j omega(x - x_j)`, so a
//! kernel supported on `[-r, 0]` ("downstream") weights vehicles at
//! `x_j in [x, x + r]`, i.e. the traffic ahead.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Built-in kernel families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `(1/2r)(1 + cos(pi x / r))` on `[-r, r]`.
    RaisedCosine,
    /// Rescaled quadratic B-spline on `[-r, r]`, C1 with kinks in `phi`.
    QuadraticSpline,
    /// Raised cosine bump on `[-r, 0]`: looks at traffic ahead.
    DownstreamCosine,
    /// Raised cosine bump on `[0, r]`: looks at traffic behind.
    UpstreamCosine,
    /// Triangle `(1/r)(1 - |x|/r)` on `[-r, r]`, Lipschitz but not C1.
    Hat,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::RaisedCosine,
        KernelFamily::QuadraticSpline,
        KernelFamily::DownstreamCosine,
        KernelFamily::UpstreamCosine,
        KernelFamily::Hat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::RaisedCosine => "raised_cosine",
            KernelFamily::QuadraticSpline => "quadratic_spline",
            KernelFamily::DownstreamCosine => "downstream_cosine",
            KernelFamily::UpstreamCosine => "upstream_cosine",
            KernelFamily::Hat => "hat",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            KernelFamily::RaisedCosine => "symmetric raised cosine on [-r, r]",
            KernelFamily::QuadraticSpline => "symmetric quadratic B-spline on [-r, r]",
            KernelFamily::DownstreamCosine => "one-sided cosine bump on [-r, 0] (weights traffic ahead)",
            KernelFamily::UpstreamCosine => "one-sided cosine bump on [0, r] (weights traffic behind)",
            KernelFamily::Hat => "symmetric triangle on [-r, r] (Lipschitz, not C1)",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelFamily::ALL
            .into_iter()
            .find(|fam| fam.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

/// Kernel description as it appears in scenario files:
/// `{ "family": "downstream_cosine", "params": [1.0] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: String,
    pub params: Vec<f64>,
}

impl KernelSpec {
    pub fn build(&self) -> Result<Kernel> {
        make_builtin(&self.family, &self.params)
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Shape {
    /// `amp (1 + cos(freq (x - center)))` over one period centred at `center`.
    Cosine { amp: f64, freq: f64, center: f64 },
    QuadraticSpline { r: f64 },
    Hat { r: f64 },
    Custom { omega: RealFn, phi: RealFn },
}

/// Closed-form trigonometric description used by the fast windowed sums.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TrigForm {
    pub amp: f64,
    pub freq: f64,
    pub center: f64,
}

/// An admissible convolution kernel together with its norms.
#[derive(Clone)]
pub struct Kernel {
    name: String,
    shape: Shape,
    lo: f64,
    hi: f64,
    sup_omega: f64,
    sup_phi: f64,
    l1_phi: f64,
    fast_sums: bool,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("support", &(self.lo, self.hi))
            .field("sup_omega", &self.sup_omega)
            .field("sup_phi", &self.sup_phi)
            .field("l1_phi", &self.l1_phi)
            .finish()
    }
}

/// Builds one of the built-in families; every family takes the support
/// length parameter `r > 0` as its only parameter.
pub fn make_builtin(name: &str, params: &[f64]) -> Result<Kernel> {
    let family: KernelFamily = name.parse()?;
    let r = match params {
        [r] => *r,
        _ => {
            return Err(Error::BadKernelParams(format!(
                "{name} takes exactly one parameter r, got {}",
                params.len()
            )))
        }
    };
    Kernel::builtin(family, r)
}

impl Kernel {
    pub fn builtin(family: KernelFamily, r: f64) -> Result<Kernel> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::NonpositiveSupport(r));
        }
        let name = format!("{}({r})", family.name());
        let kernel = match family {
            KernelFamily::RaisedCosine => Kernel::cosine(name, 1.0 / (2.0 * r), PI / r, 0.0),
            KernelFamily::DownstreamCosine => Kernel::cosine(name, 1.0 / r, 2.0 * PI / r, -0.5 * r),
            KernelFamily::UpstreamCosine => Kernel::cosine(name, 1.0 / r, 2.0 * PI / r, 0.5 * r),
            KernelFamily::QuadraticSpline => {
                let s = 1.5 / r;
                Kernel {
                    name,
                    shape: Shape::QuadraticSpline { r },
                    lo: -r,
                    hi: r,
                    sup_omega: 0.75 * s,
                    sup_phi: s * s,
                    l1_phi: 1.5 * s,
                    fast_sums: false,
                }
            }
            KernelFamily::Hat => Kernel {
                name,
                shape: Shape::Hat { r },
                lo: -r,
                hi: r,
                sup_omega: 1.0 / r,
                sup_phi: 1.0 / (r * r),
                l1_phi: 2.0 / r,
                fast_sums: false,
            },
        };
        Ok(kernel)
    }

    pub fn raised_cosine(r: f64) -> Result<Kernel> {
        Kernel::builtin(KernelFamily::RaisedCosine, r)
    }

    pub fn downstream_cosine(r: f64) -> Result<Kernel> {
        Kernel::builtin(KernelFamily::DownstreamCosine, r)
    }

    fn cosine(name: String, amp: f64, freq: f64, center: f64) -> Kernel {
        let half = PI / freq;
        Kernel {
            name,
            shape: Shape::Cosine { amp, freq, center },
            lo: center - half,
            hi: center + half,
            sup_omega: 2.0 * amp,
            sup_phi: amp * freq,
            l1_phi: 4.0 * amp,
            fast_sums: true,
        }
    }

    /// Wraps arbitrary closures as a kernel on `[lo, hi]`. The norms are
    /// measured on a dense grid; call [`validate_hypotheses`] before relying
    /// on the kernel.
    pub fn custom<W, P>(name: &str, lo: f64, hi: f64, omega: W, phi: P) -> Result<Kernel>
    where
        W: Fn(f64) -> f64 + Send + Sync + 'static,
        P: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadKernelParams(format!("empty support [{lo}, {hi}]")));
        }
        let omega: RealFn = Arc::new(omega);
        let phi: RealFn = Arc::new(phi);
        let samples = 200_000;
        let (mut sup_omega, mut sup_phi) = (0.0f64, 0.0f64);
        for i in 0..=samples {
            let x = lo + (hi - lo) * i as f64 / samples as f64;
            sup_omega = sup_omega.max(omega(x).abs());
            sup_phi = sup_phi.max(phi(x).abs());
        }
        let phi_abs = phi.clone();
        let l1_phi = quadrature::integrate(move |x| phi_abs(x).abs(), lo, hi, 1e-10)?.value;
        Ok(Kernel {
            name: name.to_string(),
            shape: Shape::Custom { omega, phi },
            lo,
            hi,
            sup_omega,
            sup_phi,
            l1_phi,
            fast_sums: false,
        })
    }

    /// Same kernel, but interaction sums are always evaluated term by term.
    pub fn with_direct_sums(mut self) -> Kernel {
        self.fast_sums = false;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Closed support interval `[a, b]`.
    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn sup_omega(&self) -> f64 {
        self.sup_omega
    }

    pub fn sup_phi(&self) -> f64 {
        self.sup_phi
    }

    pub fn l1_phi(&self) -> f64 {
        self.l1_phi
    }

    /// Interior points where `omega` or `phi` is not smooth, or where `phi`
    /// changes sign. Used to split quadratures.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Cosine { center, .. } => vec![*center],
            Shape::QuadraticSpline { r } => vec![-r / 3.0, 0.0, r / 3.0],
            Shape::Hat { .. } => vec![0.0],
            Shape::Custom { .. } => Vec::new(),
        }
    }

    /// Pair separations `d > 0` at which `phi(d)` or `phi(-d)` is not
    /// smooth. Contact (`d = 0`) is excluded: it is a collision.
    pub fn kinks(&self) -> Vec<f64> {
        let mut out = vec![self.lo.abs(), self.hi.abs()];
        if let Shape::QuadraticSpline { r } = self.shape {
            out.push(r / 3.0);
        }
        out.retain(|&d| d > 0.0);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub(crate) fn trig_form(&self) -> Option<TrigForm> {
        match self.shape {
            Shape::Cosine { amp, freq, center } if self.fast_sums => Some(TrigForm { amp, freq, center }),
            _ => None,
        }
    }

    /// `omega(x)`; zero outside the support.
    pub fn omega(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        match &self.shape {
            Shape::Cosine { amp, freq, center } => amp * (1.0 + (freq * (x - center)).cos()),
            Shape::QuadraticSpline { r } => {
                let s = 1.5 / r;
                s * bspline2(s * x)
            }
            Shape::Hat { r } => (1.0 - x.abs() / r) / r,
            Shape::Custom { omega, .. } => omega(x),
        }
    }

    /// `phi(x) = omega'(x)`; zero outside the support.
    pub fn phi(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        match &self.shape {
            Shape::Cosine { amp, freq, center } => -amp * freq * (freq * (x - center)).sin(),
            Shape::QuadraticSpline { r } => {
                let s = 1.5 / r;
                s * s * bspline2_deriv(s * x)
            }
            Shape::Hat { r } => {
                if x > 0.0 {
                    -1.0 / (r * r)
                } else if x < 0.0 {
                    1.0 / (r * r)
                } else {
                    0.0
                }
            }
            Shape::Custom { phi, .. } => phi(x),
        }
    }
}

/// Free-function form of [`Kernel::omega`].
pub fn eval_omega(k: &Kernel, x: f64) -> f64 {
    k.omega(x)
}

/// Free-function form of [`Kernel::phi`].
pub fn eval_phi(k: &Kernel, x: f64) -> f64 {
    k.phi(x)
}

// Unit-mass quadratic B-spline on [-3/2, 3/2].
fn bspline2(u: f64) -> f64 {
    let a = u.abs();
    if a <= 0.5 {
        0.75 - u * u
    } else if a <= 1.5 {
        0.5 * (1.5 - a) * (1.5 - a)
    } else {
        0.0
    }
}

fn bspline2_deriv(u: f64) -> f64 {
    let a = u.abs();
    if a <= 0.5 {
        -2.0 * u
    } else if a <= 1.5 {
        -(1.5 - a) * u.signum()
    } else {
        0.0
    }
}

/// Tolerance on `|int omega - 1|`.
pub const UNIT_MASS_TOL: f64 = 1e-10;
/// Tolerance on `omega` at the support endpoints.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Tolerance on `|omega(b) - omega(a) - int_a^b phi|` per grid cell.
pub const DERIVATIVE_TOL: f64 = 1e-8;

/// Outcome of [`validate_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub nonnegative: bool,
    pub unit_mass: bool,
    pub boundary_continuous: bool,
    pub derivative_consistent: bool,
    /// Declared norms bound the sampled values from above.
    pub norms_consistent: bool,
    pub mass: f64,
    pub max_derivative_defect: f64,
    pub sup_omega: f64,
    pub sup_phi: f64,
    pub l1_phi: f64,
    pub passed: bool,
}

/// Checks that `k` is nonnegative, vanishes outside and at the ends of its
/// support, has unit mass and that `phi` integrates to the increments of
/// `omega`. The integral form of the derivative check tolerates interior
/// kinks (Lipschitz kernels are admissible).
pub fn validate_hypotheses(k: &Kernel, quad_tol: f64) -> Result<ValidationReport> {
    if !(quad_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("quad_tol must be positive, got {quad_tol}")));
    }
    let (lo, hi) = k.support();
    let width = hi - lo;
    let breaks = k.breakpoints();

    let cells = 20_000;
    let mut nonnegative = true;
    let (mut seen_omega, mut seen_phi) = (0.0f64, 0.0f64);
    for i in 0..=cells {
        let x = lo + width * i as f64 / cells as f64;
        let w = k.omega(x);
        nonnegative &= w >= 0.0;
        seen_omega = seen_omega.max(w.abs());
        seen_phi = seen_phi.max(k.phi(x).abs());
    }
    for i in 1..=1000 {
        let d = width * i as f64 / 1000.0;
        nonnegative &= k.omega(lo - d) == 0.0 && k.omega(hi + d) == 0.0;
    }
    let slack = 1e-12 * (1.0 + k.sup_omega().max(k.sup_phi()));
    let norms_consistent = seen_omega <= k.sup_omega() + slack && seen_phi <= k.sup_phi() + slack;

    let mass = quadrature::integrate_with_breaks(|x| k.omega(x), lo, hi, &breaks, quad_tol)?;
    let unit_mass = (mass.value - 1.0).abs() <= UNIT_MASS_TOL.max(quad_tol);

    let boundary_continuous = k.omega(lo).abs() <= BOUNDARY_TOL && k.omega(hi).abs() <= BOUNDARY_TOL;

    let deriv_cells = 1000;
    let mut max_defect = 0.0f64;
    for i in 0..deriv_cells {
        let a = lo + width * i as f64 / deriv_cells as f64;
        let b = lo + width * (i + 1) as f64 / deriv_cells as f64;
        let int_phi = quadrature::integrate_with_breaks(|x| k.phi(x), a, b, &breaks, quad_tol / deriv_cells as f64)?;
        max_defect = max_defect.max((k.omega(b) - k.omega(a) - int_phi.value).abs());
    }
    let derivative_consistent = max_defect <= DERIVATIVE_TOL + quad_tol;

    let l1_phi = quadrature::integrate_with_breaks(|x| k.phi(x).abs(), lo, hi, &breaks, quad_tol)?.value;

    let passed = nonnegative && unit_mass && boundary_continuous && derivative_consistent && norms_consistent;
    Ok(ValidationReport {
        nonnegative,
        unit_mass,
        boundary_continuous,
        derivative_consistent,
        norms_consistent,
        mass: mass.value,
        max_derivative_defect: max_defect,
        sup_omega: seen_omega,
        sup_phi: seen_phi,
        l1_phi,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_builtins() -> Vec<Kernel> {
        let mut out = Vec::new();
        for fam in KernelFamily::ALL {
            for r in [0.3, 1.0, 2.0] {
                out.push(Kernel::builtin(fam, r).unwrap());
            }
        }
        out
    }

    #[test]
    fn kink_separations() {
        assert_eq!(Kernel::raised_cosine(0.5).unwrap().kinks(), vec![0.5]);
        assert_eq!(Kernel::downstream_cosine(2.0).unwrap().kinks(), vec![2.0]);
        assert_eq!(make_builtin("quadratic_spline", &[0.9]).unwrap().kinks(), vec![0.3, 0.9]);
        assert_eq!(make_builtin("hat", &[1.0]).unwrap().kinks(), vec![1.0]);
    }

    #[test]
    fn raised_cosine_closed_forms() {
        let k = Kernel::raised_cosine(1.0).unwrap();
        assert_eq!(k.omega(2.0), 0.0);
        assert!((k.omega(0.0) - 1.0).abs() < 1e-15);
        assert_eq!(k.phi(0.0), 0.0);
        // d/dx (1/2)(1 + cos(pi x)) = -(pi/2) sin(pi x)
        assert!((k.phi(0.5) + PI / 2.0).abs() < 1e-14);
        assert_eq!(Kernel::raised_cosine(2.0).unwrap().sup_omega(), 0.5);
    }

    #[test]
    fn downstream_orientation() {
        let k = make_builtin("downstream_cosine", &[1.0]).unwrap();
        assert_eq!(k.support(), (-1.0, 0.0));
        assert!((k.omega(-0.5) - 2.0).abs() < 1e-14);
        assert_eq!(k.omega(0.25), 0.0);
        let up = make_builtin("upstream_cosine", &[1.0]).unwrap();
        for x in [-0.9, -0.5, -0.1] {
            assert!((k.omega(x) - up.omega(-x)).abs() < 1e-15);
        }
    }

    #[test]
    fn builtin_errors() {
        assert!(matches!(make_builtin("gaussian", &[1.0]), Err(Error::UnknownFamily(_))));
        assert!(matches!(make_builtin("hat", &[0.0]), Err(Error::NonpositiveSupport(_))));
        assert!(matches!(make_builtin("hat", &[-1.0]), Err(Error::NonpositiveSupport(_))));
        assert!(matches!(make_builtin("hat", &[1.0, 2.0]), Err(Error::BadKernelParams(_))));
    }

    #[test]
    fn every_builtin_passes_validation() {
        for k in all_builtins() {
            let rep = validate_hypotheses(&k, 1e-12).unwrap();
            assert!(rep.passed, "{}: {rep:?}", k.name());
            assert!((rep.mass - 1.0).abs() <= 1e-10, "{}", k.name());
            assert!((rep.l1_phi - k.l1_phi()).abs() < 1e-8, "{}", k.name());
        }
    }

    #[test]
    fn validation_reports_raised_cosine_sup() {
        let rep = validate_hypotheses(&Kernel::raised_cosine(2.0).unwrap(), 1e-12).unwrap();
        assert!(rep.passed);
        assert!((rep.sup_omega - 0.5).abs() < 1e-12);
    }

    #[test]
    fn misnormalized_kernel_fails_unit_mass() {
        let base = Kernel::raised_cosine(1.0).unwrap();
        let (b1, b2) = (base.clone(), base);
        let k = Kernel::custom("scaled", -1.0, 1.0, move |x| 0.9 * b1.omega(x), move |x| 0.9 * b2.phi(x)).unwrap();
        let rep = validate_hypotheses(&k, 1e-12).unwrap();
        assert!(!rep.unit_mass);
        assert!(!rep.passed);
        assert!((rep.mass - 0.9).abs() < 1e-10);
        assert!(rep.nonnegative && rep.boundary_continuous && rep.derivative_consistent);
    }

    #[test]
    fn box_kernel_fails_boundary_continuity() {
        let k = Kernel::custom("box", -0.5, 0.5, |_| 1.0, |_| 0.0).unwrap();
        let rep = validate_hypotheses(&k, 1e-12).unwrap();
        assert!(rep.unit_mass);
        assert!(!rep.boundary_continuous);
        assert!(!rep.passed);
    }

    #[test]
    fn wrong_derivative_is_detected() {
        let k = Kernel::custom(
            "bad-phi",
            -1.0,
            1.0,
            |x| 0.5 * (1.0 + (PI * x).cos()),
            |x| -(PI / 4.0) * (PI * x).sin(),
        )
        .unwrap();
        let rep = validate_hypotheses(&k, 1e-12).unwrap();
        assert!(!rep.derivative_consistent);
    }

    #[test]
    fn hat_kernel_with_interior_kink_passes() {
        let rep = validate_hypotheses(&make_builtin("hat", &[0.7]).unwrap(), 1e-12).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn finite_differences_match_phi_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for fam in [KernelFamily::RaisedCosine, KernelFamily::DownstreamCosine, KernelFamily::UpstreamCosine, KernelFamily::QuadraticSpline] {
            let k = Kernel::builtin(fam, 1.0).unwrap();
            let (lo, hi) = k.support();
            for _ in 0..100 {
                let x = rng.gen_range(lo - 0.2..hi + 0.2);
                let fd = (k.omega(x + h) - k.omega(x - h)) / (2.0 * h);
                assert!((fd - k.phi(x)).abs() < 1e-8, "{} at {x}: fd {fd} phi {}", k.name(), k.phi(x));
            }
        }
    }

    #[test]
    fn grid_properties_of_c1_builtins() {
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in all_builtins() {
            let (lo, hi) = k.support();
            let width = hi - lo;
            let c1 = !k.name().starts_with("hat");
            // cell midpoints of a 1000-cell grid over the support plus a margin
            for i in 0..1000 {
                let x = lo - 0.1 * width + 1.2 * width * (i as f64 + 0.5) / 1000.0;
                let w = k.omega(x);
                assert!(w >= 0.0);
                assert!(w <= k.sup_omega() + 1e-12);
                assert!(k.phi(x).abs() <= k.sup_phi() + 1e-12);
                if x < lo || x > hi {
                    assert_eq!(w, 0.0);
                }
                if c1 {
                    let fd = (k.omega(x + h) - k.omega(x - h)) / (2.0 * h);
                    assert!((fd - k.phi(x)).abs() <= 1e-6, "{} at {x}", k.name());
                }
            }
            for _ in 0..1000 {
                let x = rng.gen_range(lo - width..hi + width);
                let w = k.omega(x);
                assert!(w >= 0.0);
                if x < lo || x > hi {
                    assert_eq!(w, 0.0);
                }
            }
        }
    }

    #[test]
    fn family_names_round_trip() {
        for fam in KernelFamily::ALL {
            assert_eq!(fam.name().parse::<KernelFamily>().unwrap(), fam);
        }
        let spec: KernelSpec = serde_json::from_str(r#"{ "family": "downstream_cosine", "params": [1.0] }"#).unwrap();
        assert_eq!(spec.build().unwrap().support(), (-1.0, 0.0));
    }
}
