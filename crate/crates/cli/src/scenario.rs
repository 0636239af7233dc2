//! Scenario files: parsing, defaults and validation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use narz_core::cumulative::PiecewiseLinearFlux;
use narz_core::discretize::{discretize, CdfSpec, InitialDatum, MassRule, VelocitySpec};
use narz_core::dynamics::{ParticleSystem, Tolerances, MASS_TOL};
use narz_core::kernel::{Kernel, KernelFamily, KernelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

/// Input problem; the message starts with the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn invalid(key: &str, msg: impl fmt::Display) -> InputError {
    InputError(format!("{key}: {msg}"))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    /// Explicit particles.
    Atoms { positions: Vec<f64>, velocities: Vec<f64>, masses: Vec<f64> },
    /// `n` equal-mass particles at uniform random positions in
    /// `[-spread, spread]` with speeds uniform in `[-speed, speed]`.
    Random { n: usize, spread: f64, speed: f64 },
    /// Initial datum, discretized with `n` particles.
    Datum {
        #[serde(rename = "M0")]
        m0: CdfSpec,
        u0: VelocitySpec,
        #[serde(rename = "R0")]
        r0: f64,
        n: usize,
        #[serde(default)]
        mass_rule: Option<MassRule>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    substep: Option<f64>,
    event: Option<f64>,
    gap: Option<f64>,
    certificate: Option<f64>,
    entropy: Option<f64>,
    flux: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    kernel: KernelSpec,
    horizon: f64,
    initial: InitialSpec,
    #[serde(default)]
    snapshots: Option<Vec<f64>>,
    #[serde(default)]
    tolerances: RawTolerances,
    #[serde(default)]
    output: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    ns: Option<Vec<usize>>,
    #[serde(default)]
    n_ref: Option<usize>,
    #[serde(default)]
    alphas: Option<Vec<f64>>,
}

/// Tolerances with every default filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioTolerances {
    pub substep: f64,
    pub event: f64,
    /// `None` keeps the solver default, which scales with the radius.
    pub gap: Option<f64>,
    /// Bound on Rankine-Hugoniot residuals and Oleinik violations.
    pub certificate: f64,
    /// Bound on Kruzkov violations and on their time-quadrature error.
    pub entropy: f64,
    pub flux: f64,
}

/// Number of default geometric snapshot times `T 2^-j`.
pub const DEFAULT_SNAPSHOTS: i32 = 10;

#[derive(Debug, Clone)]
pub struct Scenario {
    pub kernel_spec: KernelSpec,
    pub kernel: Kernel,
    pub horizon: f64,
    pub initial: InitialSpec,
    /// Sorted, inside `[0, horizon]`.
    pub snapshots: Vec<f64>,
    pub tolerances: ScenarioTolerances,
    pub output: PathBuf,
    pub seed: u64,
    pub ns: Option<Vec<usize>>,
    pub n_ref: Option<usize>,
    pub alphas: Vec<f64>,
}

/// Where the scenario's particles and flux come from.
pub struct Setup {
    pub s0: ParticleSystem,
    pub flux: PiecewiseLinearFlux,
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, InputError> {
    let text = fs::read_to_string(path).map_err(|e| InputError(format!("{}: {e}", path.display())))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<Scenario, InputError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawScenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        // syntax errors carry no usable path
        let key = if key == "." || key == "?" { "scenario".to_string() } else { key };
        InputError(format!("{key}: {}", e.into_inner()))
    })?;
    validate(raw)
}

fn positive(key: &str, value: Option<f64>, default: f64) -> Result<f64, InputError> {
    match value {
        None => Ok(default),
        Some(v) if v > 0.0 && v.is_finite() => Ok(v),
        Some(v) => Err(invalid(key, format!("must be positive and finite, got {v}"))),
    }
}

fn validate(raw: RawScenario) -> Result<Scenario, InputError> {
    if raw.kernel.family.parse::<KernelFamily>().is_err() {
        let known: Vec<&str> = KernelFamily::ALL.iter().map(|f| f.name()).collect();
        return Err(invalid("kernel.family", format!("unknown family `{}` (known: {})", raw.kernel.family, known.join(", "))));
    }
    let kernel = raw.kernel.build().map_err(|e| invalid("kernel.params", e))?;

    let horizon = raw.horizon;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", format!("must be positive and finite, got {horizon}")));
    }

    let snapshots = match raw.snapshots {
        None => (0..DEFAULT_SNAPSHOTS).rev().map(|j| horizon * 0.5f64.powi(j)).collect(),
        Some(mut s) => {
            if s.iter().any(|&t| !(t >= 0.0 && t <= horizon)) {
                return Err(invalid("snapshots", format!("times must lie in [0, {horizon}]")));
            }
            s.sort_by(f64::total_cmp);
            s.dedup();
            s
        }
    };

    let t = raw.tolerances;
    let tolerances = ScenarioTolerances {
        substep: positive("tolerances.substep", t.substep, horizon / 1e4)?,
        event: positive("tolerances.event", t.event, 1e-10)?,
        gap: t.gap.map(|g| positive("tolerances.gap", Some(g), g)).transpose()?,
        certificate: positive("tolerances.certificate", t.certificate, 1e-8)?,
        entropy: positive("tolerances.entropy", t.entropy, 1e-6)?,
        flux: positive("tolerances.flux", t.flux, 1e-10)?,
    };

    validate_initial(&raw.initial)?;

    if let Some(ns) = &raw.ns {
        if ns.is_empty() || ns.iter().any(|&n| n == 0) {
            return Err(invalid("ns", "must be a non-empty list of positive counts"));
        }
    }
    if raw.n_ref == Some(0) {
        return Err(invalid("n_ref", "must be positive"));
    }
    let alphas = raw.alphas.unwrap_or_else(default_alphas);
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(invalid("alphas", "levels must be finite"));
    }

    Ok(Scenario {
        kernel_spec: raw.kernel,
        kernel,
        horizon,
        initial: raw.initial,
        snapshots,
        tolerances,
        output: raw.output.unwrap_or_else(|| PathBuf::from("narz-out")),
        seed: raw.seed,
        ns: raw.ns,
        n_ref: raw.n_ref,
        alphas,
    })
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_alphas() -> Vec<f64> {
    (1..10).map(|i| i as f64 / 10.0).collect()
}

fn validate_initial(init: &InitialSpec) -> Result<(), InputError> {
    match init {
        InitialSpec::Atoms { positions, velocities, masses } => {
            if positions.is_empty() {
                return Err(invalid("initial.positions", "at least one particle is required"));
            }
            if velocities.len() != positions.len() {
                return Err(invalid("initial.velocities", format!("{} entries for {} positions", velocities.len(), positions.len())));
            }
            if masses.len() != positions.len() {
                return Err(invalid("initial.masses", format!("{} entries for {} positions", masses.len(), positions.len())));
            }
            if positions.iter().any(|x| !x.is_finite()) {
                return Err(invalid("initial.positions", "entries must be finite"));
            }
            if positions.windows(2).any(|w| w[1] < w[0]) {
                return Err(invalid("initial.positions", "must be sorted"));
            }
            if velocities.iter().any(|v| !v.is_finite()) {
                return Err(invalid("initial.velocities", "entries must be finite"));
            }
            if masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
                return Err(invalid("initial.masses", "entries must be positive"));
            }
            let total: f64 = masses.iter().sum();
            if (total - 1.0).abs() > MASS_TOL {
                return Err(invalid("initial.masses", format!("masses sum to {total}, expected 1")));
            }
        }
        InitialSpec::Random { n, spread, speed } => {
            if *n == 0 {
                return Err(invalid("initial.n", "must be positive"));
            }
            if !(*spread > 0.0 && spread.is_finite()) {
                return Err(invalid("initial.spread", "must be positive and finite"));
            }
            if !(*speed >= 0.0 && speed.is_finite()) {
                return Err(invalid("initial.speed", "must be nonnegative and finite"));
            }
        }
        InitialSpec::Datum { n, mass_rule, .. } => {
            if *n == 0 {
                return Err(invalid("initial.n", "must be positive"));
            }
            init.datum().unwrap().validate().map_err(|e| invalid("initial", e))?;
            if let Some(rule) = mass_rule {
                rule.masses(*n).map_err(|e| invalid("initial.mass_rule", e))?;
            }
        }
    }
    Ok(())
}

impl InitialSpec {
    fn datum(&self) -> Option<InitialDatum> {
        match self {
            InitialSpec::Datum { m0, u0, r0, .. } => Some(InitialDatum { m0: m0.clone(), u0: u0.clone(), r0: *r0 }),
            _ => None,
        }
    }
}

impl Scenario {
    /// Solver tolerances for a system of radius `r0`, with an optional
    /// substep override.
    pub fn solver_tolerances(&self, r0: f64, substep: Option<f64>) -> Tolerances {
        let mut tol = Tolerances::new(self.horizon, r0);
        tol.substep = substep.unwrap_or(self.tolerances.substep);
        tol.time = self.tolerances.event;
        if let Some(gap) = self.tolerances.gap {
            tol.gap = gap;
        }
        tol
    }

    /// The initial datum, particle count and mass rule of a `datum` scenario.
    pub fn datum(&self) -> Option<(InitialDatum, usize, MassRule)> {
        let d = self.initial.datum()?;
        match &self.initial {
            InitialSpec::Datum { n, mass_rule, .. } => Some((d, *n, mass_rule.clone().unwrap_or(MassRule::Uniform))),
            _ => None,
        }
    }

    /// Initial particles and the flux they define.
    pub fn setup(&self) -> Result<Setup, InputError> {
        let from_system = |s0: ParticleSystem| -> Result<Setup, InputError> {
            let flux = PiecewiseLinearFlux::from_system(&s0, &self.kernel).map_err(|e| invalid("initial", e))?;
            Ok(Setup { s0, flux })
        };
        match &self.initial {
            InitialSpec::Atoms { positions, velocities, masses } => {
                let s0 = ParticleSystem::new(positions.clone(), velocities.clone(), masses.clone()).map_err(|e| invalid("initial", e))?;
                from_system(s0)
            }
            InitialSpec::Random { n, spread, speed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut x: Vec<f64> = (0..*n).map(|_| rng.gen_range(-spread..=*spread)).collect();
                x.sort_by(f64::total_cmp);
                let v: Vec<f64> = (0..*n).map(|_| if *speed > 0.0 { rng.gen_range(-speed..=*speed) } else { 0.0 }).collect();
                let m = MassRule::Uniform.masses(*n).map_err(|e| invalid("initial.n", e))?;
                from_system(ParticleSystem::new(x, v, m).map_err(|e| invalid("initial", e))?)
            }
            InitialSpec::Datum { .. } => {
                let (datum, n, rule) = self.datum().unwrap();
                let (s0, flux) = discretize(&datum, &self.kernel, n, &rule, self.tolerances.flux).map_err(|e| invalid("initial", e))?;
                Ok(Setup { s0, flux })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD_ON: &str = r#"{
        "kernel": { "family": "raised_cosine", "params": [0.1] },
        "horizon": 2.0,
        "initial": { "kind": "atoms", "positions": [-1, 1], "velocities": [1, -1], "masses": [0.5, 0.5] }
    }"#;

    fn err(text: &str) -> String {
        parse_str(text).unwrap_err().0
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let s = parse_str(HEAD_ON).unwrap();
        assert_eq!(s.snapshots.len(), DEFAULT_SNAPSHOTS as usize);
        assert_eq!(*s.snapshots.last().unwrap(), 2.0);
        assert_eq!(s.snapshots[0], 2.0 / 512.0);
        assert_eq!(s.tolerances.substep, 2e-4);
        assert_eq!(s.tolerances.certificate, 1e-8);
        assert_eq!(s.output, PathBuf::from("narz-out"));
        assert_eq!(s.alphas.len(), 9);
        let setup = s.setup().unwrap();
        assert_eq!(setup.s0.len(), 2);
        let tol = s.solver_tolerances(1.0, None);
        assert_eq!(tol, Tolerances::new(2.0, 1.0));
    }

    #[test]
    fn bad_masses_are_named() {
        let e = err(&HEAD_ON.replace("[0.5, 0.5]", "[0.5, 0.6]"));
        assert!(e.starts_with("initial.masses"), "{e}");
    }

    #[test]
    fn unknown_family_is_named() {
        let e = err(&HEAD_ON.replace("raised_cosine", "gaussian"));
        assert!(e.starts_with("kernel.family"), "{e}");
    }

    #[test]
    fn type_errors_carry_their_path() {
        let e = err(&HEAD_ON.replace("\"params\": [0.1]", "\"params\": [\"wide\"]"));
        assert!(e.starts_with("kernel.params"), "{e}");
        let e = err(&HEAD_ON.replace("\"horizon\": 2.0", "\"horizon\": 2.0, \"colour\": 1"));
        assert!(e.contains("colour"), "{e}");
        let e = err(&HEAD_ON.replace("2.0", "-1.0"));
        assert!(e.starts_with("horizon"), "{e}");
        let e = err(&HEAD_ON.replace("[1, -1]", "[1]"));
        assert!(e.starts_with("initial.velocities"), "{e}");
    }

    #[test]
    fn datum_and_random_setups() {
        let text = r#"{
            "kernel": { "family": "downstream_cosine", "params": [1.0] },
            "horizon": 1.0,
            "initial": { "kind": "datum", "M0": { "kind": "uniform" }, "u0": { "kind": "const", "value": 0.0 }, "R0": 1.0, "n": 16 }
        }"#;
        let s = parse_str(text).unwrap();
        let uniform = InitialDatum { m0: CdfSpec::Uniform { a: 0.0, b: 1.0 }, u0: VelocitySpec::Const { value: 0.0 }, r0: 1.0 };
        assert_eq!(s.datum().unwrap().0, uniform);
        assert_eq!(s.setup().unwrap().s0.len(), 16);
        let e = err(&text.replace("\"R0\": 1.0", "\"R0\": 0.5"));
        assert!(e.starts_with("initial"), "{e}");

        let text = r#"{
            "kernel": { "family": "hat", "params": [0.5] },
            "horizon": 1.0, "seed": 3,
            "initial": { "kind": "random", "n": 8, "spread": 1.0, "speed": 0.5 }
        }"#;
        let a = parse_str(text).unwrap().setup().unwrap().s0;
        let b = parse_str(text).unwrap().setup().unwrap().s0;
        assert_eq!(a, b);
        assert!(a.positions().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn snapshots_and_tolerances_are_checked() {
        let e = err(&HEAD_ON.replace("\"horizon\": 2.0", "\"horizon\": 2.0, \"snapshots\": [3.0]"));
        assert!(e.starts_with("snapshots"), "{e}");
        let e = err(&HEAD_ON.replace("\"horizon\": 2.0", "\"horizon\": 2.0, \"tolerances\": { \"substep\": 0 }"));
        assert!(e.starts_with("tolerances.substep"), "{e}");
        let s = parse_str(&HEAD_ON.replace("\"horizon\": 2.0", "\"horizon\": 2.0, \"snapshots\": [1.5, 0.5, 0.5]")).unwrap();
        assert_eq!(s.snapshots, vec![0.5, 1.5]);
    }
}
