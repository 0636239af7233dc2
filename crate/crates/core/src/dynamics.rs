//! Event-driven integrator for the sticky-particle Cucker-Smale system.
//!
//! Between collisions every cluster moves rigidly under
//!
//! ```text
//! x_i' = v_i,    v_i' = sum_j m_j phi(x_i - x_j) (v_j - v_i),
//! ```
//!
//! integrated with classical RK4 at a fixed substep. When an inter-cluster
//! gap closes, the contact time is localized by bisection on the step size
//! and the touching clusters merge with the mass-weighted (momentum
//! conserving) velocity. Clusters never split again.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interaction;
use crate::kernel::Kernel;

/// Allowed deviation of the total mass from 1.
pub const MASS_TOL: f64 = 1e-12;

/// Maximal index-contiguous block of particles sharing position and
/// velocity: `start..end` (half-open).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub start: usize,
    pub end: usize,
}

impl Cluster {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn is_singleton(&self) -> bool {
        self.len() == 1
    }
}

/// Sorted atoms `(x_i, v_i, m_i)` together with their cluster partition.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub time: f64,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    masses: Vec<f64>,
    clusters: Vec<Cluster>,
}

impl ParticleSystem {
    /// Builds a system at `t = 0` with every particle in its own cluster.
    /// Coincident initial positions are allowed and merge on the first step.
    pub fn new(positions: Vec<f64>, velocities: Vec<f64>, masses: Vec<f64>) -> Result<ParticleSystem> {
        let n = positions.len();
        let clusters = (0..n).map(|i| Cluster { start: i, end: i + 1 }).collect();
        ParticleSystem::from_parts(0.0, positions, velocities, masses, clusters)
    }

    /// Builds a system from stored parts, e.g. a trajectory file. Checks
    /// the structural invariants (ordering, masses, partition) but not that
    /// cluster members agree, so tampered states can still be certified.
    pub fn from_parts(
        time: f64,
        positions: Vec<f64>,
        velocities: Vec<f64>,
        masses: Vec<f64>,
        clusters: Vec<Cluster>,
    ) -> Result<ParticleSystem> {
        let n = positions.len();
        if n == 0 {
            return Err(Error::InvalidSystem("no particles".into()));
        }
        if velocities.len() != n || masses.len() != n {
            return Err(Error::InvalidSystem(format!(
                "length mismatch: {} positions, {} velocities, {} masses",
                n,
                velocities.len(),
                masses.len()
            )));
        }
        if !time.is_finite() {
            return Err(Error::InvalidSystem("non-finite time".into()));
        }
        if positions.iter().chain(&velocities).any(|x| !x.is_finite()) {
            return Err(Error::InvalidSystem("non-finite position or velocity".into()));
        }
        if let Some(i) = masses.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidSystem(format!("mass {i} is not positive")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidSystem(format!("masses sum to {total}, expected 1")));
        }
        if let Some(i) = positions.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::InvalidSystem(format!("positions not sorted at index {i}")));
        }
        let mut next = 0;
        for c in &clusters {
            if c.start != next || c.end <= c.start {
                return Err(Error::InvalidSystem("clusters do not partition the particles".into()));
            }
            next = c.end;
        }
        if next != n {
            return Err(Error::InvalidSystem("clusters do not partition the particles".into()));
        }
        Ok(ParticleSystem { time, positions, velocities, masses, clusters })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Cluster index of every particle.
    pub fn cluster_labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.len()];
        for (c, cl) in self.clusters.iter().enumerate() {
            labels[cl.range()].fill(c);
        }
        labels
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `max_i |x_i|`.
    pub fn radius(&self) -> f64 {
        self.positions.iter().fold(0.0f64, |r, x| r.max(x.abs()))
    }

    /// Cumulative masses `theta_0 = 0, theta_i = theta_{i-1} + m_i`.
    pub fn thetas(&self) -> Vec<f64> {
        cumulative_masses(&self.masses)
    }

    fn cluster_arrays(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut x = Vec::with_capacity(self.clusters.len());
        let mut v = Vec::with_capacity(self.clusters.len());
        let mut m = Vec::with_capacity(self.clusters.len());
        for c in &self.clusters {
            x.push(self.positions[c.start]);
            v.push(self.velocities[c.start]);
            m.push(self.masses[c.range()].iter().sum());
        }
        (x, v, m)
    }

    fn set_cluster_state(&mut self, x: &[f64], v: &[f64]) {
        for (c, cl) in self.clusters.iter().enumerate() {
            self.positions[cl.range()].fill(x[c]);
            self.velocities[cl.range()].fill(v[c]);
        }
    }

    /// Merges clusters `first..=last` into one, with mass-weighted position
    /// and velocity.
    fn merge_cluster_span(&mut self, first: usize, last: usize) {
        if first == last {
            return;
        }
        let start = self.clusters[first].start;
        let end = self.clusters[last].end;
        let mass: f64 = self.masses[start..end].iter().sum();
        let momentum: f64 = (start..end).map(|i| self.masses[i] * self.velocities[i]).sum();
        let moment: f64 = (start..end).map(|i| self.masses[i] * self.positions[i]).sum();
        let v = momentum / mass;
        // members may overlap by up to the contact tolerance; keep the
        // mean inside their hull despite rounding
        let lo = self.positions[start..end].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.positions[start..end].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let x = (moment / mass).clamp(lo, hi);
        self.positions[start..end].fill(x);
        self.velocities[start..end].fill(v);
        self.clusters.splice(first..=last, std::iter::once(Cluster { start, end }));
    }

    /// Merges every run of clusters whose gaps are `<= gap_tol`, repeating
    /// until all gaps exceed the tolerance. Returns the final clusters that
    /// absorbed at least one merge.
    fn merge_contacts(&mut self, gap_tol: f64) -> Vec<Cluster> {
        // first particle of every span merged here; only clusters holding
        // one of them are reported
        let mut touched = Vec::new();
        loop {
            let mut runs = Vec::new();
            let mut c = 0;
            while c + 1 < self.clusters.len() {
                let gap = self.positions[self.clusters[c + 1].start] - self.positions[self.clusters[c].start];
                if gap <= gap_tol {
                    let first = c;
                    while c + 1 < self.clusters.len()
                        && self.positions[self.clusters[c + 1].start] - self.positions[self.clusters[c].start] <= gap_tol
                    {
                        c += 1;
                    }
                    runs.push((first, c));
                }
                c += 1;
            }
            if runs.is_empty() {
                break;
            }
            for &(first, last) in runs.iter().rev() {
                touched.push(self.clusters[first].start);
                self.merge_cluster_span(first, last);
            }
        }
        self.clusters
            .iter()
            .copied()
            .filter(|c| touched.iter().any(|&i| c.range().contains(&i)))
            .collect()
    }
}

/// `theta_0 = 0, theta_i = theta_{i-1} + m_i`.
pub fn cumulative_masses(masses: &[f64]) -> Vec<f64> {
    let mut thetas = Vec::with_capacity(masses.len() + 1);
    thetas.push(0.0);
    let mut acc = 0.0;
    for m in masses {
        acc += m;
        thetas.push(acc);
    }
    thetas
}

/// The discrete conserved quantities `psi_i = v_i + sum_j m_j omega(x_i - x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiVector(pub Vec<f64>);

impl PsiVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `sum_i m_i psi_i`.
    pub fn weighted_sum(&self, masses: &[f64]) -> f64 {
        self.0.iter().zip(masses).map(|(p, m)| p * m).sum()
    }
}

/// `sum_j m_j omega(x_i - x_j)` for every particle.
pub fn nonlocal_term(s: &ParticleSystem, k: &Kernel) -> Vec<f64> {
    let (x, _, m) = s.cluster_arrays();
    let per_cluster = interaction::omega_sums(k, &x, &m, &x);
    let mut out = vec![0.0; s.len()];
    for (c, cl) in s.clusters.iter().enumerate() {
        out[cl.range()].fill(per_cluster[c]);
    }
    out
}

pub fn compute_psi(s: &ParticleSystem, k: &Kernel) -> PsiVector {
    let conv = nonlocal_term(s, k);
    PsiVector(s.velocities.iter().zip(conv).map(|(v, c)| v + c).collect())
}

/// Smooth-regime accelerations `a_i = sum_j m_j phi(x_i - x_j)(v_j - v_i)`.
pub fn acceleration(s: &ParticleSystem, k: &Kernel) -> Vec<f64> {
    let (x, v, m) = s.cluster_arrays();
    let per_cluster = interaction::accelerations(k, &x, &v, &m);
    let mut out = vec![0.0; s.len()];
    for (c, cl) in s.clusters.iter().enumerate() {
        out[cl.range()].fill(per_cluster[c]);
    }
    out
}

/// Merges the clusters containing `colliding` (which must be contiguous
/// particle indices), then keeps merging neighbours within `gap_tol`.
pub fn merge_clusters(s: &ParticleSystem, colliding: &[usize], gap_tol: f64) -> Result<ParticleSystem> {
    let mut idx = colliding.to_vec();
    idx.sort_unstable();
    idx.dedup();
    let contiguous = idx.windows(2).all(|w| w[1] == w[0] + 1);
    if idx.is_empty() || !contiguous || *idx.last().unwrap() >= s.len() {
        return Err(Error::NonAdjacentMerge(colliding.to_vec()));
    }
    let labels = s.cluster_labels();
    let mut out = s.clone();
    out.merge_cluster_span(labels[idx[0]], labels[*idx.last().unwrap()]);
    out.merge_contacts(gap_tol);
    Ok(out)
}

/// Integrator and event-detection tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// RK4 substep.
    pub substep: f64,
    /// Width of the bisection bracket around a contact time.
    pub time: f64,
    /// Gaps at or below this count as contact.
    pub gap: f64,
}

impl Tolerances {
    /// Defaults: substep `horizon / 1e4`, event time `1e-10`,
    /// gap `1e-12 (1 + r0)`.
    pub fn new(horizon: f64, r0: f64) -> Tolerances {
        Tolerances {
            substep: horizon / 1e4,
            time: 1e-10,
            gap: 1e-12 * (1.0 + r0),
        }
    }

    pub fn with_substep(self, substep: f64) -> Tolerances {
        Tolerances { substep, ..self }
    }

    fn validate(&self) -> Result<()> {
        if !(self.substep > 0.0 && self.time > 0.0 && self.gap > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerances must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    Snapshot,
    Horizon,
}

/// Something that happened at `time`. For collisions, `indices` lists the
/// particles of the merged clusters (`groups`), and `psi_before` their
/// `psi` values just before the merge.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
    pub indices: Vec<usize>,
    pub groups: Vec<Cluster>,
    pub psi_before: Vec<f64>,
}

impl Event {
    fn marker(kind: EventKind, time: f64) -> Event {
        Event { kind, time, indices: Vec::new(), groups: Vec::new(), psi_before: Vec::new() }
    }
}

fn merge_with_event(state: &mut ParticleSystem, k: &Kernel, gap_tol: f64) -> Option<Event> {
    // cheap scan first: psi is only needed when something merges
    let touching = state
        .clusters
        .windows(2)
        .any(|w| state.positions[w[1].start] - state.positions[w[0].start] <= gap_tol);
    if !touching {
        return None;
    }
    let psi = compute_psi(state, k);
    let groups = state.merge_contacts(gap_tol);
    let indices: Vec<usize> = groups.iter().flat_map(|g| g.range()).collect();
    let psi_before = indices.iter().map(|&i| psi.0[i]).collect();
    Some(Event { kind: EventKind::Collision, time: state.time, indices, groups, psi_before })
}

/// Index `p` of the narrowest gap `x[p + 1] - x[p]`.
fn closing_pair(x: &[f64]) -> usize {
    (0..x.len() - 1).min_by(|&a, &b| (x[a + 1] - x[a]).total_cmp(&(x[b + 1] - x[b]))).unwrap_or(0)
}

fn min_gap(x: &[f64]) -> f64 {
    x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
}

fn rk4(k: &Kernel, m: &[f64], x: &[f64], v: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let axpy = |base: &[f64], dir: &[f64], s: f64| -> Vec<f64> { base.iter().zip(dir).map(|(b, d)| b + s * d).collect() };
    let a1 = interaction::accelerations(k, x, v, m);
    let x2 = axpy(x, v, 0.5 * h);
    let v2 = axpy(v, &a1, 0.5 * h);
    let a2 = interaction::accelerations(k, &x2, &v2, m);
    let x3 = axpy(x, &v2, 0.5 * h);
    let v3 = axpy(v, &a2, 0.5 * h);
    let a3 = interaction::accelerations(k, &x3, &v3, m);
    let x4 = axpy(x, &v3, h);
    let v4 = axpy(v, &a3, h);
    let a4 = interaction::accelerations(k, &x4, &v4, m);
    let mut xn = Vec::with_capacity(n);
    let mut vn = Vec::with_capacity(n);
    for c in 0..n {
        xn.push(x[c] + h / 6.0 * (v[c] + 2.0 * v2[c] + 2.0 * v3[c] + v4[c]));
        vn.push(v[c] + h / 6.0 * (a1[c] + 2.0 * a2[c] + 2.0 * a3[c] + a4[c]));
    }
    (xn, vn)
}

fn all_finite(x: &[f64], v: &[f64]) -> bool {
    x.iter().chain(v).all(|z| z.is_finite())
}

const MAX_BISECTIONS: usize = 200;

/// Consecutive kink-limited steps no longer than the event tolerance after
/// which kinks are ignored for one step (a pair resting on a kink).
const MAX_TINY_KINK_STEPS: usize = 8;

/// Whether some pair separation crosses one of `kinks` between the sorted
/// configurations `x0` and `x1`. For each `i`, compares the first `j > i`
/// lying more than `b` ahead.
fn crosses_kink(x0: &[f64], x1: &[f64], kinks: &[f64]) -> bool {
    let n = x0.len();
    kinks.iter().any(|&b| {
        let (mut j0, mut j1) = (0, 0);
        (0..n).any(|i| {
            j0 = j0.max(i + 1);
            j1 = j1.max(i + 1);
            while j0 < n && x0[j0] - x0[i] <= b {
                j0 += 1;
            }
            while j1 < n && x1[j1] - x1[i] <= b {
                j1 += 1;
            }
            j0 != j1
        })
    })
}

type State = (Vec<f64>, Vec<f64>);

/// Bracket `[lo, hi]` of width at most `tol.time` around the first step at
/// which `hit` holds, given that it holds at `h`, with the states at both
/// ends.
struct Bracket {
    lo: f64,
    at_lo: State,
    hi: f64,
    at_hi: State,
}

fn bisect_step<F>(k: &Kernel, arrays: (&[f64], &[f64], &[f64]), h: f64, at_h: State, tol: &Tolerances, t0: f64, hit: F) -> Result<Bracket>
where
    F: Fn(&[f64]) -> bool,
{
    let (x, v, m) = arrays;
    let (mut lo, mut hi) = (0.0, h);
    let mut at_lo = (x.to_vec(), v.to_vec());
    let mut at_hi = at_h;
    let mut iterations = 0;
    while hi - lo > tol.time {
        iterations += 1;
        if iterations > MAX_BISECTIONS {
            return Err(Error::StepSizeUnderflow { time: t0, reason: format!("bisection bracket [{lo}, {hi}] does not shrink") });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (xm, vm) = rk4(k, m, x, v, mid);
        if !all_finite(&xm, &vm) {
            return Err(Error::StepSizeUnderflow { time: t0, reason: "non-finite state".into() });
        }
        if hit(&xm) {
            hi = mid;
            at_hi = (xm, vm);
        } else {
            lo = mid;
            at_lo = (xm, vm);
        }
    }
    Ok(Bracket { lo, at_lo, hi, at_hi })
}

/// Advances `s` towards `t_target`, stopping early at the first collision.
/// Returns the new state and the collision event, if any.
///
/// Steps are also cut where a pair separation crosses a kink of the kernel,
/// so no RK4 step straddles a jump in the derivative of the right-hand side.
fn advance(s: &ParticleSystem, k: &Kernel, t_target: f64, tol: &Tolerances) -> Result<(ParticleSystem, Option<Event>)> {
    let mut state = s.clone();
    if let Some(ev) = merge_with_event(&mut state, k, tol.gap) {
        return Ok((state, Some(ev)));
    }
    let kinks = k.kinks();
    let mut tiny_kink_steps = 0;
    loop {
        let remaining = t_target - state.time;
        if remaining <= 0.0 {
            state.time = t_target;
            return Ok((state, None));
        }
        let h = tol.substep.min(remaining);
        let (x, v, m) = state.cluster_arrays();
        let (xn, vn) = rk4(k, &m, &x, &v, h);
        if !all_finite(&xn, &vn) {
            return Err(Error::StepSizeUnderflow { time: state.time, reason: "non-finite state".into() });
        }
        let arrays = (&x[..], &v[..], &m[..]);
        let contact = min_gap(&xn) <= tol.gap;
        let (mut step, mut end) = (h, (xn, vn));
        // Events are approached from below and crossed with a hop of the
        // bracket width, so no full-size stage samples the far side of a
        // jump in phi (at a kink, or at contact for kernels like the hat).
        let hop = |b: &Bracket, width: f64| {
            let out = rk4(k, &m, &b.at_lo.0, &b.at_lo.1, width);
            if all_finite(&out.0, &out.1) {
                Ok(out)
            } else {
                Err(Error::StepSizeUnderflow { time: state.time, reason: "non-finite state".into() })
            }
        };
        if contact {
            let b = bisect_step(k, arrays, h, end, tol, state.time, |xm| min_gap(xm) <= tol.gap)?;
            // the closing gap is linear to second order in the bracket
            // width, so interpolating it puts the merge at zero gap
            let p = closing_pair(&b.at_hi.0);
            let (g_lo, g_hi) = (b.at_lo.0[p + 1] - b.at_lo.0[p], b.at_hi.0[p + 1] - b.at_hi.0[p]);
            let width = if g_lo > g_hi { (b.hi - b.lo) * g_lo / (g_lo - g_hi) } else { b.hi - b.lo };
            let over = hop(&b, width)?;
            (step, end) = if min_gap(&over.0) <= tol.gap { (b.lo + width, over) } else { (b.hi, b.at_hi) };
        }
        let mut kinked = false;
        if tiny_kink_steps < MAX_TINY_KINK_STEPS && crosses_kink(&x, &end.0, &kinks) {
            let b = bisect_step(k, arrays, step, end, tol, state.time, |xm| crosses_kink(&x, xm, &kinks))?;
            tiny_kink_steps = if b.hi <= 2.0 * tol.time { tiny_kink_steps + 1 } else { 0 };
            kinked = true;
            end = hop(&b, b.hi - b.lo)?;
            step = b.hi;
        } else {
            tiny_kink_steps = 0;
        }
        state.set_cluster_state(&end.0, &end.1);
        state.time = if step >= remaining { t_target } else { state.time + step };
        if min_gap(&end.0) > tol.gap {
            continue;
        }
        return match merge_with_event(&mut state, k, tol.gap) {
            Some(ev) => Ok((state, Some(ev))),
            None if kinked => continue,
            None => Err(Error::StepSizeUnderflow {
                time: state.time,
                reason: "contact detected but no gap within tolerance".into(),
            }),
        };
    }
}

/// Advances by at most `dt_max`: returns either the state at the first
/// collision (already merged) or the state at `time + dt_max`.
pub fn step_to_next_event(s: &ParticleSystem, k: &Kernel, dt_max: f64, tol: &Tolerances) -> Result<(ParticleSystem, Event)> {
    if !(dt_max > 0.0) {
        return Err(Error::InvalidArgument(format!("dt_max must be positive, got {dt_max}")));
    }
    tol.validate()?;
    let target = s.time + dt_max;
    let (state, ev) = advance(s, k, target, tol)?;
    let ev = ev.unwrap_or_else(|| Event::marker(EventKind::Snapshot, target));
    Ok((state, ev))
}

/// One recorded state of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub kind: EventKind,
    pub state: ParticleSystem,
    pub psi: PsiVector,
}

/// Recorded run: the initial state, every snapshot, every collision (post
/// merge) and the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<Frame>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn collisions(&self) -> impl Iterator<Item = &Event> {
        self.events.iter().filter(|e| e.kind == EventKind::Collision)
    }

    pub fn final_state(&self) -> &ParticleSystem {
        &self.frames.last().expect("trajectory has at least one frame").state
    }

    /// Frame recorded at the snapshot or horizon time `t`, if any.
    pub fn snapshot_at(&self, t: f64) -> Option<&Frame> {
        self.frames.iter().rev().find(|f| f.time == t && f.kind != EventKind::Collision)
    }
}

/// Runs the sticky dynamics from `s0` to `horizon`, recording the initial
/// state, each snapshot time, each collision and the final state.
pub fn simulate(s0: &ParticleSystem, k: &Kernel, horizon: f64, snapshot_times: &[f64], tol: &Tolerances) -> Result<Trajectory> {
    tol.validate()?;
    if !(horizon >= s0.time) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} precedes start time {}", s0.time)));
    }
    if snapshot_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("snapshot times must be sorted".into()));
    }
    if snapshot_times.iter().any(|&t| !(t >= 0.0 && t <= horizon)) {
        return Err(Error::InvalidArgument("snapshot times must lie in [0, horizon]".into()));
    }
    let mut targets: Vec<f64> = snapshot_times.iter().copied().filter(|&t| t > s0.time).collect();
    targets.dedup();
    if targets.last().map_or(true, |&t| t < horizon) {
        targets.push(horizon);
    }

    let mut frames = vec![Frame { time: s0.time, kind: EventKind::Snapshot, psi: compute_psi(s0, k), state: s0.clone() }];
    let mut events = vec![Event::marker(EventKind::Snapshot, s0.time)];
    let mut state = s0.clone();
    for (ti, &target) in targets.iter().enumerate() {
        loop {
            let (next, ev) = advance(&state, k, target, tol)?;
            state = next;
            match ev {
                Some(ev) => {
                    frames.push(Frame { time: state.time, kind: EventKind::Collision, psi: compute_psi(&state, k), state: state.clone() });
                    events.push(ev);
                }
                None => break,
            }
        }
        let kind = if ti + 1 == targets.len() { EventKind::Horizon } else { EventKind::Snapshot };
        frames.push(Frame { time: state.time, kind, psi: compute_psi(&state, k), state: state.clone() });
        events.push(Event::marker(kind, state.time));
    }
    Ok(Trajectory { frames, events })
}

/// A-priori bounds on `psi`, velocities and support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub psi_lo: f64,
    pub psi_hi: f64,
    pub vel_lo: f64,
    pub vel_hi: f64,
    pub m_tilde: f64,
    pub r0: f64,
}

impl BoundsReport {
    /// `R(t) = R0 + t M~`.
    pub fn radius(&self, t: f64) -> f64 {
        self.r0 + t * self.m_tilde
    }
}

pub fn a_priori_bounds(s0: &ParticleSystem, k: &Kernel) -> BoundsReport {
    let psi = compute_psi(s0, k);
    let (psi_lo, psi_hi) = (psi.min(), psi.max());
    let vel_lo = psi_lo - k.sup_omega();
    BoundsReport {
        psi_lo,
        psi_hi,
        vel_lo,
        vel_hi: psi_hi,
        m_tilde: vel_lo.abs().max(psi_hi.abs()),
        r0: s0.radius(),
    }
}

/// Worst deviations from the barycentric identities at one collision.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BarycentricDefect {
    /// `max |psi_cluster - sum m psi(t-) / sum m|`.
    pub barycenter: f64,
    /// Largest amount by which a prefix average falls below `psi_cluster`
    /// or a suffix average exceeds it.
    pub ordering: f64,
}

/// Compares the post-collision `psi_after` with the pre-collision values
/// stored in `event`.
pub fn barycentric_defect(event: &Event, masses: &[f64], psi_after: &PsiVector) -> BarycentricDefect {
    let mut out = BarycentricDefect::default();
    let mut offset = 0;
    for g in &event.groups {
        let before = &event.psi_before[offset..offset + g.len()];
        let m = &masses[g.range()];
        offset += g.len();
        let total: f64 = m.iter().sum();
        let avg = m.iter().zip(before).map(|(a, b)| a * b).sum::<f64>() / total;
        for i in g.range() {
            out.barycenter = out.barycenter.max((psi_after.0[i] - avg).abs());
        }
        let cluster_psi = psi_after.0[g.start];
        let (mut pm, mut pw) = (0.0, 0.0);
        for j in 0..g.len() {
            pm += m[j];
            pw += m[j] * before[j];
            out.ordering = out.ordering.max(cluster_psi - pw / pm);
        }
        let (mut sm, mut sw) = (0.0, 0.0);
        for j in (0..g.len()).rev() {
            sm += m[j];
            sw += m[j] * before[j];
            out.ordering = out.ordering.max(sw / sm - cluster_psi);
        }
    }
    out
}
