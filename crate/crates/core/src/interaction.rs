//! Kernel-weighted sums over sorted atoms.
//!
//! Every nonlocal quantity of the particle system is a sum
//! `sum_d w_d K(x - X_d)` over the atoms `X_d` inside the kernel window.
//! For the cosine families the sum separates into `cos`/`sin` moments, which
//! are accumulated as prefix sums so that each evaluation costs O(log n)
//! instead of O(window).

use crate::kernel::{Kernel, TrigForm};

/// Below this many sources the direct sum is both cheaper and exact.
const FAST_THRESHOLD: usize = 64;

fn window(sources: &[f64], x: f64, k: &Kernel) -> (usize, usize) {
    let (lo, hi) = k.support();
    let first = sources.partition_point(|&s| s < x - hi);
    let last = sources.partition_point(|&s| s <= x - lo);
    (first, last.max(first))
}

struct TrigMoments {
    form: TrigForm,
    origin: f64,
    // prefix sums over sources, one row per weight vector
    weight: Vec<Vec<f64>>,
    cos: Vec<Vec<f64>>,
    sin: Vec<Vec<f64>>,
}

impl TrigMoments {
    fn new(form: TrigForm, sources: &[f64], weights: &[&[f64]]) -> TrigMoments {
        let origin = sources.first().copied().unwrap_or(0.0);
        let n = sources.len();
        let phases: Vec<(f64, f64)> = sources
            .iter()
            .map(|&s| {
                let (sn, cs) = (form.freq * (s - origin)).sin_cos();
                (cs, sn)
            })
            .collect();
        let mut weight = Vec::with_capacity(weights.len());
        let mut cos = Vec::with_capacity(weights.len());
        let mut sin = Vec::with_capacity(weights.len());
        for w in weights {
            let (mut pw, mut pc, mut ps) = (vec![0.0; n + 1], vec![0.0; n + 1], vec![0.0; n + 1]);
            for d in 0..n {
                pw[d + 1] = pw[d] + w[d];
                pc[d + 1] = pc[d] + w[d] * phases[d].0;
                ps[d + 1] = ps[d] + w[d] * phases[d].1;
            }
            weight.push(pw);
            cos.push(pc);
            sin.push(ps);
        }
        TrigMoments { form, origin, weight, cos, sin }
    }

    /// Returns `(sum w, sum w cos(beta_d), sum w sin(beta_d))` over `[a, b)`
    /// for weight row `row`.
    fn window_moments(&self, row: usize, a: usize, b: usize) -> (f64, f64, f64) {
        (
            self.weight[row][b] - self.weight[row][a],
            self.cos[row][b] - self.cos[row][a],
            self.sin[row][b] - self.sin[row][a],
        )
    }

    fn phase(&self, x: f64) -> (f64, f64) {
        let (s, c) = (self.form.freq * (x - self.origin - self.form.center)).sin_cos();
        (c, s)
    }

    fn omega_sum(&self, row: usize, x: f64, a: usize, b: usize) -> f64 {
        let (w, c, s) = self.window_moments(row, a, b);
        let (ca, sa) = self.phase(x);
        self.form.amp * (w + ca * c + sa * s)
    }

    fn phi_sum(&self, row: usize, x: f64, a: usize, b: usize) -> f64 {
        let (_, c, s) = self.window_moments(row, a, b);
        let (ca, sa) = self.phase(x);
        -self.form.amp * self.form.freq * (sa * c - ca * s)
    }
}

fn fast_form(k: &Kernel, n: usize) -> Option<TrigForm> {
    if n > FAST_THRESHOLD {
        k.trig_form()
    } else {
        None
    }
}

/// `out[t] = sum_d weights[d] * omega(targets[t] - sources[d])`.
/// `sources` must be sorted ascending.
pub fn omega_sums(k: &Kernel, sources: &[f64], weights: &[f64], targets: &[f64]) -> Vec<f64> {
    debug_assert_eq!(sources.len(), weights.len());
    match fast_form(k, sources.len()) {
        Some(form) => {
            let mom = TrigMoments::new(form, sources, &[weights]);
            targets
                .iter()
                .map(|&x| {
                    let (a, b) = window(sources, x, k);
                    mom.omega_sum(0, x, a, b)
                })
                .collect()
        }
        None => targets
            .iter()
            .map(|&x| {
                let (a, b) = window(sources, x, k);
                (a..b).map(|d| weights[d] * k.omega(x - sources[d])).sum()
            })
            .collect(),
    }
}

/// `out[t] = sum_d weights[d] * phi(targets[t] - sources[d])`.
pub fn phi_sums(k: &Kernel, sources: &[f64], weights: &[f64], targets: &[f64]) -> Vec<f64> {
    debug_assert_eq!(sources.len(), weights.len());
    match fast_form(k, sources.len()) {
        Some(form) => {
            let mom = TrigMoments::new(form, sources, &[weights]);
            targets
                .iter()
                .map(|&x| {
                    let (a, b) = window(sources, x, k);
                    mom.phi_sum(0, x, a, b)
                })
                .collect()
        }
        None => targets
            .iter()
            .map(|&x| {
                let (a, b) = window(sources, x, k);
                (a..b).map(|d| weights[d] * k.phi(x - sources[d])).sum()
            })
            .collect(),
    }
}

/// Cucker-Smale accelerations `a_c = sum_d m_d phi(x_c - x_d) (v_d - v_c)`
/// for atoms at sorted positions `x`.
pub fn accelerations(k: &Kernel, x: &[f64], v: &[f64], m: &[f64]) -> Vec<f64> {
    let n = x.len();
    match fast_form(k, n) {
        Some(form) => {
            let mv: Vec<f64> = m.iter().zip(v).map(|(a, b)| a * b).collect();
            let mom = TrigMoments::new(form, x, &[m, &mv]);
            (0..n)
                .map(|c| {
                    let (a, b) = window(x, x[c], k);
                    mom.phi_sum(1, x[c], a, b) - v[c] * mom.phi_sum(0, x[c], a, b)
                })
                .collect()
        }
        None => (0..n)
            .map(|c| {
                let (a, b) = window(x, x[c], k);
                (a..b).map(|d| m[d] * k.phi(x[c] - x[d]) * (v[d] - v[c])).sum()
            })
            .collect(),
    }
}
