//! Oracles shared by the integration test targets. They use none of the
//! library's event logic, interaction sums or transport code.
#![allow(dead_code)]

use narz_core::cumulative::{AtomicMeasurePair, StepFunction};
use narz_core::dynamics::ParticleSystem;
use narz_core::kernel::Kernel;
use narz_core::quadrature::integrate_with_breaks;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_system(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> ParticleSystem {
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-spread..spread)).collect();
    x.sort_by(f64::total_cmp);
    let v = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut m: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let rest: f64 = m[..n - 1].iter().sum();
    m[n - 1] = 1.0 - rest;
    ParticleSystem::new(x, v, m).unwrap()
}

/// Fixed-step RK4 over the full particle system without any event logic;
/// the first step with a nonpositive gap brackets the collision.
pub fn fine_step_collision_time(s: &ParticleSystem, k: &Kernel, dt: f64, t_max: f64) -> f64 {
    let m = s.masses().to_vec();
    let accel = |x: &[f64], v: &[f64]| -> Vec<f64> {
        (0..x.len())
            .map(|i| (0..x.len()).map(|j| m[j] * k.phi(x[i] - x[j]) * (v[j] - v[i])).sum())
            .collect()
    };
    let mut x = s.positions().to_vec();
    let mut v = s.velocities().to_vec();
    let mut t = 0.0;
    let gap = |x: &[f64]| x.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    while t < t_max {
        let g0 = gap(&x);
        let a1 = accel(&x, &v);
        let x2: Vec<f64> = (0..x.len()).map(|i| x[i] + 0.5 * dt * v[i]).collect();
        let v2: Vec<f64> = (0..x.len()).map(|i| v[i] + 0.5 * dt * a1[i]).collect();
        let a2 = accel(&x2, &v2);
        let x3: Vec<f64> = (0..x.len()).map(|i| x[i] + 0.5 * dt * v2[i]).collect();
        let v3: Vec<f64> = (0..x.len()).map(|i| v[i] + 0.5 * dt * a2[i]).collect();
        let a3 = accel(&x3, &v3);
        let x4: Vec<f64> = (0..x.len()).map(|i| x[i] + dt * v3[i]).collect();
        let v4: Vec<f64> = (0..x.len()).map(|i| v[i] + dt * a3[i]).collect();
        let a4 = accel(&x4, &v4);
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
            v[i] += dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]);
        }
        let g1 = gap(&x);
        if g1 <= 0.0 {
            // linear interpolation of the gap inside the last step
            return t + dt * g0 / (g0 - g1);
        }
        t += dt;
    }
    f64::INFINITY
}

/// Transportation problem solved by successive shortest paths
/// (Bellman-Ford on the residual graph).
pub fn transport_cost(xs: &[f64], a: &[f64], ys: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    // nodes: source, n supplies, m demands, sink
    let nodes = n + m + 2;
    let (src, snk) = (0, n + m + 1);
    let mut edges: Vec<(usize, usize, f64, f64)> = Vec::new(); // (from, to, cap, cost)
    let add = |edges: &mut Vec<(usize, usize, f64, f64)>, u: usize, v: usize, cap: f64, cost: f64| {
        edges.push((u, v, cap, cost));
        edges.push((v, u, 0.0, -cost));
    };
    for i in 0..n {
        add(&mut edges, src, 1 + i, a[i], 0.0);
        for j in 0..m {
            add(&mut edges, 1 + i, 1 + n + j, f64::INFINITY, (xs[i] - ys[j]).abs());
        }
    }
    for j in 0..m {
        add(&mut edges, 1 + n + j, snk, b[j], 0.0);
    }
    let mut cost = 0.0;
    let mut shipped = 0.0;
    while shipped < 1.0 - 1e-15 {
        let mut dist = vec![f64::INFINITY; nodes];
        let mut pred = vec![usize::MAX; nodes];
        dist[src] = 0.0;
        for _ in 0..nodes {
            let mut changed = false;
            for (e, &(u, v, cap, c)) in edges.iter().enumerate() {
                if cap > 1e-15 && dist[u] + c < dist[v] - 1e-15 {
                    dist[v] = dist[u] + c;
                    pred[v] = e;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[snk].is_finite() {
            break;
        }
        let mut push = f64::INFINITY;
        let mut v = snk;
        while v != src {
            let e = pred[v];
            push = push.min(edges[e].2);
            v = edges[e].0;
        }
        let mut v = snk;
        while v != src {
            let e = pred[v];
            edges[e].2 -= push;
            edges[e ^ 1].2 += push;
            v = edges[e].0;
        }
        cost += push * dist[snk];
        shipped += push;
    }
    cost
}

pub fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> AtomicMeasurePair {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    xs.sort_by(f64::total_cmp);
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut rho: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let rest: f64 = rho[..n - 1].iter().sum();
    rho[n - 1] = 1.0 - rest;
    AtomicMeasurePair { positions: xs, rho, momentum: vec![0.0; n] }
}

/// `(phi * M)(x) = int phi(x - y) M(y) dy` by adaptive quadrature over
/// `y in x - supp(phi)`, split at every jump of `M` and kink of `phi`.
pub fn conv_phi_m_by_quadrature(m: &StepFunction, k: &Kernel, x: f64) -> f64 {
    let (lo, hi) = k.support();
    let mut breaks: Vec<f64> = m.breakpoints().to_vec();
    breaks.extend(k.breakpoints().iter().map(|b| x - b));
    integrate_with_breaks(|y| k.phi(x - y) * m.eval(y), x - hi, x - lo, &breaks, 1e-12).unwrap().value
}
