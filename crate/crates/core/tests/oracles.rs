//! Independent re-computations of the library's core quantities.

mod common;

use common::{conv_phi_m_by_quadrature, fine_step_collision_time, random_measure, random_system, transport_cost};
use narz_core::cumulative::{build_m, conv_phi_m, StepFunction};
use narz_core::dynamics::{acceleration, compute_psi, step_to_next_event, EventKind, ParticleSystem, Tolerances};
use narz_core::kernel::{make_builtin, Kernel};
use narz_core::metrics::{l1_distance, wasserstein1, wasserstein1_cdf};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Double-double accumulator (error-free sums and products).
#[derive(Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn add(self, x: f64) -> Dd {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        let lo = self.lo + err;
        let hi = s + lo;
        Dd { hi, lo: lo - (hi - s) }
    }

    fn add_product(self, a: f64, b: f64) -> Dd {
        let p = a * b;
        let e = a.mul_add(b, -p);
        self.add(p).add(e)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

#[test]
fn psi_and_acceleration_match_double_double_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for family in ["raised_cosine", "downstream_cosine", "quadratic_spline", "hat"] {
        let k = make_builtin(family, &[0.7]).unwrap();
        for n in [4, 5, 9] {
            let s = random_system(&mut rng, n, 0.8);
            let psi = compute_psi(&s, &k);
            let acc = acceleration(&s, &k);
            let (x, v, m) = (s.positions(), s.velocities(), s.masses());
            for i in 0..n {
                let mut p = Dd::default().add(v[i]);
                let mut a = Dd::default();
                for j in 0..n {
                    p = p.add_product(m[j], k.omega(x[i] - x[j]));
                    a = a.add_product(m[j] * k.phi(x[i] - x[j]), v[j] - v[i]);
                }
                assert!((psi.0[i] - p.value()).abs() <= 1e-13, "{family} psi {i}");
                assert!((acc[i] - a.value()).abs() <= 1e-13, "{family} acc {i}");
            }
        }
    }
}

#[test]
fn head_on_collision_time_matches_fine_step_oracle() {
    let k = Kernel::raised_cosine(0.1).unwrap();
    let s = ParticleSystem::new(vec![-1.0, 1.0], vec![1.0, -1.0], vec![0.5, 0.5]).unwrap();
    let (after, ev) = step_to_next_event(&s, &k, 2.0, &Tolerances::new(2.0, 1.0)).unwrap();
    assert_eq!(ev.kind, EventKind::Collision);
    let oracle = fine_step_collision_time(&s, &k, 1e-6, 2.0);
    assert!((ev.time - oracle).abs() < 1e-6, "{} vs {oracle}", ev.time);
    // both particles lose the same speed, so the merged velocity is the
    // barycentric psi minus the self-interaction
    let psi = compute_psi(&after, &k);
    assert!((psi.0[0] - 0.5 * (1.0 + 5.0 + -1.0 + 5.0)).abs() < 1e-9);
}

#[test]
fn interacting_collision_time_matches_fine_step_oracle() {
    let k = Kernel::downstream_cosine(1.0).unwrap();
    let s = ParticleSystem::new(vec![-0.4, 0.0, 0.5], vec![0.9, 0.1, -0.3], vec![0.3, 0.3, 0.4]).unwrap();
    let (_, ev) = step_to_next_event(&s, &k, 3.0, &Tolerances::new(3.0, 0.5)).unwrap();
    assert_eq!(ev.kind, EventKind::Collision);
    let oracle = fine_step_collision_time(&s, &k, 1e-6, 3.0);
    assert!((ev.time - oracle).abs() < 1e-6, "{} vs {oracle}", ev.time);
}

#[test]
fn conv_phi_m_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let k = make_builtin("quadratic_spline", &[0.6]).unwrap();
    let s = random_system(&mut rng, 20, 1.0);
    let m = build_m(&s);
    for _ in 0..50 {
        let x: f64 = rng.gen_range(-2.0..2.0);
        assert!((conv_phi_m(&m, &k, x) - conv_phi_m_by_quadrature(&m, &k, x)).abs() < 1e-8);
    }
}

#[test]
fn l1_distance_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let a = build_m(&random_system(&mut rng, 50, 1.0));
        let b = build_m(&random_system(&mut rng, 50, 1.0));
        let exact = l1_distance(&a, &b);
        let n = 10_000_000usize;
        let (lo, hi) = (-1.0, 1.0);
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.gen_range(lo..hi);
            let f = (a.eval(x) - b.eval(x)).abs() * (hi - lo);
            sum += f;
            sum2 += f * f;
        }
        let mean = sum / n as f64;
        let sigma = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((exact - mean).abs() <= 3.0 * sigma, "{exact} vs {mean} +- {sigma}");
    }
}

#[test]
fn wasserstein_matches_transport_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let mu = random_measure(&mut rng, 5);
        let nu = random_measure(&mut rng, 5);
        let lp = transport_cost(&mu.positions, &mu.rho, &nu.positions, &nu.rho);
        assert!((wasserstein1(&mu, &nu) - lp).abs() < 1e-9);
        assert!((wasserstein1_cdf(&mu, &nu) - wasserstein1(&mu, &nu)).abs() < 1e-12);
    }
}

#[test]
fn l1_is_a_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let f: Vec<StepFunction> = (0..3).map(|_| build_m(&random_system(&mut rng, 12, 1.0))).collect();
        let (ab, ba) = (l1_distance(&f[0], &f[1]), l1_distance(&f[1], &f[0]));
        assert!((ab - ba).abs() < 1e-12);
        assert!(l1_distance(&f[0], &f[2]) <= ab + l1_distance(&f[1], &f[2]) + 1e-12);
        assert!(l1_distance(&f[0], &f[0]) < 1e-12);
    }
}
