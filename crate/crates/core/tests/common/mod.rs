#![allow(dead_code)]

use std::f64::consts::PI;

use lungsync::harness::Scenario;
use lungsync::sphere_harmonics::Direction;

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Product rule on the sphere, exact for polynomials up to degree `2 * n - 1`
/// in cos(theta) and trigonometric degree `2 * n - 1` in phi.
pub fn sphere_quadrature(n: usize) -> Vec<(Direction, f64)> {
    let n_phi = 2 * n;
    let mut out = Vec::with_capacity(n * n_phi);
    for (x, w) in gauss_legendre(n) {
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            out.push((Direction::new(x.acos(), phi).unwrap(), w * 2.0 * PI / n_phi as f64));
        }
    }
    out
}

pub fn scenario(participants: usize, cycles: usize, latency_ms: f64, jitter_ms: f64) -> Scenario {
    let mut s = Scenario::new(participants, cycles);
    s.network.latency_mean_ms = latency_ms;
    s.network.jitter_ms = jitter_ms;
    s.seed = 7;
    s
}
