//! Independent reference values shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Constant normal flux `t` and phase gradients `(g1, g2)` of a laminate
/// under mean normal gradient `xi_n > 0`: `σᵢ gᵢ^{pᵢ-1} = t`,
/// `θ₁g₁ + θ₂g₂ = xi_n`. Bisection on `t`.
pub fn laminate_normal(p: [f64; 2], sigma: [f64; 2], theta1: f64, xi_n: f64) -> (f64, f64, f64) {
    let g = |t: f64, i: usize| (t / sigma[i]).powf(1.0 / (p[i] - 1.0));
    let mean = |t: f64| theta1 * g(t, 0) + (1.0 - theta1) * g(t, 1) - xi_n;
    let (mut lo, mut hi) = (0.0, 1.0);
    while mean(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    (t, g(t, 0), g(t, 1))
}

/// Series solution of `-Δu = 1` on the unit square with zero boundary data.
pub fn poisson_series(x: f64, y: f64) -> f64 {
    let mut s = 0.0;
    for m in (1..400).step_by(2) {
        for n in (1..400).step_by(2) {
            let (mf, nf) = (m as f64, n as f64);
            s += 16.0 / (PI.powi(4) * mf * nf * (mf * mf + nf * nf))
                * (mf * PI * x).sin()
                * (nf * PI * y).sin();
        }
    }
    s
}

/// `∫|∇u|² = ∫u` for the same problem.
pub fn poisson_gradient_square() -> f64 {
    let mut s = 0.0;
    for m in (1..2000).step_by(2) {
        for n in (1..2000).step_by(2) {
            let (mf, nf) = (m as f64, n as f64);
            s += 64.0 / (PI.powi(6) * mf * mf * nf * nf * (mf * mf + nf * nf));
        }
    }
    s
}
