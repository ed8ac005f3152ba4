//! The two-phase power law `A(y, ξ) = σ(y) |ξ|^{p(y)-2} ξ` and the scalar
//! quantities built from it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Point, MAX_DIM};
use crate::microstructure::Phase;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("exponents must satisfy 2 <= p1 <= p2 < inf, got p1={0}, p2={1}")]
    Exponents(f64, f64),
    #[error("p₁ must be ≥ 2, got {0}")]
    LowExponent(f64),
    #[error("coefficients must be positive, got sigma1={0}, sigma2={1}")]
    Coefficients(f64, f64),
    #[error("regularization must be positive, got {0}")]
    Regularization(f64),
}

/// Jacobian floor `δ_reg`; enters Newton matrices only, never residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularizationPolicy {
    delta: f64,
}

impl RegularizationPolicy {
    pub fn new(delta: f64) -> Result<Self, LawError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(LawError::Regularization(delta));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for RegularizationPolicy {
    fn default() -> Self {
        Self { delta: 1e-8 }
    }
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single-phase law `σ |ξ|^{p-2} ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLaw {
    pub sigma: f64,
    pub p: f64,
}

impl PowerLaw {
    pub fn flux(&self, xi: &[f64]) -> Point {
        let mut out = [0.0; MAX_DIM];
        let m = norm(xi);
        if m == 0.0 {
            return out;
        }
        let s = self.sigma * m.powf(self.p - 2.0);
        for (o, x) in out.iter_mut().zip(xi) {
            *o = s * x;
        }
        out
    }

    /// `(σ/p) |ξ|^p`.
    pub fn energy(&self, xi: &[f64]) -> f64 {
        self.sigma / self.p * norm(xi).powf(self.p)
    }

    /// `σ [m^{p-2} I + (p-2) m^{p-4} ξ⊗ξ]` with `m = sqrt(|ξ|² + δ²)`.
    pub fn jacobian(&self, xi: &[f64], reg: &RegularizationPolicy) -> [[f64; MAX_DIM]; MAX_DIM] {
        let d = xi.len();
        let m2 = dot(xi, xi) + reg.delta * reg.delta;
        let m = m2.sqrt();
        let a = self.sigma * m.powf(self.p - 2.0);
        let b = self.sigma * (self.p - 2.0) * m.powf(self.p - 4.0);
        let mut j = [[0.0; MAX_DIM]; MAX_DIM];
        for r in 0..d {
            for c in r..d {
                j[r][c] = b * xi[r] * xi[c];
                j[c][r] = j[r][c];
            }
            j[r][r] += a;
        }
        j
    }

    /// Conjugate exponent `p/(p-1)`.
    pub fn conjugate_exponent(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Legendre transform of the energy: `σ^{1-q} |η|^q / q`.
    pub fn dual_energy(&self, eta: &[f64]) -> f64 {
        let q = self.conjugate_exponent();
        self.sigma.powf(1.0 - q) * norm(eta).powf(q) / q
    }

    /// Monotonicity constant `σ 2^{2-p}`.
    pub fn monotonicity_constant(&self) -> f64 {
        self.sigma * 2f64.powf(2.0 - self.p)
    }

    /// Continuity constant `σ (p-1)`.
    pub fn continuity_constant(&self) -> f64 {
        self.sigma * (self.p - 1.0)
    }
}

/// Exponents and coefficients of the two phases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxLaw {
    p1: f64,
    p2: f64,
    sigma1: f64,
    sigma2: f64,
}

impl FluxLaw {
    pub fn new(p1: f64, p2: f64, sigma1: f64, sigma2: f64) -> Result<Self, LawError> {
        if !(p1 >= 2.0) {
            return Err(LawError::LowExponent(p1));
        }
        if !(p1 <= p2 && p2.is_finite()) {
            return Err(LawError::Exponents(p1, p2));
        }
        if !(sigma1 > 0.0 && sigma2 > 0.0 && sigma1.is_finite() && sigma2.is_finite()) {
            return Err(LawError::Coefficients(sigma1, sigma2));
        }
        Ok(Self {
            p1,
            p2,
            sigma1,
            sigma2,
        })
    }

    /// Single-phase law (both phases identical).
    pub fn uniform(p: f64, sigma: f64) -> Result<Self, LawError> {
        Self::new(p, p, sigma, sigma)
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    pub fn sigma1(&self) -> f64 {
        self.sigma1
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Conjugate of `p₂`, written `q₁` in the usual two-phase notation.
    pub fn q1(&self) -> f64 {
        self.p2 / (self.p2 - 1.0)
    }

    /// Conjugate of `p₁`, written `q₂`.
    pub fn q2(&self) -> f64 {
        self.p1 / (self.p1 - 1.0)
    }

    pub fn exponent(&self, phase: Phase) -> f64 {
        match phase {
            Phase::One => self.p1,
            Phase::Two => self.p2,
        }
    }

    pub fn coefficient(&self, phase: Phase) -> f64 {
        match phase {
            Phase::One => self.sigma1,
            Phase::Two => self.sigma2,
        }
    }

    pub fn phase(&self, phase: Phase) -> PowerLaw {
        PowerLaw {
            sigma: self.coefficient(phase),
            p: self.exponent(phase),
        }
    }

    /// Same coefficients, exponents replaced. Used by exponent continuation,
    /// where intermediate stages stay within `[2, p_i]`.
    pub(crate) fn with_exponents(&self, p1: f64, p2: f64) -> Self {
        Self { p1, p2, ..*self }
    }

    pub fn flux(&self, phase: Phase, xi: &[f64]) -> Point {
        self.phase(phase).flux(xi)
    }

    pub fn energy_density(&self, phase: Phase, xi: &[f64]) -> f64 {
        self.phase(phase).energy(xi)
    }

    pub fn flux_jacobian(
        &self,
        phase: Phase,
        xi: &[f64],
        reg: &RegularizationPolicy,
    ) -> [[f64; MAX_DIM]; MAX_DIM] {
        self.phase(phase).jacobian(xi, reg)
    }

    pub fn dual_density(&self, phase: Phase, eta: &[f64]) -> f64 {
        self.phase(phase).dual_energy(eta)
    }
}

/// A pair `(ξ₁, ξ₂)` of sample gradients.
pub type SamplePair = (Vec<f64>, Vec<f64>);

/// `count` pairs drawn uniformly from `[-half_width, half_width]^dim`.
pub fn random_pairs(count: usize, dim: usize, half_width: f64, seed: u64) -> Vec<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> Vec<f64> {
        (0..dim)
            .map(|_| rng.gen_range(-half_width..=half_width))
            .collect()
    };
    (0..count).map(|_| (draw(), draw())).collect()
}

/// Outcome of a sampled structural-inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    /// The constant the inequality is checked against.
    pub constant: f64,
    /// Smallest (monotonicity) or largest (continuity) observed ratio over
    /// pairs with `ξ₁ ≠ ξ₂`; `None` if every pair was degenerate.
    pub extreme_ratio: Option<f64>,
    pub pairs_checked: usize,
    pub violations: Vec<SamplePair>,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

const CHECK_SLACK: f64 = 1e-12;

/// `(A(ξ₁) - A(ξ₂), ξ₁ - ξ₂) ≥ σ 2^{2-p} |ξ₁ - ξ₂|^p` over the samples.
/// The reported ratio is `(ΔA, Δξ) / (σ |Δξ|^p)`, to be compared with `2^{2-p}`.
pub fn check_monotonicity(law: &FluxLaw, phase: Phase, pairs: &[SamplePair]) -> InequalityReport {
    let pl = law.phase(phase);
    let bound = 2f64.powf(2.0 - pl.p);
    let mut extreme: Option<f64> = None;
    let mut violations = Vec::new();
    for (a, b) in pairs {
        let fa = pl.flux(a);
        let fb = pl.flux(b);
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let lhs: f64 = diff
            .iter()
            .enumerate()
            .map(|(k, d)| (fa[k] - fb[k]) * d)
            .sum();
        let scale = pl.sigma * norm(&diff).powf(pl.p);
        if scale == 0.0 {
            if lhs < 0.0 {
                violations.push((a.clone(), b.clone()));
            }
            continue;
        }
        let ratio = lhs / scale;
        extreme = Some(extreme.map_or(ratio, |e: f64| e.min(ratio)));
        if ratio < bound * (1.0 - CHECK_SLACK) {
            violations.push((a.clone(), b.clone()));
        }
    }
    InequalityReport {
        constant: pl.monotonicity_constant(),
        extreme_ratio: extreme,
        pairs_checked: pairs.len(),
        violations,
    }
}

/// `|A(ξ₁) - A(ξ₂)| ≤ σ (p-1) |ξ₁ - ξ₂| (1 + |ξ₁| + |ξ₂|)^{p-2}` over the
/// samples. The reported ratio is normalized by `σ |Δξ| (1+|ξ₁|+|ξ₂|)^{p-2}`,
/// to be compared with `p - 1`.
pub fn check_continuity(law: &FluxLaw, phase: Phase, pairs: &[SamplePair]) -> InequalityReport {
    let pl = law.phase(phase);
    let bound = pl.p - 1.0;
    let mut extreme: Option<f64> = None;
    let mut violations = Vec::new();
    for (a, b) in pairs {
        let fa = pl.flux(a);
        let fb = pl.flux(b);
        let lhs = (0..a.len())
            .map(|k| (fa[k] - fb[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let scale = pl.sigma * norm(&diff) * (1.0 + norm(a) + norm(b)).powf(pl.p - 2.0);
        if scale == 0.0 {
            if lhs > 0.0 {
                violations.push((a.clone(), b.clone()));
            }
            continue;
        }
        let ratio = lhs / scale;
        extreme = Some(extreme.map_or(ratio, |e: f64| e.max(ratio)));
        if ratio > bound * (1.0 + CHECK_SLACK) {
            violations.push((a.clone(), b.clone()));
        }
    }
    InequalityReport {
        constant: pl.continuity_constant(),
        extreme_ratio: extreme,
        pairs_checked: pairs.len(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn law() -> FluxLaw {
        FluxLaw::new(2.0, 3.0, 2.0, 1.0).unwrap()
    }

    #[test]
    fn validation_messages() {
        assert_eq!(
            FluxLaw::new(1.5, 3.0, 1.0, 1.0),
            Err(LawError::LowExponent(1.5))
        );
        assert_eq!(
            LawError::LowExponent(1.5).to_string(),
            "p₁ must be ≥ 2, got 1.5"
        );
        assert!(FluxLaw::new(3.0, 2.5, 1.0, 1.0).is_err());
        assert!(FluxLaw::new(2.0, 3.0, 0.0, 1.0).is_err());
        assert!(RegularizationPolicy::new(0.0).is_err());
    }

    #[test]
    fn conjugates() {
        let l = FluxLaw::new(2.5, 4.0, 1.0, 1.0).unwrap();
        assert!((1.0 / l.p1() + 1.0 / l.q2() - 1.0).abs() < 1e-15);
        assert!((1.0 / l.p2() + 1.0 / l.q1() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flux_examples() {
        let l = law();
        assert_eq!(l.flux(Phase::One, &[3.0, 4.0])[..2], [6.0, 8.0]);
        assert_eq!(l.flux(Phase::Two, &[0.0, 0.0])[..2], [0.0, 0.0]);
        assert_eq!(l.flux(Phase::One, &[0.0, 0.0])[..2], [0.0, 0.0]);
        assert_eq!(l.flux(Phase::Two, &[1.0, 0.0])[..2], [1.0, 0.0]);
        assert_eq!(l.flux(Phase::Two, &[2.0, 0.0])[..2], [4.0, 0.0]);
    }

    #[test]
    fn energy_examples() {
        let quad = PowerLaw { sigma: 1.0, p: 2.0 };
        assert!((quad.energy(&[3.0, 4.0]) - 12.5).abs() < 1e-14);
        assert_eq!(quad.energy(&[0.0, 0.0]), 0.0);
        let quartic = PowerLaw { sigma: 2.0, p: 4.0 };
        assert!((quartic.energy(&[1.0, 1.0]) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn jacobian_examples() {
        let reg = RegularizationPolicy::new(1e-3).unwrap();
        let lin = PowerLaw { sigma: 3.0, p: 2.0 };
        let j = lin.jacobian(&[0.7, -0.2], &reg);
        assert_eq!([j[0][0], j[0][1], j[1][0], j[1][1]], [3.0, 0.0, 0.0, 3.0]);

        let quartic = PowerLaw { sigma: 1.0, p: 4.0 };
        let j = quartic.jacobian(&[0.0, 0.0], &reg);
        assert!((j[0][0] - 1e-6).abs() < 1e-20 && (j[1][1] - 1e-6).abs() < 1e-20);
        assert_eq!(j[0][1], 0.0);

        // central differences of the flux
        let cubic = PowerLaw { sigma: 1.0, p: 3.0 };
        let fine = RegularizationPolicy::new(1e-8).unwrap();
        let xi = [1.0, 0.0];
        let j = cubic.jacobian(&xi, &fine);
        let h = 1e-6;
        for c in 0..2 {
            let mut a = xi;
            let mut b = xi;
            a[c] += h;
            b[c] -= h;
            let (fa, fb) = (cubic.flux(&a), cubic.flux(&b));
            for r in 0..2 {
                let fd = (fa[r] - fb[r]) / (2.0 * h);
                let scale = j[r][c].abs().max(1.0);
                assert!(
                    (fd - j[r][c]).abs() / scale < 1e-5,
                    "({r},{c}) {fd} vs {}",
                    j[r][c]
                );
            }
        }
    }

    /// `sup_{t ≥ 0} (t s - (σ/p) t^p)` by dense grid search plus local refinement.
    fn legendre_oracle(sigma: f64, p: f64, s: f64) -> f64 {
        let obj = |t: f64| t * s - sigma / p * t.powf(p);
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..6 {
            let steps = 2000;
            let dt = (hi - lo) / steps as f64;
            let best = (0..=steps)
                .map(|i| lo + i as f64 * dt)
                .max_by(|a, b| obj(*a).partial_cmp(&obj(*b)).unwrap())
                .unwrap();
            lo = (best - dt).max(0.0);
            hi = best + dt;
        }
        obj(0.5 * (lo + hi))
    }

    #[test]
    fn dual_density_examples() {
        let quad = PowerLaw { sigma: 1.0, p: 2.0 };
        assert!((quad.dual_energy(&[1.0, 0.0]) - 0.5).abs() < 1e-15);
        assert_eq!(law().dual_density(Phase::Two, &[0.0, 0.0]), 0.0);
        let cubic = PowerLaw { sigma: 2.0, p: 3.0 };
        let oracle = legendre_oracle(2.0, 3.0, 1.0);
        assert!((cubic.dual_energy(&[1.0, 0.0]) - oracle).abs() < 1e-6);
        // closed form checked at a few more slopes
        for (sigma, p, s) in [(0.5, 2.5, 0.3), (3.0, 4.0, 2.0), (1.0, 6.0, 1.7)] {
            let pl = PowerLaw { sigma, p };
            assert!((pl.dual_energy(&[s, 0.0]) - legendre_oracle(sigma, p, s)).abs() < 1e-6);
        }
    }

    /// Minimum (or maximum) of the normalized ratio over collinear pairs
    /// `(1, t)` with `t ∈ [-1, 1)`; by homogeneity and rotation invariance
    /// collinear pairs realize the extreme constants.
    fn collinear_extreme(p: f64, monotone: bool) -> f64 {
        let pl = PowerLaw { sigma: 1.0, p };
        let mut extreme = if monotone { f64::INFINITY } else { 0.0f64 };
        for i in 0..200_000 {
            let t = -1.0 + 2.0 * i as f64 / 200_000.0;
            let (a, b) = ([1.0, 0.0], [t, 0.0]);
            let (fa, fb) = (pl.flux(&a), pl.flux(&b));
            let d = 1.0 - t;
            if monotone {
                extreme = extreme.min((fa[0] - fb[0]) * d / d.powf(p));
            } else {
                // (1 + |ξ₁| + |ξ₂|) ≥ |ξ₁| + |ξ₂|; the sharper scale-free bound
                extreme = extreme.max((fa[0] - fb[0]).abs() / (d * (1.0 + t.abs()).powf(p - 2.0)));
            }
        }
        extreme
    }

    #[test]
    fn structural_constants_from_collinear_search() {
        for p in [2.0, 2.5, 3.0, 4.0, 6.0] {
            let m = collinear_extreme(p, true);
            assert!(
                m >= 2f64.powf(2.0 - p) * (1.0 - 1e-9),
                "p={p} min ratio {m}"
            );
            assert!(
                m <= 2f64.powf(2.0 - p) * 1.01,
                "p={p}: constant not sharp, {m}"
            );
            let c = collinear_extreme(p, false);
            assert!(c <= p - 1.0 + 1e-9, "p={p} max ratio {c}");
        }
    }

    #[test]
    fn monotonicity_examples() {
        let lin = FluxLaw::uniform(2.0, 1.0).unwrap();
        let r = check_monotonicity(&lin, Phase::One, &[(vec![1.0, 0.0], vec![0.0, 0.0])]);
        assert!(r.passed());
        assert!((r.extreme_ratio.unwrap() - 1.0).abs() < 1e-15);

        let r = check_monotonicity(&lin, Phase::One, &[(vec![0.3, 0.1], vec![0.3, 0.1])]);
        assert!(r.passed());
        assert_eq!(r.extreme_ratio, None);

        let quartic = FluxLaw::uniform(4.0, 1.0).unwrap();
        let pairs = random_pairs(10_000, 2, 2.0, 7);
        let r = check_monotonicity(&quartic, Phase::One, &pairs);
        assert!(r.passed(), "{:?}", r.violations.first());
        assert!(r.extreme_ratio.unwrap() >= 0.25);
        assert_eq!(r.constant, 0.25);
    }

    #[test]
    fn continuity_examples() {
        let lin = FluxLaw::uniform(2.0, 1.5).unwrap();
        let r = check_continuity(&lin, Phase::Two, &[(vec![0.2, 0.2], vec![0.2, 0.2])]);
        assert!(r.passed());
        let r = check_continuity(&lin, Phase::Two, &[(vec![1.0, -2.0], vec![0.5, 0.25])]);
        assert!(r.passed());
        assert!((r.extreme_ratio.unwrap() - 1.0).abs() < 1e-14);

        let cubic = FluxLaw::uniform(3.0, 1.0).unwrap();
        let r = check_continuity(&cubic, Phase::One, &random_pairs(10_000, 2, 2.0, 11));
        assert!(r.passed());
        assert!(r.extreme_ratio.unwrap() < 2.0);
    }

    #[test]
    fn violations_are_reported_not_panicked() {
        // a fake law with p < 2 breaks the p ≥ 2 constants
        let bad = FluxLaw {
            p1: 1.2,
            p2: 1.2,
            sigma1: 1.0,
            sigma2: 1.0,
        };
        let r = check_monotonicity(&bad, Phase::One, &random_pairs(200, 2, 2.0, 3));
        assert!(!r.passed());
    }

    proptest! {
        #[test]
        fn flux_is_energy_gradient(r in 0.1f64..10.0, angle in 0.0f64..std::f64::consts::TAU, p in 2.0f64..6.0, sigma in 0.1f64..5.0) {
            let pl = PowerLaw { sigma, p };
            let xi = [r * angle.cos(), r * angle.sin()];
            let f = pl.flux(&xi);
            for k in 0..2 {
                let h = 1e-6 * r;
                let mut a = xi;
                let mut b = xi;
                a[k] += h;
                b[k] -= h;
                let fd = (pl.energy(&a) - pl.energy(&b)) / (2.0 * h);
                let scale = f[0].hypot(f[1]);
                prop_assert!((fd - f[k]).abs() <= 1e-6 * scale, "{} vs {}", fd, f[k]);
            }
        }

        #[test]
        fn flux_symmetries(x in -5.0f64..5.0, y in -5.0f64..5.0, t in 0.01f64..10.0, p in 2.0f64..6.0) {
            let pl = PowerLaw { sigma: 1.3, p };
            let f = pl.flux(&[x, y]);
            let g = pl.flux(&[-x, -y]);
            prop_assert!((f[0] + g[0]).abs() <= 1e-12 * f[0].abs().max(1.0));
            prop_assert!((f[1] + g[1]).abs() <= 1e-12 * f[1].abs().max(1.0));
            let s = pl.flux(&[t * x, t * y]);
            let scale = t.powf(p - 1.0);
            prop_assert!((s[0] - scale * f[0]).abs() <= 1e-10 * (scale * f[0]).abs().max(1e-12));
            prop_assert!((s[1] - scale * f[1]).abs() <= 1e-10 * (scale * f[1]).abs().max(1e-12));
        }

        #[test]
        fn fenchel_young(x in -3.0f64..3.0, y in -3.0f64..3.0, u in -3.0f64..3.0, v in -3.0f64..3.0, p in 2.0f64..5.0, sigma in 0.2f64..4.0) {
            let pl = PowerLaw { sigma, p };
            let xi = [x, y];
            let eta = [u, v];
            prop_assert!(pl.energy(&xi) + pl.dual_energy(&eta) >= dot(&xi, &eta) - 1e-12);
            let tight = pl.flux(&xi);
            let gap = pl.energy(&xi) + pl.dual_energy(&tight[..2]) - dot(&xi, &tight[..2]);
            prop_assert!(gap.abs() <= 1e-8 * (1.0 + pl.energy(&xi)), "gap {}", gap);
        }

        #[test]
        fn jacobian_symmetric_positive_definite(x in -3.0f64..3.0, y in -3.0f64..3.0, p in 2.0f64..6.0, delta in 1e-6f64..1e-1) {
            let pl = PowerLaw { sigma: 0.7, p };
            let reg = RegularizationPolicy::new(delta).unwrap();
            let j = pl.jacobian(&[x, y], &reg);
            prop_assert_eq!(j[0][1], j[1][0]);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            prop_assert!(j[0][0] > 0.0 && det > 0.0);
        }
    }
}
