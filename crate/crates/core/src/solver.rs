//! Damped inexact Newton with backtracking, and the Jacobi-preconditioned
//! conjugate-gradient inner solver it drives.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{LawError, RegularizationPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("Newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Iterate with the smallest residual seen.
        best: Vec<f64>,
    },
    #[error("inner linear solve broke down: {0}")]
    SingularSystem(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("max_iter must be at least 1")]
    MaxIter,
    #[error("backtracking factor must lie in (0,1), got {0}")]
    Backtrack(f64),
    #[error("sufficient-decrease constant must lie in (0,1), got {0}")]
    Armijo(f64),
    #[error(transparent)]
    Regularization(#[from] LawError),
}

/// Nonlinear solver settings shared by cell and domain solves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Residual tolerance in the scaled discrete norm.
    pub tol: f64,
    pub max_iter: usize,
    pub delta_reg: f64,
    /// Step shrink factor of the backtracking line search.
    pub backtrack: f64,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Number of exponent-continuation stages after the linear `(2,2)` stage.
    pub continuation: usize,
    /// Inner CG stops at this fraction of the current nonlinear residual.
    pub linear_rtol: f64,
    pub max_linear_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            delta_reg: 1e-8,
            backtrack: 0.5,
            armijo: 1e-4,
            continuation: 4,
            linear_rtol: 1e-2,
            max_linear_iter: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(ConfigError::Tolerance(self.tol));
        }
        if self.max_iter == 0 {
            return Err(ConfigError::MaxIter);
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(ConfigError::Backtrack(self.backtrack));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(ConfigError::Armijo(self.armijo));
        }
        RegularizationPolicy::new(self.delta_reg)?;
        Ok(())
    }

    pub fn regularization(&self) -> RegularizationPolicy {
        RegularizationPolicy::new(self.delta_reg).unwrap_or_default()
    }

    /// Exponent pairs visited by continuation, ending at `(p1, p2)`.
    pub fn continuation_stages(&self, p1: f64, p2: f64) -> Vec<(f64, f64)> {
        if (p1 == 2.0 && p2 == 2.0) || self.continuation == 0 {
            return vec![(p1, p2)];
        }
        let c = self.continuation as f64;
        (0..=self.continuation)
            .map(|k| {
                let s = k as f64 / c;
                if k == self.continuation {
                    (p1, p2)
                } else {
                    (2.0 * (p1 / 2.0).powf(s), 2.0 * (p2 / 2.0).powf(s))
                }
            })
            .collect()
    }
}

/// A discrete nonlinear system `R(u) = 0` with a symmetric tangent.
pub(crate) trait NonlinearSystem {
    fn len(&self) -> usize;
    /// Energy whose gradient is the residual, when the system is variational.
    fn energy(&self, u: &[f64]) -> Option<f64>;
    /// Residual with constrained directions already projected out.
    fn residual(&mut self, u: &[f64], out: &mut [f64]);
    fn linearize(&mut self, u: &[f64]);
    fn apply_tangent(&self, v: &[f64], out: &mut [f64]);
    fn tangent_diagonal(&self, out: &mut [f64]);
    /// Projection onto admissible increments (kills null modes or fixed dofs).
    fn project(&self, v: &mut [f64]);
    fn residual_norm(&self, r: &[f64]) -> f64;
}

/// Convergence record of one Newton run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonTrace {
    pub iterations: usize,
    pub residual: f64,
    /// Energy after every accepted step (empty for non-variational systems).
    pub energies: Vec<f64>,
    pub linear_iterations: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned CG for `J x = b`, starting from zero.
pub(crate) fn pcg<S: NonlinearSystem>(
    sys: &S,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize), SolveError> {
    let n = b.len();
    let mut diag = vec![0.0; n];
    sys.tangent_diagonal(&mut diag);
    let inv: Vec<f64> = diag
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    sys.project(&mut r);
    let bnorm = dot(&r, &r).sqrt();
    if bnorm == 0.0 {
        return Ok((x, 0));
    }
    let target = rtol * bnorm;
    let precondition = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = inv[i] * r[i];
        }
        sys.project(z);
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        sys.apply_tangent(&p, &mut ap);
        sys.project(&mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(SolveError::SingularSystem(format!(
                "non-positive curvature {pap:.3e} at CG iteration {it}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= target {
            return Ok((x, it));
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // An inexact step is still a descent direction; the outer loop decides.
    Ok((x, max_iter))
}

/// Damped Newton from `u` until the scaled residual drops below `tol`.
pub(crate) fn newton<S: NonlinearSystem>(
    sys: &mut S,
    u: &mut [f64],
    tol: f64,
    cfg: &SolverConfig,
) -> Result<NewtonTrace, SolveError> {
    let n = sys.len();
    let mut r = vec![0.0; n];
    sys.residual(u, &mut r);
    let mut rnorm = sys.residual_norm(&r);
    let mut energy = sys.energy(u);
    let mut trace = NewtonTrace {
        residual: rnorm,
        ..Default::default()
    };
    if let Some(e) = energy {
        trace.energies.push(e);
    }
    let mut best = (rnorm, u.to_vec());
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; n];

    for it in 0..cfg.max_iter {
        if rnorm <= tol {
            trace.iterations = it;
            trace.residual = rnorm;
            return Ok(trace);
        }
        sys.linearize(u);
        let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
        let (mut d, lin_its) = pcg(sys, &neg_r, cfg.linear_rtol, cfg.max_linear_iter)?;
        trace.linear_iterations += lin_its;
        sys.project(&mut d);

        let mut slope = dot(&r, &d);
        if !(slope < 0.0) {
            d = neg_r;
            slope = dot(&r, &d);
        }

        let mut alpha = 1.0;
        let mut accepted = false;
        let merit0 = 0.5 * dot(&r, &r);
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = u[i] + alpha * d[i];
            }
            sys.residual(&trial, &mut r_trial);
            let trial_norm = sys.residual_norm(&r_trial);
            let ok = match energy {
                Some(e0) => {
                    let e1 = sys.energy(&trial).unwrap_or(f64::INFINITY);
                    let predicted = cfg.armijo * alpha * slope;
                    // Below round-off the energy cannot certify descent;
                    // fall back on the residual.
                    let noise = 1e-13 * e0.abs().max(f64::MIN_POSITIVE);
                    e1 <= e0 + predicted || (predicted.abs() < noise && trial_norm < rnorm)
                }
                None => {
                    let merit1 = 0.5 * dot(&r_trial, &r_trial);
                    merit1 <= (1.0 - 2.0 * cfg.armijo * alpha) * merit0
                }
            };
            if ok && trial_norm.is_finite() {
                accepted = true;
                break;
            }
            alpha *= cfg.backtrack;
        }
        if !accepted {
            return Err(SolveError::NonConvergence {
                iterations: it + 1,
                residual: best.0,
                best: best.1,
            });
        }
        u.copy_from_slice(&trial);
        std::mem::swap(&mut r, &mut r_trial);
        rnorm = sys.residual_norm(&r);
        energy = sys.energy(u);
        if let Some(e) = energy {
            trace.energies.push(e);
        }
        if rnorm < best.0 {
            best = (rnorm, u.to_vec());
        }
    }
    if rnorm <= tol {
        trace.iterations = cfg.max_iter;
        trace.residual = rnorm;
        return Ok(trace);
    }
    Err(SolveError::NonConvergence {
        iterations: cfg.max_iter,
        residual: best.0,
        best: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `E(u) = Σ (a_i/4) u_i^4 + (1/2) u_i^2 - b_i u_i`, a separable convex model.
    struct Quartic {
        a: Vec<f64>,
        b: Vec<f64>,
        tangent: Vec<f64>,
    }

    impl NonlinearSystem for Quartic {
        fn len(&self) -> usize {
            self.a.len()
        }
        fn energy(&self, u: &[f64]) -> Option<f64> {
            Some(
                (0..u.len())
                    .map(|i| self.a[i] / 4.0 * u[i].powi(4) + 0.5 * u[i] * u[i] - self.b[i] * u[i])
                    .sum(),
            )
        }
        fn residual(&mut self, u: &[f64], out: &mut [f64]) {
            for i in 0..u.len() {
                out[i] = self.a[i] * u[i].powi(3) + u[i] - self.b[i];
            }
        }
        fn linearize(&mut self, u: &[f64]) {
            self.tangent = (0..u.len())
                .map(|i| 3.0 * self.a[i] * u[i] * u[i] + 1.0)
                .collect();
        }
        fn apply_tangent(&self, v: &[f64], out: &mut [f64]) {
            for i in 0..v.len() {
                out[i] = self.tangent[i] * v[i];
            }
        }
        fn tangent_diagonal(&self, out: &mut [f64]) {
            out.copy_from_slice(&self.tangent);
        }
        fn project(&self, _v: &mut [f64]) {}
        fn residual_norm(&self, r: &[f64]) -> f64 {
            dot(r, r).sqrt()
        }
    }

    #[test]
    fn newton_solves_separable_quartic_with_descent() {
        let mut sys = Quartic {
            a: vec![1.0, 10.0, 100.0],
            b: vec![50.0, -3.0, 1.0],
            tangent: vec![],
        };
        let mut u = vec![0.0; 3];
        let trace = newton(&mut sys, &mut u, 1e-12, &SolverConfig::default()).unwrap();
        let mut r = vec![0.0; 3];
        sys.residual(&u, &mut r);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        for w in trace.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs());
        }
    }

    #[test]
    fn reports_nonconvergence_with_best_iterate() {
        let mut sys = Quartic {
            a: vec![1.0],
            b: vec![1e6],
            tangent: vec![],
        };
        let mut u = vec![0.0];
        let cfg = SolverConfig {
            max_iter: 2,
            ..Default::default()
        };
        match newton(&mut sys, &mut u, 1e-12, &cfg) {
            Err(SolveError::NonConvergence {
                iterations, best, ..
            }) => {
                assert_eq!(iterations, 2);
                assert_eq!(best.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn continuation_is_geometric() {
        let cfg = SolverConfig::default();
        let st = cfg.continuation_stages(2.0, 4.0);
        assert_eq!(st.len(), 5);
        assert_eq!(st[0], (2.0, 2.0));
        assert_eq!(st[4], (2.0, 4.0));
        assert!((st[2].1 - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(cfg.continuation_stages(2.0, 2.0), vec![(2.0, 2.0)]);
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            tol: 0.0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::Tolerance(0.0)));
        let bad = SolverConfig {
            max_iter: 0,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::MaxIter));
    }
}
