//! Periodic cell problem: corrector `p(y, ξ) = ξ + ∇υ_ξ(y)`, homogenized flux
//! `b(ξ) = ∫_Y A(y, p(y, ξ)) dy`, and the divergence-free dual field of a
//! laminate.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{scaled_norm, PowerLawSystem};
use crate::cache::CellCache;
use crate::constitutive::{FluxLaw, PowerLaw};
use crate::grid::{Grid, GridError, ScalarField, VectorField, MAX_DIM};
use crate::microstructure::{MicroError, Microstructure, Phase};
use crate::solver::{newton, ConfigError, NewtonTrace, NonlinearSystem, SolveError, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CellError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cell solve at xi={xi:?} failed: {source}")]
    Solve {
        xi: Vec<f64>,
        #[source]
        source: SolveError,
    },
    #[error("macroscopic gradient has {got} components, grid dimension is {dim}")]
    Dimension { got: usize, dim: usize },
    #[error("the dual layer field needs a layered microstructure")]
    WrongMicrostructure,
}

/// Converged discrete corrector for one macroscopic gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution {
    pub law: FluxLaw,
    pub micro: Microstructure,
    pub xi: Vec<f64>,
    pub grid: Grid,
    /// Mean-zero periodic corrector potential `υ_ξ`.
    pub corrector: ScalarField,
    /// `ξ + ∇υ_ξ` per cell.
    pub p_field: VectorField,
    pub b: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl CellSolution {
    /// Rebuilds the derived fields from a stored corrector potential.
    pub fn from_corrector(
        law: FluxLaw,
        micro: Microstructure,
        xi: Vec<f64>,
        corrector: ScalarField,
        residual_norm: f64,
        iterations: usize,
    ) -> Self {
        let grid = *corrector.grid();
        let p_field = corrector_field(&grid, &xi, corrector.values());
        let phases = micro.cell_phases(&grid);
        let b = flux_average(&law, &phases, &p_field);
        Self {
            law,
            micro,
            xi,
            grid,
            corrector,
            p_field,
            b,
            residual_norm,
            iterations,
        }
    }

    pub fn phases(&self) -> Vec<Phase> {
        self.micro.cell_phases(&self.grid)
    }
}

/// Per-stage Newton records of one continuation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellTrace {
    pub stages: Vec<((f64, f64), NewtonTrace)>,
}

/// Rounds to the 1e-12 lattice used for cache keys; solves run at the
/// rounded value so cached and fresh results coincide bit for bit.
pub fn quantize(xi: &[f64]) -> Vec<f64> {
    xi.iter().map(|&x| (x * 1e12).round() / 1e12).collect()
}

fn corrector_field(grid: &Grid, xi: &[f64], u: &[f64]) -> VectorField {
    let conn = grid.connectivity();
    let d = grid.dim();
    let mut values = Vec::with_capacity(grid.n_cells() * d);
    for c in 0..grid.n_cells() {
        let g = conn.gradient(c, u);
        for k in 0..d {
            values.push(xi[k] + g[k]);
        }
    }
    VectorField::new(*grid, values).expect("length matches grid")
}

fn flux_average(law: &FluxLaw, phases: &[Phase], field: &VectorField) -> Vec<f64> {
    let grid = field.grid();
    let d = grid.dim();
    let mut b = vec![0.0; d];
    for (c, &ph) in phases.iter().enumerate() {
        let f = law.flux(ph, field.get(c));
        for k in 0..d {
            b[k] += f[k];
        }
    }
    let vol = grid.cell_volume();
    b.iter_mut().for_each(|v| *v *= vol);
    b
}

/// Solves the cell problem for `ξ` on a periodic grid of `Y`.
pub fn solve_cell(
    law: &FluxLaw,
    micro: &Microstructure,
    xi: &[f64],
    grid: &Grid,
    cfg: &SolverConfig,
) -> Result<CellSolution, CellError> {
    solve_cell_traced(law, micro, xi, grid, cfg).map(|(s, _)| s)
}

/// [`solve_cell`] plus the Newton history of every continuation stage.
pub fn solve_cell_traced(
    law: &FluxLaw,
    micro: &Microstructure,
    xi: &[f64],
    grid: &Grid,
    cfg: &SolverConfig,
) -> Result<(CellSolution, CellTrace), CellError> {
    cfg.validate()?;
    if !grid.is_periodic() {
        return Err(GridError::NotPeriodic.into());
    }
    if xi.len() != grid.dim() {
        return Err(CellError::Dimension {
            got: xi.len(),
            dim: grid.dim(),
        });
    }
    micro.validate()?;
    micro.validate_dim(grid.dim())?;

    let conn = grid.connectivity();
    let phases = micro.cell_phases(grid);
    let mut u = vec![0.0; grid.n_nodes()];
    let mut trace = CellTrace::default();
    let mut iterations = 0;
    let mut residual = 0.0;

    if xi.iter().any(|&x| x != 0.0) {
        let mut sys = PowerLawSystem::new(
            *grid,
            &conn,
            &phases,
            [law.phase(Phase::One), law.phase(Phase::Two)],
            cfg.regularization(),
        )
        .with_shift(xi);
        let stages = cfg.continuation_stages(law.p1(), law.p2());
        let last = stages.len() - 1;
        for (k, &(p1, p2)) in stages.iter().enumerate() {
            let staged = law.with_exponents(p1, p2);
            sys.set_laws([staged.phase(Phase::One), staged.phase(Phase::Two)]);
            let tol = if k == last {
                cfg.tol
            } else {
                cfg.tol.max(1e-6)
            };
            let t = newton(&mut sys, &mut u, tol, cfg).map_err(|source| CellError::Solve {
                xi: xi.to_vec(),
                source,
            })?;
            iterations += t.iterations;
            residual = t.residual;
            trace.stages.push(((p1, p2), t));
        }
        crate::grid::remove_null_modes(grid, &mut u);
    }

    let corrector = ScalarField::new(*grid, u)?;
    let sol = CellSolution::from_corrector(
        *law,
        micro.clone(),
        xi.to_vec(),
        corrector,
        residual,
        iterations,
    );
    Ok((sol, trace))
}

/// `b(ξ) = Σ_cells A(phase, p_field) · vol`.
pub fn homogenized_flux(sol: &CellSolution) -> Vec<f64> {
    flux_average(&sol.law, &sol.phases(), &sol.p_field)
}

/// `|∫_Y (A(y,p), p) dy - (b(ξ), ξ)|`.
pub fn energy_identity(sol: &CellSolution) -> f64 {
    let d = sol.grid.dim();
    let vol = sol.grid.cell_volume();
    let phases = sol.phases();
    let mut work = 0.0;
    for (c, &ph) in phases.iter().enumerate() {
        let p = sol.p_field.get(c);
        let f = sol.law.flux(ph, p);
        work += (0..d).map(|k| f[k] * p[k]).sum::<f64>();
    }
    work *= vol;
    let bxi: f64 = sol.b.iter().zip(&sol.xi).map(|(a, b)| a * b).sum();
    (work - bxi).abs()
}

/// Discrete cell Lagrangian `∫_Y f̃(y, p(y, ξ)) dy`.
pub fn cell_energy(sol: &CellSolution) -> f64 {
    let vol = sol.grid.cell_volume();
    sol.phases()
        .iter()
        .enumerate()
        .map(|(c, &ph)| sol.law.energy_density(ph, sol.p_field.get(c)))
        .sum::<f64>()
        * vol
}

/// `Σ_cells χ_phase |p_field|^q · vol`.
pub fn phase_moment(sol: &CellSolution, phase: Phase, q: f64) -> f64 {
    let vol = sol.grid.cell_volume();
    sol.phases()
        .iter()
        .enumerate()
        .filter(|(_, &ph)| ph == phase)
        .map(|(c, _)| {
            let p = sol.p_field.get(c);
            p.iter().map(|x| x * x).sum::<f64>().sqrt().powf(q)
        })
        .sum::<f64>()
        * vol
}

/// Cell solves for one law, geometry and cell grid, memoized in a shared cache.
#[derive(Debug, Clone)]
pub struct CellEvaluator {
    pub law: FluxLaw,
    pub micro: Microstructure,
    pub grid: Grid,
    pub cfg: SolverConfig,
    pub cache: Arc<CellCache>,
}

impl CellEvaluator {
    pub fn new(law: FluxLaw, micro: Microstructure, grid: Grid, cfg: SolverConfig) -> Self {
        Self::with_cache(law, micro, grid, cfg, Arc::new(CellCache::new()))
    }

    pub fn with_cache(
        law: FluxLaw,
        micro: Microstructure,
        grid: Grid,
        cfg: SolverConfig,
        cache: Arc<CellCache>,
    ) -> Self {
        Self {
            law,
            micro,
            grid,
            cfg,
            cache,
        }
    }

    /// Cell solution at the quantized `ξ`, from the cache when present.
    pub fn solve(&self, xi: &[f64]) -> Result<Arc<CellSolution>, CellError> {
        let xq = quantize(xi);
        let key = self
            .cache
            .key(&self.law, &self.micro, &self.grid, self.cfg.tol, &xq);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let sol = Arc::new(solve_cell(
            &self.law,
            &self.micro,
            &xq,
            &self.grid,
            &self.cfg,
        )?);
        self.cache.insert(key, sol.clone());
        Ok(sol)
    }

    /// Solves a batch concurrently; results keep the input order.
    pub fn solve_many(&self, xis: &[Vec<f64>]) -> Result<Vec<Arc<CellSolution>>, CellError> {
        xis.par_iter().map(|xi| self.solve(xi)).collect()
    }

    pub fn b(&self, xi: &[f64]) -> Result<Vec<f64>, CellError> {
        Ok(self.solve(xi)?.b.clone())
    }
}

/// One row of the `b` monotonicity check.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneRow {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    /// `(b(ξ₁) - b(ξ₂), ξ₁ - ξ₂)`.
    pub lhs: f64,
    /// `Σ_i ∫ χ_i |p(·,ξ₁) - p(·,ξ₂)|^{p_i}`.
    pub corrector_gap: f64,
    /// `lhs - c · corrector_gap`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneReport {
    /// `min(σ₁, σ₂) · 2^{2-p₂}`.
    pub constant: f64,
    pub rows: Vec<MonotoneRow>,
    pub min_slack: f64,
    pub violations: Vec<MonotoneRow>,
}

impl MonotoneReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `(b(ξ₁)-b(ξ₂), ξ₁-ξ₂) ≥ c Σ_i ∫χ_i|p(·,ξ₁)-p(·,ξ₂)|^{p_i} ≥ 0`.
pub fn check_b_monotone(
    eval: &CellEvaluator,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<MonotoneReport, CellError> {
    let law = &eval.law;
    let constant = law.sigma1().min(law.sigma2()) * 2f64.powf(2.0 - law.p2());
    let phases = eval.micro.cell_phases(&eval.grid);
    let vol = eval.grid.cell_volume();
    let mut rows = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let sa = eval.solve(a)?;
        let sb = eval.solve(b)?;
        let lhs: f64 = (0..a.len())
            .map(|k| (sa.b[k] - sb.b[k]) * (sa.xi[k] - sb.xi[k]))
            .sum();
        let mut gap = 0.0;
        for (c, &ph) in phases.iter().enumerate() {
            let d2: f64 = sa
                .p_field
                .get(c)
                .iter()
                .zip(sb.p_field.get(c))
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            gap += d2.sqrt().powf(law.exponent(ph));
        }
        gap *= vol;
        rows.push(MonotoneRow {
            xi1: a.clone(),
            xi2: b.clone(),
            lhs,
            corrector_gap: gap,
            slack: lhs - constant * gap,
        });
    }
    // round-off allowance on top of the Galerkin residual
    let allowance = |r: &MonotoneRow| 1e-9 * r.lhs.abs().max(1.0);
    let violations: Vec<MonotoneRow> = rows
        .iter()
        .filter(|r| r.slack < -allowance(r) || r.lhs < -allowance(r))
        .cloned()
        .collect();
    let min_slack = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    Ok(MonotoneReport {
        constant,
        rows,
        min_slack,
        violations,
    })
}

/// Right-hand bracket of the continuity estimate for `b`, without its constant.
pub fn b_continuity_majorant(law: &FluxLaw, xi1: &[f64], xi2: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = xi1.iter().zip(xi2).map(|(a, b)| a - b).collect();
    let dn = n(&diff);
    let (n1, n2) = (n(xi1), n(xi2));
    let (p1, p2) = (law.p1(), law.p2());
    let s = 1.0 + n1.powf(p1) + n2.powf(p1) + n1.powf(p2) + n2.powf(p2);
    dn.powf(1.0 / (p1 - 1.0)) * s.powf((p1 - 2.0) / (p1 - 1.0))
        + dn.powf(1.0 / (p2 - 1.0)) * s.powf((p2 - 2.0) / (p2 - 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuityReport {
    /// `|b(ξ₁) - b(ξ₂)| / majorant` per pair (degenerate pairs omitted).
    pub ratios: Vec<f64>,
    /// Largest ratio: an empirical value for the continuity constant.
    pub constant_estimate: f64,
    /// `(t, |b(ξ + t d) - b(ξ)|)` along the refinement line.
    pub line: Vec<(f64, f64)>,
    /// Least-squares log-log slope of the line samples.
    pub slope: f64,
    /// `1/(p₂-1) - 0.05`.
    pub slope_threshold: f64,
    pub violations: Vec<String>,
}

impl ContinuityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Bounded ratio to the continuity majorant over `pairs`, and the Hölder
/// slope of `t ↦ |b(base + t·direction) - b(base)|` over `steps`.
pub fn check_b_continuity(
    eval: &CellEvaluator,
    pairs: &[(Vec<f64>, Vec<f64>)],
    base: &[f64],
    direction: &[f64],
    steps: &[f64],
) -> Result<ContinuityReport, CellError> {
    let law = &eval.law;
    let mut violations = Vec::new();
    let mut ratios = Vec::new();
    for (a, b) in pairs {
        let (ba, bb) = (eval.b(a)?, eval.b(b)?);
        let db = ba
            .iter()
            .zip(&bb)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let maj = b_continuity_majorant(law, a, b);
        if a == b {
            if db != 0.0 {
                violations.push(format!("b differs at equal arguments {a:?}"));
            }
            continue;
        }
        let r = db / maj;
        if !r.is_finite() {
            violations.push(format!("unbounded ratio for pair {a:?}, {b:?}"));
        }
        ratios.push(r);
    }
    let b0 = eval.b(base)?;
    let mut line = Vec::with_capacity(steps.len());
    for &t in steps {
        let xi: Vec<f64> = base.iter().zip(direction).map(|(x, d)| x + t * d).collect();
        let bt = eval.b(&xi)?;
        let db = bt
            .iter()
            .zip(&b0)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        line.push((t, db));
    }
    let slope = if line.len() >= 2 {
        loglog_slope(&line)
    } else {
        f64::NAN
    };
    let slope_threshold = 1.0 / (law.p2() - 1.0) - 0.05;
    if line.len() >= 2 && !(slope >= slope_threshold) {
        violations.push(format!(
            "Hölder slope {slope:.4} below {slope_threshold:.4}"
        ));
    }
    let constant_estimate = ratios.iter().copied().fold(0.0, f64::max);
    Ok(ContinuityReport {
        ratios,
        constant_estimate,
        line,
        slope,
        slope_threshold,
        violations,
    })
}

/// Divergence-free field `τ` with `τ = -ξ` in phase one of a laminate.
#[derive(Debug, Clone, PartialEq)]
pub struct DualLayerField {
    pub xi: Vec<f64>,
    pub tau: VectorField,
    /// Neumann potential on phase two, mean-zero there (zero on nodes that
    /// touch only phase-one cells).
    pub potential: ScalarField,
    /// Scaled norm of `w ↦ ∫ τ·∇w` over all periodic nodal `w`.
    pub divergence_residual: f64,
    /// `∫_Y |τ|^{q₁} / |ξ|^{q₁}`; `None` at `ξ = 0`.
    pub norm_ratio: Option<f64>,
    pub iterations: usize,
}

/// Stationary points of `Σ_{R₂} (1/p₂)|∇φ|^{p₂} + ξ·∇φ` over nodes touching
/// phase-two cells.
struct DualLayerSystem<'a> {
    grid: Grid,
    conn: &'a crate::grid::Connectivity,
    active_cells: Vec<bool>,
    active_nodes: Vec<bool>,
    law: PowerLaw,
    load: Vec<f64>,
    reg: crate::constitutive::RegularizationPolicy,
    tangent: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
    modes: Vec<Vec<f64>>,
}

impl DualLayerSystem<'_> {
    fn set_exponent(&mut self, p: f64) {
        self.law.p = p;
    }
}

impl NonlinearSystem for DualLayerSystem<'_> {
    fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    fn energy(&self, u: &[f64]) -> Option<f64> {
        let d = self.grid.dim();
        let mut e = 0.0;
        for c in 0..self.conn.n_cells() {
            if self.active_cells[c] {
                e += self.law.energy(&self.conn.gradient(c, u)[..d]);
            }
        }
        Some(e * self.grid.cell_volume() + self.load.iter().zip(u).map(|(a, b)| a * b).sum::<f64>())
    }

    fn residual(&mut self, u: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        out.copy_from_slice(&self.load);
        for c in 0..self.conn.n_cells() {
            if self.active_cells[c] {
                let f = self.law.flux(&self.conn.gradient(c, u)[..d]);
                self.conn.scatter(c, &f, vol, out);
            }
        }
        self.project(out);
    }

    fn linearize(&mut self, u: &[f64]) {
        let d = self.grid.dim();
        self.tangent = (0..self.conn.n_cells())
            .map(|c| {
                if self.active_cells[c] {
                    self.law.jacobian(&self.conn.gradient(c, u)[..d], &self.reg)
                } else {
                    [[0.0; MAX_DIM]; MAX_DIM]
                }
            })
            .collect();
    }

    fn apply_tangent(&self, v: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (c, j) in self.tangent.iter().enumerate() {
            if !self.active_cells[c] {
                continue;
            }
            let g = self.conn.gradient(c, v);
            let mut t = [0.0; MAX_DIM];
            for r in 0..d {
                for k in 0..d {
                    t[r] += j[r][k] * g[k];
                }
            }
            self.conn.scatter(c, &t, vol, out);
        }
    }

    fn tangent_diagonal(&self, out: &mut [f64]) {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (c, j) in self.tangent.iter().enumerate() {
            if !self.active_cells[c] {
                continue;
            }
            for (l, &a) in self.conn.nodes(c).iter().enumerate() {
                let w = self.conn.weight(l);
                let mut s = 0.0;
                for r in 0..d {
                    for k in 0..d {
                        s += w[r] * j[r][k] * w[k];
                    }
                }
                out[a] += vol * s;
            }
        }
        for (o, &act) in out.iter_mut().zip(&self.active_nodes) {
            if !act {
                *o = 1.0;
            }
        }
    }

    fn project(&self, v: &mut [f64]) {
        for (x, &act) in v.iter_mut().zip(&self.active_nodes) {
            if !act {
                *x = 0.0;
            }
        }
        for m in &self.modes {
            let c: f64 = m.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (x, mi) in v.iter_mut().zip(m) {
                *x -= c * mi;
            }
        }
    }

    fn residual_norm(&self, r: &[f64]) -> f64 {
        scaled_norm(&self.grid, r)
    }
}

/// Orthonormal modes on the active nodes whose gradient vanishes on every
/// active cell: the constant, plus parity modes when `n` is even.
fn active_null_modes(grid: &Grid, active: &[bool]) -> Vec<Vec<f64>> {
    let d = grid.dim();
    let mut modes = Vec::new();
    let subsets: Vec<usize> = std::iter::once(0)
        .chain((1usize..(1 << d)).filter(|s| s.count_ones() >= 2 && grid.n() % 2 == 0))
        .collect();
    for subset in subsets {
        let mut m: Vec<f64> = (0..grid.n_nodes())
            .map(|a| {
                if !active[a] {
                    return 0.0;
                }
                let idx = grid.node_multi_index(a);
                let parity: usize = (0..d)
                    .filter(|k| (subset >> k) & 1 == 1)
                    .map(|k| idx[k])
                    .sum();
                if parity % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        for prev in &modes {
            let c: f64 = m.iter().zip(prev).map(|(a, b): (&f64, &f64)| a * b).sum();
            for (x, p) in m.iter_mut().zip(prev) {
                *x -= c * p;
            }
        }
        let nrm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-12 {
            m.iter_mut().for_each(|x| *x /= nrm);
            modes.push(m);
        }
    }
    modes
}

/// Builds `τ = -ξ` on phase one and `|∇φ|^{p₂-2}∇φ` on phase two, where `φ`
/// solves the `p₂`-Laplace Neumann problem with flux data `-ξ·n` on the
/// interface.
pub fn solve_dual_layer(
    law: &FluxLaw,
    micro: &Microstructure,
    xi: &[f64],
    grid: &Grid,
    cfg: &SolverConfig,
) -> Result<DualLayerField, CellError> {
    cfg.validate()?;
    if !micro.is_layered() {
        return Err(CellError::WrongMicrostructure);
    }
    if !grid.is_periodic() {
        return Err(GridError::NotPeriodic.into());
    }
    if xi.len() != grid.dim() {
        return Err(CellError::Dimension {
            got: xi.len(),
            dim: grid.dim(),
        });
    }
    micro.validate_dim(grid.dim())?;
    let d = grid.dim();
    let conn = grid.connectivity();
    let phases = micro.cell_phases(grid);
    let active_cells: Vec<bool> = phases.iter().map(|&p| p == Phase::Two).collect();
    let mut active_nodes = vec![false; grid.n_nodes()];
    for (c, &act) in active_cells.iter().enumerate() {
        if act {
            for &a in conn.nodes(c) {
                active_nodes[a] = true;
            }
        }
    }
    let vol = grid.cell_volume();
    let mut load = vec![0.0; grid.n_nodes()];
    let mut xi_pt = [0.0; MAX_DIM];
    xi_pt[..d].copy_from_slice(xi);
    for (c, &act) in active_cells.iter().enumerate() {
        if act {
            conn.scatter(c, &xi_pt, vol, &mut load);
        }
    }
    let modes = active_null_modes(grid, &active_nodes);
    let mut sys = DualLayerSystem {
        grid: *grid,
        conn: &conn,
        active_cells: active_cells.clone(),
        active_nodes: active_nodes.clone(),
        law: PowerLaw {
            sigma: 1.0,
            p: law.p2(),
        },
        load,
        reg: cfg.regularization(),
        tangent: Vec::new(),
        modes,
    };

    let mut phi = vec![0.0; grid.n_nodes()];
    let mut iterations = 0;
    if xi.iter().any(|&x| x != 0.0) {
        let stages = cfg.continuation_stages(law.p2(), law.p2());
        let last = stages.len() - 1;
        for (k, &(_, p)) in stages.iter().enumerate() {
            sys.set_exponent(p);
            let tol = if k == last {
                cfg.tol
            } else {
                cfg.tol.max(1e-6)
            };
            let t = newton(&mut sys, &mut phi, tol, cfg).map_err(|source| CellError::Solve {
                xi: xi.to_vec(),
                source,
            })?;
            iterations += t.iterations;
        }
    }

    // mean-zero on phase two
    let npc = grid.nodes_per_cell() as f64;
    let (mut sum, mut count) = (0.0, 0usize);
    for (c, &act) in active_cells.iter().enumerate() {
        if act {
            sum += conn.nodes(c).iter().map(|&a| phi[a]).sum::<f64>() / npc;
            count += 1;
        }
    }
    if count > 0 {
        let mean = sum / count as f64;
        for (x, &act) in phi.iter_mut().zip(&active_nodes) {
            if act {
                *x -= mean;
            }
        }
    }

    let p2 = PowerLaw {
        sigma: 1.0,
        p: law.p2(),
    };
    let mut tau = Vec::with_capacity(grid.n_cells() * d);
    for (c, &act) in active_cells.iter().enumerate() {
        if act {
            let f = p2.flux(&conn.gradient(c, &phi)[..d]);
            tau.extend_from_slice(&f[..d]);
        } else {
            tau.extend(xi.iter().map(|x| -x));
        }
    }
    let tau = VectorField::new(*grid, tau)?;

    let mut div = vec![0.0; grid.n_nodes()];
    for c in 0..grid.n_cells() {
        conn.scatter(c, &tau.get_point(c), vol, &mut div);
    }
    let divergence_residual = scaled_norm(grid, &div);

    let q1 = law.q1();
    let xin = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_ratio = if xin > 0.0 {
        let integral: f64 = (0..grid.n_cells())
            .map(|c| {
                tau.get(c)
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .powf(q1)
            })
            .sum::<f64>()
            * vol;
        Some(integral / xin.powf(q1))
    } else {
        None
    };

    Ok(DualLayerField {
        xi: xi.to_vec(),
        tau,
        potential: ScalarField::new(*grid, phi)?,
        divergence_residual,
        norm_ratio,
        iterations,
    })
}

/// Mean of the corrector field over the cell, `∫_Y p(y, ξ) dy`.
pub fn corrector_mean(sol: &CellSolution) -> Vec<f64> {
    sol.p_field.mean()
}

/// `∫_Y υ_ξ dy` (zero for a canonical corrector).
pub fn corrector_potential_mean(sol: &CellSolution) -> f64 {
    crate::grid::integrate(&sol.corrector)
}
