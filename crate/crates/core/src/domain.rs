//! Dirichlet problems on a box: the oscillating ε-problem and the
//! homogenized problem driven by a tabulated `b`.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{load_vector, scaled_norm, PowerLawSystem};
use crate::cell::{CellError, CellEvaluator};
use crate::constitutive::FluxLaw;
use crate::grid::{
    gradient, Connectivity, Grid, GridError, Point, ScalarField, VectorField, MAX_DIM,
};
use crate::microstructure::{MicroError, Microstructure, Phase};
use crate::solver::{newton, ConfigError, NonlinearSystem, SolveError, SolverConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("domain solve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("domain grid needs N ≥ 4, got {0}")]
    TooCoarse(usize),
    #[error("domain problems need a dirichlet grid")]
    NotDirichlet,
    #[error("load field lives on a different grid")]
    LoadGrid,
    #[error(
        "eps = {eps} is not resolved: need side/eps = k integer and k·{cell_n} dividing N = {n}"
    )]
    ResolutionMismatch { eps: f64, n: usize, cell_n: usize },
    #[error("gradient component {value:.4} left the table cap ±{cap}")]
    TableRangeExceeded { value: f64, cap: f64 },
}

/// Right-hand side `⟨f, w⟩ = ∫ f w`.
#[derive(Debug, Clone, PartialEq)]
pub enum Load {
    Constant(f64),
    Nodal(ScalarField),
}

impl Load {
    fn cell_values(&self, grid: &Grid) -> Result<Vec<f64>, DomainError> {
        match self {
            Load::Constant(c) => Ok(vec![*c; grid.n_cells()]),
            Load::Nodal(f) if f.grid() == grid => Ok(f.cell_averages()),
            Load::Nodal(_) => Err(DomainError::LoadGrid),
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            Load::Constant(c) => *c == 0.0,
            Load::Nodal(f) => f.values().iter().all(|&v| v == 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainProblem {
    pub grid: Grid,
    pub load: Load,
    /// Elements per unit-cell grid cell must divide evenly; `1` only asks
    /// that ε-cells align with elements.
    pub cell_resolution: usize,
}

impl DomainProblem {
    pub fn new(grid: Grid, load: Load) -> Result<Self, DomainError> {
        if grid.is_periodic() {
            return Err(DomainError::NotDirichlet);
        }
        if grid.n() < 4 {
            return Err(DomainError::TooCoarse(grid.n()));
        }
        load.cell_values(&grid)?;
        Ok(Self {
            grid,
            load,
            cell_resolution: 1,
        })
    }

    /// `(0,1)^2` with `n` elements per axis.
    pub fn unit_square(n: usize, load: Load) -> Result<Self, DomainError> {
        Self::new(Grid::dirichlet_square(n, 1.0)?, load)
    }

    pub fn with_cell_resolution(mut self, cell_n: usize) -> Self {
        self.cell_resolution = cell_n.max(1);
        self
    }

    /// Number of ε-cells per axis, if ε tiles the box and the unit-cell grid
    /// is resolved.
    pub fn eps_cells(&self, eps: f64) -> Result<usize, DomainError> {
        let mismatch = DomainError::ResolutionMismatch {
            eps,
            n: self.grid.n(),
            cell_n: self.cell_resolution,
        };
        if !(eps > 0.0) {
            return Err(mismatch);
        }
        let ratio = self.grid.side() / eps;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
            return Err(mismatch);
        }
        let k = k as usize;
        if self.grid.n() % (k * self.cell_resolution) != 0 {
            return Err(mismatch);
        }
        Ok(k)
    }
}

/// Converged ε-problem.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsSolution {
    pub eps: f64,
    pub u: ScalarField,
    /// `(∫χ₁^ε|∇u_ε|^{p₁}, ∫χ₂^ε|∇u_ε|^{p₂})`.
    pub phase_norms: [f64; 2],
    pub residual_norm: f64,
    pub iterations: usize,
}

impl EpsSolution {
    pub fn gradient(&self) -> VectorField {
        gradient(&self.u)
    }
}

fn phase_norms(law: &FluxLaw, phases: &[Phase], grad: &VectorField) -> [f64; 2] {
    let vol = grad.grid().cell_volume();
    let mut out = [0.0; 2];
    for (c, &ph) in phases.iter().enumerate() {
        let g = grad.get(c);
        let m = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        out[ph.index()] += m.powf(law.exponent(ph));
    }
    out.map(|v| v * vol)
}

fn check_cfg(problem: &DomainProblem, cfg: &SolverConfig) -> Result<(), DomainError> {
    cfg.validate()?;
    if problem.grid.is_periodic() {
        return Err(DomainError::NotDirichlet);
    }
    Ok(())
}

/// Solves `-div(A(x/ε, ∇u_ε)) = f` with zero boundary values.
pub fn solve_dirichlet_eps(
    problem: &DomainProblem,
    law: &FluxLaw,
    micro: &Microstructure,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<EpsSolution, DomainError> {
    check_cfg(problem, cfg)?;
    micro.validate()?;
    micro.validate_dim(problem.grid.dim())?;
    problem.eps_cells(eps)?;
    let grid = problem.grid;
    let phases = micro.rescaled_cell_phases(eps, &grid)?;
    let conn = grid.connectivity();
    let mut u = vec![0.0; grid.n_nodes()];
    let (mut iterations, mut residual) = (0, 0.0);
    if !problem.load.is_zero() {
        let load = load_vector(&grid, &conn, &problem.load.cell_values(&grid)?);
        let mut sys = PowerLawSystem::new(
            grid,
            &conn,
            &phases,
            [law.phase(Phase::One), law.phase(Phase::Two)],
            cfg.regularization(),
        )
        .with_load(&load);
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
            let t = newton(&mut sys, &mut u, tol, cfg)?;
            iterations += t.iterations;
            residual = t.residual;
        }
    }
    let u = ScalarField::new(grid, u)?;
    let phase_norms = phase_norms(law, &phases, &gradient(&u));
    Ok(EpsSolution {
        eps,
        u,
        phase_norms,
        residual_norm: residual,
        iterations,
    })
}

/// How the homogenized flux is tabulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TablePolicy {
    /// Lattice spacing in each component of `ξ`.
    pub spacing: f64,
    /// Largest admissible `|ξ_k|`.
    pub cap: f64,
    /// Spacing halvings allowed when the outer Newton stalls.
    pub max_refinements: usize,
    /// Exact cell solves used to measure the interpolation error.
    pub held_out: usize,
}

impl Default for TablePolicy {
    fn default() -> Self {
        Self {
            spacing: 0.05,
            cap: 50.0,
            max_refinements: 2,
            held_out: 16,
        }
    }
}

/// Multilinear interpolant of `b` on the lattice `spacing · ℤ^d`, filled on demand.
pub struct BTable<'a> {
    eval: &'a CellEvaluator,
    dim: usize,
    spacing: f64,
    cap: f64,
    nodes: HashMap<Vec<i64>, Vec<f64>>,
}

impl<'a> BTable<'a> {
    pub fn new(eval: &'a CellEvaluator, spacing: f64, cap: f64) -> Self {
        Self {
            eval,
            dim: eval.grid.dim(),
            spacing,
            cap,
            nodes: HashMap::new(),
        }
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tabulated range per axis, `(min, max)` of the lattice nodes.
    pub fn range(&self) -> Vec<(f64, f64)> {
        (0..self.dim)
            .map(|k| {
                let (lo, hi) = self.nodes.keys().fold((i64::MAX, i64::MIN), |(lo, hi), i| {
                    (lo.min(i[k]), hi.max(i[k]))
                });
                if lo > hi {
                    (0.0, 0.0)
                } else {
                    (lo as f64 * self.spacing, hi as f64 * self.spacing)
                }
            })
            .collect()
    }

    fn base(&self, xi: &[f64]) -> (Vec<i64>, Vec<f64>) {
        let mut base = Vec::with_capacity(self.dim);
        let mut frac = Vec::with_capacity(self.dim);
        for &x in &xi[..self.dim] {
            let s = x / self.spacing;
            let f = s.floor();
            base.push(f as i64);
            frac.push(s - f);
        }
        (base, frac)
    }

    fn corner(base: &[i64], bits: usize) -> Vec<i64> {
        base.iter()
            .enumerate()
            .map(|(k, &b)| b + ((bits >> k) & 1) as i64)
            .collect()
    }

    /// Makes sure every lattice node needed to interpolate at `points` (and
    /// at their ±spacing stencils when `stencil`) is solved.
    pub fn ensure(&mut self, points: &[Point], stencil: bool) -> Result<(), DomainError> {
        let d = self.dim;
        let mut missing: BTreeSet<Vec<i64>> = BTreeSet::new();
        for p in points {
            for &x in &p[..d] {
                if !(x.abs() <= self.cap) {
                    return Err(DomainError::TableRangeExceeded {
                        value: x,
                        cap: self.cap,
                    });
                }
            }
            let (base, _) = self.base(p);
            let lo: Vec<i64> = base.iter().map(|b| b - stencil as i64).collect();
            let width: usize = if stencil { 4 } else { 2 };
            let total = width.pow(d as u32);
            for m in 0..total {
                let mut idx = lo.clone();
                let mut rest = m;
                for i in idx.iter_mut() {
                    *i += (rest % width) as i64;
                    rest /= width;
                }
                if !self.nodes.contains_key(&idx) {
                    missing.insert(idx);
                }
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let keys: Vec<Vec<i64>> = missing.into_iter().collect();
        let xis: Vec<Vec<f64>> = keys
            .iter()
            .map(|i| i.iter().map(|&v| v as f64 * self.spacing).collect())
            .collect();
        let sols = self.eval.solve_many(&xis)?;
        for (k, s) in keys.into_iter().zip(sols) {
            self.nodes.insert(k, s.b.clone());
        }
        Ok(())
    }

    /// Interpolated `b(ξ)`; the corners must have been [`ensure`](Self::ensure)d.
    pub fn value(&self, xi: &[f64]) -> Point {
        let d = self.dim;
        let (base, frac) = self.base(xi);
        let mut out = [0.0; MAX_DIM];
        for bits in 0..(1usize << d) {
            let w: f64 = (0..d)
                .map(|k| {
                    if (bits >> k) & 1 == 1 {
                        frac[k]
                    } else {
                        1.0 - frac[k]
                    }
                })
                .product();
            if w == 0.0 {
                continue;
            }
            let b = &self.nodes[&Self::corner(&base, bits)];
            for k in 0..d {
                out[k] += w * b[k];
            }
        }
        out
    }

    /// Symmetrized central difference of the interpolant with step = spacing.
    pub fn jacobian(&self, xi: &[f64]) -> [[f64; MAX_DIM]; MAX_DIM] {
        let d = self.dim;
        let h = self.spacing;
        let mut j = [[0.0; MAX_DIM]; MAX_DIM];
        for c in 0..d {
            let mut a = [0.0; MAX_DIM];
            let mut b = [0.0; MAX_DIM];
            a[..d].copy_from_slice(&xi[..d]);
            b[..d].copy_from_slice(&xi[..d]);
            a[c] += h;
            b[c] -= h;
            let (fa, fb) = (self.value(&a), self.value(&b));
            for r in 0..d {
                j[r][c] = (fa[r] - fb[r]) / (2.0 * h);
            }
        }
        for r in 0..d {
            for c in r + 1..d {
                let s = 0.5 * (j[r][c] + j[c][r]);
                j[r][c] = s;
                j[c][r] = s;
            }
        }
        j
    }
}

struct HomogSystem<'t, 'a> {
    grid: Grid,
    conn: &'a Connectivity,
    table: &'t mut BTable<'a>,
    load: &'a [f64],
    boundary: Vec<bool>,
    tangent: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
    failure: Option<DomainError>,
}

impl HomogSystem<'_, '_> {
    fn gradients(&self, u: &[f64]) -> Vec<Point> {
        (0..self.grid.n_cells())
            .map(|c| self.conn.gradient(c, u))
            .collect()
    }
}

impl NonlinearSystem for HomogSystem<'_, '_> {
    fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    fn energy(&self, _u: &[f64]) -> Option<f64> {
        None
    }

    fn residual(&mut self, u: &[f64], out: &mut [f64]) {
        let grads = self.gradients(u);
        if let Err(e) = self.table.ensure(&grads, false) {
            self.failure = Some(e);
            out.iter_mut().for_each(|v| *v = f64::NAN);
            return;
        }
        let vol = self.grid.cell_volume();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (c, g) in grads.iter().enumerate() {
            let f = self.table.value(g);
            self.conn.scatter(c, &f, vol, out);
        }
        for (o, f) in out.iter_mut().zip(self.load) {
            *o -= f;
        }
        self.project(out);
    }

    fn linearize(&mut self, u: &[f64]) {
        let grads = self.gradients(u);
        if let Err(e) = self.table.ensure(&grads, true) {
            self.failure = Some(e);
        }
        self.tangent = grads
            .iter()
            .map(|g| {
                // a zero tangent makes the inner solve stop; the recorded
                // failure is reported instead
                if self.failure.is_some() {
                    [[0.0; MAX_DIM]; MAX_DIM]
                } else {
                    self.table.jacobian(g)
                }
            })
            .collect();
    }

    fn apply_tangent(&self, v: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (c, j) in self.tangent.iter().enumerate() {
            let g = self.conn.gradient(c, v);
            let mut t = [0.0; MAX_DIM];
            for r in 0..d {
                for k in 0..d {
                    t[r] += j[r][k] * g[k];
                }
            }
            self.conn.scatter(c, &t, vol, out);
        }
        self.project(out);
    }

    fn tangent_diagonal(&self, out: &mut [f64]) {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (c, j) in self.tangent.iter().enumerate() {
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
        for (o, &b) in out.iter_mut().zip(&self.boundary) {
            if b {
                *o = 1.0;
            }
        }
    }

    fn project(&self, v: &mut [f64]) {
        for (x, &b) in v.iter_mut().zip(&self.boundary) {
            if b {
                *x = 0.0;
            }
        }
    }

    fn residual_norm(&self, r: &[f64]) -> f64 {
        scaled_norm(&self.grid, r)
    }
}

/// Accuracy and extent of the `b` table after a homogenized solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TableDiagnostics {
    pub spacing: f64,
    pub range: Vec<(f64, f64)>,
    pub nodes: usize,
    pub refinements: usize,
    /// `max |b_table(ξ) - b(ξ)|` over the held-out gradients.
    pub interpolation_error: f64,
    /// Same, divided by `max |b(ξ)|` over the held-out set.
    pub relative_interpolation_error: f64,
    pub held_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogSolution {
    pub u: ScalarField,
    pub table: TableDiagnostics,
    pub residual_norm: f64,
    pub iterations: usize,
    /// `∫_Ω |∇u|^{p₂}`.
    pub integrability: f64,
}

impl HomogSolution {
    pub fn gradient(&self) -> VectorField {
        gradient(&self.u)
    }
}

/// Solves `-div(b(∇u)) = f` with zero boundary values, `b` interpolated
/// from cell solves of `eval`.
pub fn solve_homogenized(
    problem: &DomainProblem,
    eval: &CellEvaluator,
    policy: &TablePolicy,
    cfg: &SolverConfig,
) -> Result<HomogSolution, DomainError> {
    check_cfg(problem, cfg)?;
    let grid = problem.grid;
    if eval.grid.dim() != grid.dim() {
        return Err(DomainError::Micro(MicroError::Axis {
            axis: eval.grid.dim(),
            dim: grid.dim(),
        }));
    }
    let conn = grid.connectivity();
    let load = load_vector(&grid, &conn, &problem.load.cell_values(&grid)?);
    let boundary: Vec<bool> = (0..grid.n_nodes())
        .map(|a| grid.is_boundary_node(a))
        .collect();
    let mut u = vec![0.0; grid.n_nodes()];
    let mut spacing = policy.spacing;
    let mut refinements = 0;
    let mut iterations = 0;
    let mut residual = 0.0;
    let mut table = BTable::new(eval, spacing, policy.cap);

    if !problem.load.is_zero() {
        loop {
            let mut sys = HomogSystem {
                grid,
                conn: &conn,
                table: &mut table,
                load: &load,
                boundary: boundary.clone(),
                tangent: Vec::new(),
                failure: None,
            };
            match newton(&mut sys, &mut u, cfg.tol, cfg) {
                Ok(t) => {
                    iterations += t.iterations;
                    residual = t.residual;
                    break;
                }
                Err(SolveError::NonConvergence {
                    iterations: its,
                    best,
                    residual,
                }) => {
                    iterations += its;
                    let failure = sys.failure.take();
                    if refinements >= policy.max_refinements {
                        return Err(failure.unwrap_or(
                            SolveError::NonConvergence {
                                iterations,
                                residual,
                                best,
                            }
                            .into(),
                        ));
                    }
                    // the stall is attributed to the table resolution
                    refinements += 1;
                    spacing *= 0.5;
                    table = BTable::new(eval, spacing, policy.cap);
                    u = best;
                }
                Err(e) => return Err(sys.failure.take().unwrap_or(e.into())),
            }
        }
    }

    let u = ScalarField::new(grid, u)?;
    let grad = gradient(&u);
    let diagnostics = held_out_error(&mut table, &grad, policy.held_out, refinements)?;
    let integrability = integrability_of(&grad, eval.law.p2());
    Ok(HomogSolution {
        u,
        table: diagnostics,
        residual_norm: residual,
        iterations,
        integrability,
    })
}

fn held_out_error(
    table: &mut BTable,
    grad: &VectorField,
    count: usize,
    refinements: usize,
) -> Result<TableDiagnostics, DomainError> {
    let n = grad.grid().n_cells();
    let stride = (n / count.max(1)).max(1);
    // an odd offset keeps the samples off the symmetry lines of the box
    let cells: Vec<usize> = (0..count.min(n))
        .map(|i| (i * stride + stride / 2) % n)
        .collect();
    let xis: Vec<Vec<f64>> = cells.iter().map(|&c| grad.get(c).to_vec()).collect();
    let points: Vec<Point> = cells.iter().map(|&c| grad.get_point(c)).collect();
    table.ensure(&points, false)?;
    let exact = table.eval.solve_many(&xis)?;
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for (xi, sol) in xis.iter().zip(&exact) {
        let approx = table.value(xi);
        for k in 0..xi.len() {
            err = err.max((approx[k] - sol.b[k]).abs());
            scale = scale.max(sol.b[k].abs());
        }
    }
    Ok(TableDiagnostics {
        spacing: table.spacing,
        range: table.range(),
        nodes: table.len(),
        refinements,
        interpolation_error: err,
        relative_interpolation_error: if scale > 0.0 { err / scale } else { 0.0 },
        held_out: cells.len(),
    })
}

fn integrability_of(grad: &VectorField, p: f64) -> f64 {
    let vol = grad.grid().cell_volume();
    (0..grad.grid().n_cells())
        .map(|c| {
            grad.get(c)
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .powf(p)
        })
        .sum::<f64>()
        * vol
}

/// `∫_Ω |∇u|^{p₂}` of a homogenized solution.
pub fn integrability_report(h: &HomogSolution, law: &FluxLaw) -> f64 {
    integrability_of(&h.gradient(), law.p2())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriRow {
    pub eps: f64,
    pub norm1: f64,
    pub norm2: f64,
    pub residual_norm: f64,
}

impl AprioriRow {
    pub fn total(&self) -> f64 {
        self.norm1 + self.norm2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AprioriTable {
    pub rows: Vec<AprioriRow>,
    pub max: f64,
    pub min: f64,
}

impl AprioriTable {
    /// `max/min` of the summed norms; `1` when every total is zero.
    pub fn ratio(&self) -> f64 {
        if self.max == 0.0 {
            1.0
        } else {
            self.max / self.min
        }
    }
}

/// Phase-wise gradient norms per ε, copied from the solutions.
pub fn apriori_report(solutions: &[EpsSolution]) -> AprioriTable {
    let rows: Vec<AprioriRow> = solutions
        .iter()
        .map(|s| AprioriRow {
            eps: s.eps,
            norm1: s.phase_norms[0],
            norm2: s.phase_norms[1],
            residual_norm: s.residual_norm,
        })
        .collect();
    let max = rows
        .iter()
        .map(AprioriRow::total)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = rows
        .iter()
        .map(AprioriRow::total)
        .fold(f64::INFINITY, f64::min);
    AprioriTable { rows, max, min }
}

/// Node coordinates and values, one node per line.
pub fn write_field_csv(field: &ScalarField, mut w: impl Write) -> io::Result<()> {
    let g = field.grid();
    let d = g.dim();
    let axes = ["x", "y", "z"];
    writeln!(w, "{},value", axes[..d].join(","))?;
    for (a, v) in field.values().iter().enumerate() {
        let x = g.node_coord(a);
        for xk in &x[..d] {
            write!(w, "{xk},")?;
        }
        writeln!(w, "{v:e}")?;
    }
    Ok(())
}
