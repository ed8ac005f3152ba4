//! Uniform Cartesian grids with nodal multilinear (Q1) fields and
//! one-point (cell-center) quadrature.
//!
//! Node and cell indices are flattened with axis 0 fastest, so a 2-D field
//! is stored row by row along `y` with `x` running within a row.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported spatial dimension.
pub const MAX_DIM: usize = 3;

/// A point or small vector; only the first `dim` entries are meaningful.
pub type Point = [f64; MAX_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1, 2 or 3, got {0}")]
    Dimension(usize),
    #[error("grid needs at least 2 cells per axis, got {0}")]
    TooCoarse(usize),
    #[error("domain side must be positive and finite, got {0}")]
    Side(f64),
    #[error("operation requires a periodic grid")]
    NotPeriodic,
    #[error("field length {got} does not match the grid ({expected})")]
    Length { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Node `n` is identified with node `0` along every axis.
    Periodic,
    /// `n + 1` nodes per axis; boundary nodes carry homogeneous data.
    Dirichlet,
}

/// Uniform grid on the box `(0, side)^dim` with `n` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    side: f64,
    topology: Topology,
}

impl Grid {
    pub fn new(dim: usize, n: usize, side: f64, topology: Topology) -> Result<Self, GridError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GridError::Dimension(dim));
        }
        if n < 2 {
            return Err(GridError::TooCoarse(n));
        }
        if !(side.is_finite() && side > 0.0) {
            return Err(GridError::Side(side));
        }
        Ok(Self {
            dim,
            n,
            side,
            topology,
        })
    }

    /// Periodic grid on the 2-D unit cell `Y = (0,1)^2`.
    pub fn unit_cell(n: usize) -> Result<Self, GridError> {
        Self::new(2, n, 1.0, Topology::Periodic)
    }

    /// Dirichlet grid on the 2-D square `(0, side)^2`.
    pub fn dirichlet_square(n: usize, side: f64) -> Result<Self, GridError> {
        Self::new(2, n, side, Topology::Dirichlet)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn is_periodic(&self) -> bool {
        self.topology == Topology::Periodic
    }

    /// Mesh width `h = side / n`.
    pub fn h(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Nodes stored per axis (`n` periodic, `n + 1` Dirichlet).
    pub fn nodes_per_axis(&self) -> usize {
        match self.topology {
            Topology::Periodic => self.n,
            Topology::Dirichlet => self.n + 1,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis().pow(self.dim as u32)
    }

    pub fn n_cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Number of nodes of one cell, `2^dim`.
    pub fn nodes_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn cell_multi_index(&self, cell: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = cell;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn cell_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .take(self.dim)
            .rev()
            .fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn node_multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        let m = self.nodes_per_axis();
        let mut idx = [0; MAX_DIM];
        let mut rest = node;
        for slot in idx.iter_mut().take(self.dim) {
            *slot = rest % m;
            rest /= m;
        }
        idx
    }

    /// Flat node index; periodic grids wrap every component modulo `n`.
    pub fn node_index(&self, idx: &[usize]) -> usize {
        let m = self.nodes_per_axis();
        idx.iter().take(self.dim).rev().fold(0, |acc, &i| {
            let i = match self.topology {
                Topology::Periodic => i % self.n,
                Topology::Dirichlet => i,
            };
            acc * m + i
        })
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let idx = self.cell_multi_index(cell);
        let h = self.h();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            x[k] = (idx[k] as f64 + 0.5) * h;
        }
        x
    }

    pub fn node_coord(&self, node: usize) -> Point {
        let idx = self.node_multi_index(node);
        let h = self.h();
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            x[k] = idx[k] as f64 * h;
        }
        x
    }

    /// True for nodes on `∂Ω` of a Dirichlet grid; always false when periodic.
    pub fn is_boundary_node(&self, node: usize) -> bool {
        if self.is_periodic() {
            return false;
        }
        let idx = self.node_multi_index(node);
        idx.iter().take(self.dim).any(|&i| i == 0 || i == self.n)
    }

    /// Flat node index of local node `local` of `cell`; bit `k` of `local`
    /// is the offset along axis `k`.
    pub fn cell_node(&self, cell: usize, local: usize) -> usize {
        let mut idx = self.cell_multi_index(cell);
        for (k, slot) in idx.iter_mut().enumerate().take(self.dim) {
            *slot += (local >> k) & 1;
        }
        self.node_index(&idx)
    }

    /// Precomputed cell-to-node table and gradient weights.
    pub fn connectivity(&self) -> Connectivity {
        let npc = self.nodes_per_cell();
        let mut nodes = Vec::with_capacity(self.n_cells() * npc);
        for c in 0..self.n_cells() {
            for l in 0..npc {
                nodes.push(self.cell_node(c, l));
            }
        }
        let scale = 1.0 / (self.h() * (1 << (self.dim - 1)) as f64);
        let mut weights = [[0.0; MAX_DIM]; 1 << MAX_DIM];
        for (l, w) in weights.iter_mut().enumerate().take(npc) {
            for (k, wk) in w.iter_mut().enumerate().take(self.dim) {
                *wk = if (l >> k) & 1 == 1 { scale } else { -scale };
            }
        }
        Connectivity {
            dim: self.dim,
            npc,
            nodes,
            weights,
        }
    }
}

/// Cell-to-node incidence plus the cell-center gradient of each Q1 shape
/// function (identical for every cell of a uniform grid).
#[derive(Debug, Clone)]
pub struct Connectivity {
    dim: usize,
    npc: usize,
    nodes: Vec<usize>,
    weights: [[f64; MAX_DIM]; 1 << MAX_DIM],
}

impl Connectivity {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_cell(&self) -> usize {
        self.npc
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len() / self.npc
    }

    #[inline]
    pub fn nodes(&self, cell: usize) -> &[usize] {
        &self.nodes[cell * self.npc..(cell + 1) * self.npc]
    }

    #[inline]
    pub fn weight(&self, local: usize) -> &Point {
        &self.weights[local]
    }

    /// Cell-center gradient of the nodal vector `u` on `cell`.
    #[inline]
    pub fn gradient(&self, cell: usize, u: &[f64]) -> Point {
        let mut g = [0.0; MAX_DIM];
        for (l, &a) in self.nodes(cell).iter().enumerate() {
            let w = &self.weights[l];
            let ua = u[a];
            for k in 0..self.dim {
                g[k] += w[k] * ua;
            }
        }
        g
    }

    /// Adds `scale * (∇φ_a · v)` to `out[a]` for every node `a` of `cell`.
    #[inline]
    pub fn scatter(&self, cell: usize, v: &Point, scale: f64, out: &mut [f64]) {
        for (l, &a) in self.nodes(cell).iter().enumerate() {
            let w = &self.weights[l];
            let mut s = 0.0;
            for k in 0..self.dim {
                s += w[k] * v[k];
            }
            out[a] += scale * s;
        }
    }
}

/// Nodal scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_nodes() {
            return Err(GridError::Length {
                expected: grid.n_nodes(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.n_nodes()],
        }
    }

    /// Samples `f` at the stored nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Self {
        let values = (0..grid.n_nodes())
            .map(|a| f(&grid.node_coord(a)))
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value of the multilinear interpolant at each cell center.
    pub fn cell_averages(&self) -> Vec<f64> {
        let g = &self.grid;
        let npc = g.nodes_per_cell();
        let w = 1.0 / npc as f64;
        (0..g.n_cells())
            .map(|c| {
                (0..npc)
                    .map(|l| self.values[g.cell_node(c, l)])
                    .sum::<f64>()
                    * w
            })
            .collect()
    }
}

/// Cell-centered vector field, `dim` components per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        let expected = grid.n_cells() * grid.dim();
        if values.len() != expected {
            return Err(GridError::Length {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, v: &[f64]) -> Self {
        let d = grid.dim();
        let mut values = Vec::with_capacity(grid.n_cells() * d);
        for _ in 0..grid.n_cells() {
            values.extend_from_slice(&v[..d]);
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, cell: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[cell * d..(cell + 1) * d]
    }

    pub fn get_point(&self, cell: usize) -> Point {
        let mut p = [0.0; MAX_DIM];
        p[..self.grid.dim()].copy_from_slice(self.get(cell));
        p
    }

    /// One component as a cellwise scalar.
    pub fn component(&self, k: usize) -> Vec<f64> {
        let d = self.grid.dim();
        self.values.iter().skip(k).step_by(d).copied().collect()
    }

    /// Cell average `|Ω|⁻¹ ∫ v`.
    pub fn mean(&self) -> Vec<f64> {
        let g = &self.grid;
        let total = g.side().powi(g.dim() as i32);
        (0..g.dim())
            .map(|k| integrate_cells(g, &self.component(k)) / total)
            .collect()
    }
}

/// Cell-center gradient of the multilinear interpolant of `f`.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = *f.grid();
    let conn = g.connectivity();
    let d = g.dim();
    let mut values = Vec::with_capacity(g.n_cells() * d);
    for c in 0..g.n_cells() {
        let gr = conn.gradient(c, f.values());
        values.extend_from_slice(&gr[..d]);
    }
    VectorField { grid: g, values }
}

/// Midpoint quadrature of a cellwise scalar.
pub fn integrate_cells(grid: &Grid, cell_values: &[f64]) -> f64 {
    cell_values.iter().sum::<f64>() * grid.cell_volume()
}

/// Midpoint quadrature of a nodal field (values first averaged to cell centers).
pub fn integrate(f: &ScalarField) -> f64 {
    integrate_cells(f.grid(), &f.cell_averages())
}

/// Subtracts the cell-average mean. Periodic grids only.
pub fn project_mean_zero(f: &ScalarField) -> Result<ScalarField, GridError> {
    if !f.grid().is_periodic() {
        return Err(GridError::NotPeriodic);
    }
    let mut out = f.clone();
    remove_mean(out.values_mut());
    Ok(out)
}

/// On a periodic grid the cell-average mean equals the nodal mean, so this
/// is the same projection as [`project_mean_zero`] on raw nodal values.
pub(crate) fn remove_mean(values: &mut [f64]) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in values.iter_mut() {
        *v -= mean;
    }
}

/// Removes every nodal mode whose cell-center gradient vanishes identically
/// on a periodic grid: the constant plus, for axes with an even cell count,
/// the alternating parity modes `(-1)^{Σ_{k∈S} i_k}` with `|S| ≥ 2`.
///
/// These modes are invisible to one-point quadrature; dropping them makes the
/// nodal corrector canonical without changing any gradient.
pub(crate) fn remove_null_modes(grid: &Grid, values: &mut [f64]) {
    debug_assert!(grid.is_periodic());
    remove_mean(values);
    if grid.n() % 2 != 0 {
        return;
    }
    let d = grid.dim();
    let count = values.len() as f64;
    for subset in 1usize..(1 << d) {
        if subset.count_ones() < 2 {
            continue;
        }
        let sign = |a: usize| {
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
        };
        let coeff = values
            .iter()
            .enumerate()
            .map(|(a, v)| sign(a) * v)
            .sum::<f64>()
            / count;
        for (a, v) in values.iter_mut().enumerate() {
            *v -= coeff * sign(a);
        }
    }
}
