//! Matrix-free Q1 Galerkin discretization of `-div(A(y, ξ + ∇u)) = f` with
//! one-point quadrature.

use crate::constitutive::{PowerLaw, RegularizationPolicy};
use crate::grid::{remove_null_modes, Connectivity, Grid, Point, MAX_DIM};
use crate::microstructure::Phase;
use crate::solver::NonlinearSystem;

pub(crate) struct PowerLawSystem<'a> {
    grid: Grid,
    conn: &'a Connectivity,
    phases: &'a [Phase],
    laws: [PowerLaw; 2],
    shift: Point,
    load: Option<&'a [f64]>,
    reg: RegularizationPolicy,
    boundary: Option<Vec<bool>>,
    tangent: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
}

impl<'a> PowerLawSystem<'a> {
    pub fn new(
        grid: Grid,
        conn: &'a Connectivity,
        phases: &'a [Phase],
        laws: [PowerLaw; 2],
        reg: RegularizationPolicy,
    ) -> Self {
        let boundary = if grid.is_periodic() {
            None
        } else {
            Some(
                (0..grid.n_nodes())
                    .map(|a| grid.is_boundary_node(a))
                    .collect(),
            )
        };
        Self {
            grid,
            conn,
            phases,
            laws,
            shift: [0.0; MAX_DIM],
            load: None,
            reg,
            boundary,
            tangent: Vec::new(),
        }
    }

    /// Constant macroscopic gradient added to `∇u` in every cell.
    pub fn with_shift(mut self, shift: &[f64]) -> Self {
        self.shift[..shift.len()].copy_from_slice(shift);
        self
    }

    pub fn with_load(mut self, load: &'a [f64]) -> Self {
        self.load = Some(load);
        self
    }

    pub fn set_laws(&mut self, laws: [PowerLaw; 2]) {
        self.laws = laws;
    }

    #[inline]
    fn total_gradient(&self, cell: usize, u: &[f64]) -> Point {
        let mut g = self.conn.gradient(cell, u);
        for k in 0..self.grid.dim() {
            g[k] += self.shift[k];
        }
        g
    }
}

impl NonlinearSystem for PowerLawSystem<'_> {
    fn len(&self) -> usize {
        self.grid.n_nodes()
    }

    fn energy(&self, u: &[f64]) -> Option<f64> {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        let mut e = 0.0;
        for c in 0..self.conn.n_cells() {
            let g = self.total_gradient(c, u);
            e += self.laws[self.phases[c].index()].energy(&g[..d]);
        }
        e *= vol;
        if let Some(f) = self.load {
            e -= f.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        Some(e)
    }

    fn residual(&mut self, u: &[f64], out: &mut [f64]) {
        let d = self.grid.dim();
        let vol = self.grid.cell_volume();
        out.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..self.conn.n_cells() {
            let g = self.total_gradient(c, u);
            let flux = self.laws[self.phases[c].index()].flux(&g[..d]);
            self.conn.scatter(c, &flux, vol, out);
        }
        if let Some(f) = self.load {
            for (o, fa) in out.iter_mut().zip(f) {
                *o -= fa;
            }
        }
        self.project(out);
    }

    fn linearize(&mut self, u: &[f64]) {
        let d = self.grid.dim();
        let reg = self.reg;
        self.tangent = (0..self.conn.n_cells())
            .map(|c| {
                let g = self.total_gradient(c, u);
                self.laws[self.phases[c].index()].jacobian(&g[..d], &reg)
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
        if let Some(b) = &self.boundary {
            for (o, &fixed) in out.iter_mut().zip(b) {
                if fixed {
                    *o = 0.0;
                }
            }
        }
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
        if let Some(b) = &self.boundary {
            for (o, &fixed) in out.iter_mut().zip(b) {
                if fixed {
                    *o = 1.0;
                }
            }
        }
    }

    fn project(&self, v: &mut [f64]) {
        match &self.boundary {
            None => remove_null_modes(&self.grid, v),
            Some(b) => {
                for (x, &fixed) in v.iter_mut().zip(b) {
                    if fixed {
                        *x = 0.0;
                    }
                }
            }
        }
    }

    fn residual_norm(&self, r: &[f64]) -> f64 {
        scaled_norm(&self.grid, r)
    }
}

/// `‖r‖₂ · h^{1-d/2}`: the plain Euclidean norm in 2-D, a mesh-independent
/// proxy for the discrete dual norm of a nodal residual.
pub fn scaled_norm(grid: &Grid, r: &[f64]) -> f64 {
    let d = grid.dim() as f64;
    r.iter().map(|x| x * x).sum::<f64>().sqrt() * grid.h().powf(1.0 - 0.5 * d)
}

/// Nodal load vector `⟨f, φ_a⟩` for cell-center load values.
pub(crate) fn load_vector(grid: &Grid, conn: &Connectivity, cell_load: &[f64]) -> Vec<f64> {
    let vol = grid.cell_volume();
    let share = vol / conn.nodes_per_cell() as f64;
    let mut out = vec![0.0; grid.n_nodes()];
    for (c, &f) in cell_load.iter().enumerate() {
        for &a in conn.nodes(c) {
            out[a] += share * f;
        }
    }
    if !grid.is_periodic() {
        for (a, v) in out.iter_mut().enumerate() {
            if grid.is_boundary_node(a) {
                *v = 0.0;
            }
        }
    }
    out
}
