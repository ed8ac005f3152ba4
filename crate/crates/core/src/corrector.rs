//! Local averaging `M_ε`, the reconstructed corrector field `p(x/ε, M_ε∇u)`,
//! phase-wise corrector errors and gradient-moment bounds.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cell::{phase_moment, quantize, CellError, CellEvaluator, CellSolution};
use crate::domain::{EpsSolution, HomogSolution};
use crate::grid::{Grid, GridError, Point, VectorField, MAX_DIM};
use crate::microstructure::{MicroError, Microstructure, Phase};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrectorError {
    #[error("eps = {eps} is not a whole number of elements of size {h}")]
    Misaligned { eps: f64, h: f64 },
    #[error("sub-box {lower:?}..{upper:?} is not aligned with the elements or leaves the domain")]
    SubBox { lower: Vec<f64>, upper: Vec<f64> },
    #[error("moment exponent must be ≥ 2, got {0}")]
    Exponent(f64),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error(transparent)]
    Cell(#[from] CellError),
}

/// Piecewise-constant averages over the ε-cells lying inside the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedField {
    pub eps: f64,
    /// Whole ε-cells per axis.
    pub cells_per_axis: usize,
    /// Elements per ε-cell per axis.
    pub elements_per_cell: usize,
    /// One `dim`-vector per ε-cell, axis 0 fastest.
    pub values: Vec<f64>,
    /// Per element: `true` when it lies in a whole ε-cell.
    pub coverage: Vec<bool>,
    grid: Grid,
}

impl AveragedField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_axis.pow(self.grid.dim() as u32)
    }

    pub fn cell_value(&self, i: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[i * d..(i + 1) * d]
    }

    /// ε-cell containing element `e`, if it is a whole cell.
    pub fn cell_of(&self, e: usize) -> Option<usize> {
        if !self.coverage[e] {
            return None;
        }
        let idx = self.grid.cell_multi_index(e);
        let mut i = 0;
        for k in (0..self.grid.dim()).rev() {
            i = i * self.cells_per_axis + idx[k] / self.elements_per_cell;
        }
        Some(i)
    }

    /// Offset of element `e` inside its ε-cell, per axis, in elements.
    fn local_index(&self, e: usize) -> [usize; MAX_DIM] {
        let mut idx = self.grid.cell_multi_index(e);
        for v in idx.iter_mut().take(self.grid.dim()) {
            *v %= self.elements_per_cell;
        }
        idx
    }

    /// Element-wise field: the cell average on covered elements, zero elsewhere.
    pub fn expand(&self) -> VectorField {
        let d = self.grid.dim();
        let mut out = vec![0.0; self.grid.n_cells() * d];
        for e in 0..self.grid.n_cells() {
            if let Some(i) = self.cell_of(e) {
                out[e * d..(e + 1) * d].copy_from_slice(self.cell_value(i));
            }
        }
        VectorField::new(self.grid, out).expect("length matches grid")
    }
}

/// `M_ε φ`: average of `φ` over every ε-cell fully inside the domain.
pub fn local_average(phi: &VectorField, eps: f64) -> Result<AveragedField, CorrectorError> {
    let grid = *phi.grid();
    let d = grid.dim();
    let h = grid.h();
    let ratio = eps / h;
    let m = ratio.round();
    if !(eps > 0.0) || m < 1.0 || (ratio - m).abs() > 1e-9 * ratio {
        return Err(CorrectorError::Misaligned { eps, h });
    }
    let m = m as usize;
    let k = grid.n() / m;
    let total = k.pow(d as u32);
    let mut sums = vec![0.0; total * d];
    let mut coverage = vec![false; grid.n_cells()];
    for (e, cov) in coverage.iter_mut().enumerate() {
        let idx = grid.cell_multi_index(e);
        if (0..d).all(|a| idx[a] / m < k) {
            *cov = true;
            let mut i = 0;
            for a in (0..d).rev() {
                i = i * k + idx[a] / m;
            }
            for (s, v) in sums[i * d..(i + 1) * d].iter_mut().zip(phi.get(e)) {
                *s += v;
            }
        }
    }
    let per = m.pow(d as u32) as f64;
    sums.iter_mut().for_each(|s| *s /= per);
    Ok(AveragedField {
        eps,
        cells_per_axis: k,
        elements_per_cell: m,
        values: sums,
        coverage,
        grid,
    })
}

/// `(∫|φ|^p)^{1/p}` with one-point quadrature.
pub fn lp_norm(phi: &VectorField, p: f64) -> f64 {
    let vol = phi.grid().cell_volume();
    let s: f64 = (0..phi.grid().n_cells())
        .map(|c| norm(phi.get(c)).powf(p))
        .sum();
    (s * vol).powf(1.0 / p)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `‖M_ε φ‖_p ≤ ‖φ‖_p` up to round-off.
pub fn is_contraction(phi: &VectorField, avg: &AveragedField, p: f64) -> bool {
    let (a, b) = (lp_norm(&avg.expand(), p), lp_norm(phi, p));
    a <= b * (1.0 + 1e-12) + 1e-300
}

/// `p(x/ε, M_ε∇u(x))` sampled on the domain elements.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub field: VectorField,
    pub averaged: AveragedField,
    /// Cell solution used by each ε-cell.
    pub solutions: Vec<Arc<CellSolution>>,
    /// Distinct cell solves behind `solutions`.
    pub distinct: usize,
    /// Elements whose ε-problem phase differs from the phase of the
    /// unit-cell grid cell they are read from.
    pub phase_mismatch: usize,
}

/// Builds the corrector field of `homog_grad` at scale `eps`; element
/// centers read the unit-cell grid cell that contains them.
pub fn corrector_reconstruction(
    homog_grad: &VectorField,
    eval: &CellEvaluator,
    eps: f64,
) -> Result<Reconstruction, CorrectorError> {
    let averaged = local_average(homog_grad, eps)?;
    let grid = averaged.grid;
    let d = grid.dim();
    let n_cell = eval.grid.n();
    if averaged.elements_per_cell % n_cell != 0 && n_cell % averaged.elements_per_cell != 0 {
        return Err(CorrectorError::Misaligned { eps, h: grid.h() });
    }
    // distinct averages share one solve
    let mut keys: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    let mut xis: Vec<Vec<f64>> = Vec::new();
    let mut slot = Vec::with_capacity(averaged.n_cells());
    for i in 0..averaged.n_cells() {
        let xq = quantize(averaged.cell_value(i));
        let key: Vec<u64> = xq.iter().map(|x| x.to_bits()).collect();
        let next = xis.len();
        let s = *keys.entry(key).or_insert_with(|| {
            xis.push(xq.clone());
            next
        });
        slot.push(s);
    }
    let solved = eval.solve_many(&xis)?;
    let solutions: Vec<Arc<CellSolution>> = slot.iter().map(|&s| solved[s].clone()).collect();

    let cell_phases = eval.micro.cell_phases(&eval.grid);
    let eps_phases = eval.micro.rescaled_cell_phases(eps, &grid)?;
    let m = averaged.elements_per_cell;
    let mut values = vec![0.0; grid.n_cells() * d];
    let mut mismatch = 0;
    for e in 0..grid.n_cells() {
        let Some(i) = averaged.cell_of(e) else {
            continue;
        };
        let local = averaged.local_index(e);
        let mut cidx = [0usize; MAX_DIM];
        for k in 0..d {
            // element center (local + 1/2)/m in cell coordinates
            cidx[k] = ((2 * local[k] + 1) * n_cell) / (2 * m);
        }
        let c = eval.grid.cell_index(&cidx[..d]);
        values[e * d..(e + 1) * d].copy_from_slice(solutions[i].p_field.get(c));
        if cell_phases[c] != eps_phases[e] {
            mismatch += 1;
        }
    }
    Ok(Reconstruction {
        field: VectorField::new(grid, values)?,
        averaged,
        solutions,
        distinct: xis.len(),
        phase_mismatch: mismatch,
    })
}

/// Phase-wise corrector error at one ε.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectorErrorRecord {
    pub eps: f64,
    /// `∫χ₁^ε |p_ε(x, M_ε∇u) - ∇u_ε|^{p₁}`.
    pub e1: f64,
    /// Same for phase two with `p₂`.
    pub e2: f64,
    /// `∫|M_ε∇u - ∇u|^{p₁}`.
    pub aux1: f64,
    /// `∫|M_ε∇u - ∇u|^{p₂}`.
    pub aux2: f64,
    pub distinct_cell_solves: usize,
    /// Fraction of elements whose phase differs from the cell-grid lookup.
    pub phase_mismatch: f64,
}

/// Corrector error of an ε-gradient field against a reconstruction.
pub fn corrector_error_fields(
    grad_eps: &VectorField,
    recon: &Reconstruction,
    homog_grad: &VectorField,
    law: &crate::constitutive::FluxLaw,
    micro: &Microstructure,
) -> Result<CorrectorErrorRecord, CorrectorError> {
    let grid = *grad_eps.grid();
    if recon.field.grid() != &grid || homog_grad.grid() != &grid {
        return Err(CorrectorError::GridMismatch);
    }
    let eps = recon.averaged.eps;
    let phases = micro.rescaled_cell_phases(eps, &grid)?;
    let avg = recon.averaged.expand();
    let vol = grid.cell_volume();
    let (p1, p2) = (law.p1(), law.p2());
    let (mut e1, mut e2, mut a1, mut a2) = (0.0, 0.0, 0.0, 0.0);
    for (e, &ph) in phases.iter().enumerate() {
        // outside whole ε-cells the reconstruction is zero
        let dist = diff_norm(recon.field.get(e), grad_eps.get(e));
        match ph {
            Phase::One => e1 += dist.powf(p1),
            Phase::Two => e2 += dist.powf(p2),
        }
        let m = diff_norm(avg.get(e), homog_grad.get(e));
        a1 += m.powf(p1);
        a2 += m.powf(p2);
    }
    Ok(CorrectorErrorRecord {
        eps,
        e1: e1 * vol,
        e2: e2 * vol,
        aux1: a1 * vol,
        aux2: a2 * vol,
        distinct_cell_solves: recon.distinct,
        phase_mismatch: recon.phase_mismatch as f64 / grid.n_cells() as f64,
    })
}

/// Compares `∇u_ε` with `p(x/ε, M_ε∇u)` phase by phase.
pub fn corrector_error(
    eps_sol: &EpsSolution,
    homog: &HomogSolution,
    eval: &CellEvaluator,
) -> Result<CorrectorErrorRecord, CorrectorError> {
    let homog_grad = homog.gradient();
    let recon = corrector_reconstruction(&homog_grad, eval, eps_sol.eps)?;
    corrector_error_fields(
        &eps_sol.gradient(),
        &recon,
        &homog_grad,
        &eval.law,
        &eval.micro,
    )
}

/// Axis-aligned box inside the domain, aligned with the elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SubBox {
    /// `[1/4, 3/4]^d` of the unit box.
    pub fn central_quarter(dim: usize) -> Self {
        Self {
            lower: vec![0.25; dim],
            upper: vec![0.75; dim],
        }
    }

    /// Elements whose centers lie in the box.
    pub fn elements(&self, grid: &Grid) -> Result<Vec<usize>, CorrectorError> {
        let d = grid.dim();
        let h = grid.h();
        let bad = || CorrectorError::SubBox {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
        };
        if self.lower.len() != d || self.upper.len() != d {
            return Err(bad());
        }
        for k in 0..d {
            let (a, b) = (self.lower[k] / h, self.upper[k] / h);
            let aligned = (a - a.round()).abs() < 1e-9 && (b - b.round()).abs() < 1e-9;
            if !aligned || self.lower[k] < 0.0 || self.upper[k] > grid.side() + 1e-12 || a >= b {
                return Err(bad());
            }
        }
        Ok((0..grid.n_cells())
            .filter(|&c| {
                let x = grid.cell_center(c);
                (0..d).all(|k| x[k] > self.lower[k] && x[k] < self.upper[k])
            })
            .collect())
    }
}

/// Both sides of the moment inequality for one exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub q: f64,
    pub sub_box: SubBox,
    /// `∫_D∫_Y χᵢ(y)|p(y,∇u(x))|^q dy dx`, per phase.
    pub lower_bound: [f64; 2],
    /// `(ε, ∫_D χᵢ^ε|∇u_ε|^q)` per computed ε.
    pub empirical: Vec<(f64, [f64; 2])>,
}

fn check_q(q: f64) -> Result<(), CorrectorError> {
    if q >= 2.0 && q.is_finite() {
        Ok(())
    } else {
        Err(CorrectorError::Exponent(q))
    }
}

/// Corrector moments integrated over `D`, from cell solves at `∇u(x)`.
pub fn moment_lower_bound(
    homog_grad: &VectorField,
    eval: &CellEvaluator,
    q: f64,
    sub_box: &SubBox,
) -> Result<[f64; 2], CorrectorError> {
    check_q(q)?;
    let grid = homog_grad.grid();
    let elements = sub_box.elements(grid)?;
    let xis: Vec<Vec<f64>> = elements
        .iter()
        .map(|&e| homog_grad.get(e).to_vec())
        .collect();
    let sols = eval.solve_many(&xis)?;
    let mut out = [0.0; 2];
    for s in &sols {
        for ph in Phase::BOTH {
            out[ph.index()] += phase_moment(s, ph, q);
        }
    }
    Ok(out.map(|v| v * grid.cell_volume()))
}

/// Lower bounds for several exponents from one pass of cell solves.
pub fn moment_lower_bounds(
    homog_grad: &VectorField,
    eval: &CellEvaluator,
    qs: &[f64],
    sub_box: &SubBox,
) -> Result<Vec<[f64; 2]>, CorrectorError> {
    qs.iter()
        .map(|&q| moment_lower_bound(homog_grad, eval, q, sub_box))
        .collect()
}

/// `∫_D χᵢ^ε|∇u_ε|^q`, per phase.
pub fn empirical_moment(
    eps_sol: &EpsSolution,
    micro: &Microstructure,
    q: f64,
    sub_box: &SubBox,
) -> Result<[f64; 2], CorrectorError> {
    check_q(q)?;
    let grad = eps_sol.gradient();
    let grid = grad.grid();
    let phases = micro.rescaled_cell_phases(eps_sol.eps, grid)?;
    let mut out = [0.0; 2];
    for e in sub_box.elements(grid)? {
        out[phases[e].index()] += norm(grad.get(e)).powf(q);
    }
    Ok(out.map(|v| v * grid.cell_volume()))
}

/// Integral of the reconstruction over each whole ε-cell divided by the
/// cell volume, for the mean-consistency check.
pub fn reconstruction_cell_means(recon: &Reconstruction) -> Vec<Point> {
    let avg = &recon.averaged;
    let d = avg.grid.dim();
    let mut sums = vec![[0.0; MAX_DIM]; avg.n_cells()];
    let mut counts = vec![0usize; avg.n_cells()];
    for e in 0..avg.grid.n_cells() {
        if let Some(i) = avg.cell_of(e) {
            let v = recon.field.get(e);
            for k in 0..d {
                sums[i][k] += v[k];
            }
            counts[i] += 1;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut().take(d) {
            *v /= c as f64;
        }
    }
    sums
}
