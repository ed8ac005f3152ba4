//! Two-phase unit-cell geometries and their ε-rescalings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MicroError {
    #[error("layer bounds must satisfy 0 < lower < upper < 1, got ({0}, {1})")]
    LayerBounds(f64, f64),
    #[error("inclusion radius must be positive, got {0}")]
    Radius(f64),
    #[error("closed inclusion must lie strictly inside the unit cell")]
    InclusionTouchesBoundary,
    #[error("layer normal axis {axis} out of range for dimension {dim}")]
    Axis { axis: usize, dim: usize },
    #[error("scale must be positive, got {0}")]
    Scale(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    /// 0 for phase one, 1 for phase two.
    pub fn index(self) -> usize {
        match self {
            Phase::One => 0,
            Phase::Two => 1,
        }
    }

    pub const BOTH: [Phase; 2] = [Phase::One, Phase::Two];
}

/// Where phase one sits inside `Y = (0,1)^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Microstructure {
    /// Phase one occupies the slab `lower ≤ y[axis] < upper` (axis is 0-based).
    Layered { axis: usize, lower: f64, upper: f64 },
    /// Phase one occupies the open ball `|y - center| < radius`.
    Dispersed { center: Vec<f64>, radius: f64 },
    /// Single-phase control case, `χ₁ ≡ 1`.
    Homogeneous,
}

impl Microstructure {
    pub fn layered(axis: usize, lower: f64, upper: f64) -> Result<Self, MicroError> {
        let m = Microstructure::Layered { axis, lower, upper };
        m.validate()?;
        Ok(m)
    }

    pub fn dispersed(center: &[f64], radius: f64) -> Result<Self, MicroError> {
        let m = Microstructure::Dispersed {
            center: center.to_vec(),
            radius,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), MicroError> {
        match self {
            Microstructure::Layered { lower, upper, .. } => {
                if !(0.0 < *lower && lower < upper && *upper < 1.0) {
                    return Err(MicroError::LayerBounds(*lower, *upper));
                }
            }
            Microstructure::Dispersed { center, radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(MicroError::Radius(*radius));
                }
                if center
                    .iter()
                    .any(|&c| c - radius <= 0.0 || c + radius >= 1.0)
                {
                    return Err(MicroError::InclusionTouchesBoundary);
                }
            }
            Microstructure::Homogeneous => {}
        }
        Ok(())
    }

    /// Checks that the geometry makes sense in `dim` dimensions.
    pub fn validate_dim(&self, dim: usize) -> Result<(), MicroError> {
        match self {
            Microstructure::Layered { axis, .. } if *axis >= dim => {
                Err(MicroError::Axis { axis: *axis, dim })
            }
            Microstructure::Dispersed { center, .. } if center.len() != dim => {
                Err(MicroError::Axis {
                    axis: center.len(),
                    dim,
                })
            }
            _ => Ok(()),
        }
    }

    pub fn is_layered(&self) -> bool {
        matches!(self, Microstructure::Layered { .. })
    }

    /// Phase at `y`, extended 1-periodically along every axis.
    pub fn indicator(&self, y: &[f64]) -> Phase {
        let wrap = |t: f64| t.rem_euclid(1.0);
        let inside = match self {
            Microstructure::Layered { axis, lower, upper } => {
                let t = wrap(y[*axis]);
                *lower <= t && t < *upper
            }
            Microstructure::Dispersed { center, radius } => {
                let r2: f64 = center
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (wrap(y[k]) - c).powi(2))
                    .sum();
                r2 < radius * radius
            }
            Microstructure::Homogeneous => true,
        };
        if inside {
            Phase::One
        } else {
            Phase::Two
        }
    }

    /// `χ(x/ε)`.
    pub fn rescaled_indicator(&self, eps: f64, x: &[f64]) -> Result<Phase, MicroError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(MicroError::Scale(eps));
        }
        let y: Vec<f64> = x.iter().map(|&t| t / eps).collect();
        Ok(self.indicator(&y))
    }

    /// Phase of every cell of a grid on `Y`, sampled at cell centers.
    pub fn cell_phases(&self, grid: &Grid) -> Vec<Phase> {
        (0..grid.n_cells())
            .map(|c| self.indicator(&grid.cell_center(c)[..grid.dim()]))
            .collect()
    }

    /// Phase of every cell of a domain grid for the ε-periodic medium.
    pub fn rescaled_cell_phases(&self, eps: f64, grid: &Grid) -> Result<Vec<Phase>, MicroError> {
        (0..grid.n_cells())
            .map(|c| self.rescaled_indicator(eps, &grid.cell_center(c)[..grid.dim()]))
            .collect()
    }

    /// `(θ₁, θ₂)` from cell-center sampling on `grid`; `θ₁ + θ₂ = 1`.
    pub fn volume_fractions(&self, grid: &Grid) -> (f64, f64) {
        let ones = self
            .cell_phases(grid)
            .iter()
            .filter(|&&p| p == Phase::One)
            .count();
        let theta1 = ones as f64 / grid.n_cells() as f64;
        (theta1, 1.0 - theta1)
    }

    /// Short label used in reports and file names.
    pub fn label(&self) -> String {
        match self {
            Microstructure::Layered { axis, lower, upper } => {
                format!("layered(axis={axis},{lower},{upper})")
            }
            Microstructure::Dispersed { center, radius } => {
                let c: Vec<String> = center.iter().map(|v| v.to_string()).collect();
                format!("dispersed(c=[{}],r={radius})", c.join(","))
            }
            Microstructure::Homogeneous => "homogeneous".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strip() -> Microstructure {
        Microstructure::layered(1, 0.25, 0.75).unwrap()
    }

    fn disk() -> Microstructure {
        Microstructure::dispersed(&[0.5, 0.5], 0.25).unwrap()
    }

    #[test]
    fn validation() {
        assert!(Microstructure::layered(1, 0.0, 0.5).is_err());
        assert!(Microstructure::layered(1, 0.6, 0.5).is_err());
        assert!(Microstructure::dispersed(&[0.5, 0.5], 0.5).is_err());
        assert!(Microstructure::dispersed(&[0.5, 0.5], 0.0).is_err());
        assert!(strip().validate_dim(2).is_ok());
        assert!(strip().validate_dim(1).is_err());
        assert!(disk().validate_dim(3).is_err());
    }

    #[test]
    fn indicator_examples() {
        assert_eq!(strip().indicator(&[0.1, 0.5]), Phase::One);
        assert_eq!(disk().indicator(&[0.5, 0.9]), Phase::Two);
        assert_eq!(strip().indicator(&[0.3, 1.5]), Phase::One);
        // interface convention: lower bound inclusive, upper exclusive
        assert_eq!(strip().indicator(&[0.0, 0.25]), Phase::One);
        assert_eq!(strip().indicator(&[0.0, 0.75]), Phase::Two);
        assert_eq!(disk().indicator(&[0.75, 0.5]), Phase::Two);
        assert_eq!(
            Microstructure::Homogeneous.indicator(&[0.9, 0.9]),
            Phase::One
        );
    }

    #[test]
    fn rescaled_examples() {
        let m = strip();
        assert_eq!(
            m.rescaled_indicator(1.0, &[0.1, 0.5]).unwrap(),
            m.indicator(&[0.1, 0.5])
        );
        assert_eq!(m.rescaled_indicator(0.5, &[0.1, 0.25]).unwrap(), Phase::One);
        assert_eq!(
            disk().rescaled_indicator(0.25, &[0.125, 0.125]).unwrap(),
            Phase::One
        );
        assert_eq!(
            m.rescaled_indicator(0.0, &[0.1, 0.1]),
            Err(MicroError::Scale(0.0))
        );
        assert!(m.rescaled_indicator(-1.0, &[0.1, 0.1]).is_err());
    }

    #[test]
    fn volume_fraction_examples() {
        for n in [4, 8, 64] {
            let g = Grid::unit_cell(n).unwrap();
            assert_eq!(strip().volume_fractions(&g), (0.5, 0.5));
        }
        let g = Grid::unit_cell(16).unwrap();
        assert_eq!(Microstructure::Homogeneous.volume_fractions(&g), (1.0, 0.0));

        let n = 256;
        let g = Grid::unit_cell(n).unwrap();
        let (t1, t2) = disk().volume_fractions(&g);
        let exact = std::f64::consts::PI / 16.0;
        assert!((t1 - exact).abs() < 2.0 / n as f64, "{t1}");
        assert_eq!(t1 + t2, 1.0);
    }

    proptest! {
        #[test]
        fn phases_are_periodic(x in -3.0f64..3.0, y in -3.0f64..3.0, k in 0usize..2) {
            for m in [strip(), disk()] {
                let mut shifted = [x, y];
                shifted[k] += 1.0;
                prop_assert_eq!(m.indicator(&[x, y]), m.indicator(&shifted));
            }
        }

        #[test]
        fn fractions_sum_to_one(n in 2usize..40, r in 0.05f64..0.45) {
            let g = Grid::unit_cell(n).unwrap();
            let m = Microstructure::dispersed(&[0.5, 0.5], r).unwrap();
            let (a, b) = m.volume_fractions(&g);
            prop_assert!((a + b - 1.0).abs() <= f64::EPSILON);
        }
    }
}
