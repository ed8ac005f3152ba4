//! Correctors, homogenized fluxes and gradient-moment bounds for two-phase
//! power-law composites, `-div(σ(x/ε)|∇u|^{p(x/ε)-2}∇u) = f`.
//!
//! The examples directory walks through each stage; the `powerlaw-homog`
//! binary wraps them in subcommands.

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the element formulas
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::manual_is_multiple_of
)]

pub mod assembly;
pub mod cache;
pub mod cell;
pub mod cli;
pub mod config;
pub mod constitutive;
pub mod corrector;
pub mod domain;
pub mod grid;
pub mod microstructure;
pub mod report;
pub mod solver;
pub mod sweep;

pub use cell::{solve_cell, CellEvaluator, CellSolution};
pub use config::{parse_config, RunConfig};
pub use constitutive::FluxLaw;
pub use domain::{solve_dirichlet_eps, solve_homogenized, DomainProblem, Load};
pub use grid::{Grid, ScalarField, VectorField};
pub use microstructure::{Microstructure, Phase};
pub use solver::SolverConfig;
pub use sweep::{sweep, SweepReport};
