//! Divergence-free dual field of a laminate: fixed on phase one, solved on
//! phase two by a Neumann power-law problem.
//!
//! cargo run --release --example dual_layer

use powerlaw_homog::cell::solve_dual_layer;
use powerlaw_homog::{FluxLaw, Grid, Microstructure, SolverConfig};

fn main() {
    let law = FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap();
    let layers = Microstructure::layered(1, 0.25, 0.75).unwrap();
    for xi in [[0.0, 1.0], [1.0, 0.0], [0.6, 0.8]] {
        for n in [16, 32, 64] {
            let f = solve_dual_layer(
                &law,
                &layers,
                &xi,
                &Grid::unit_cell(n).unwrap(),
                &SolverConfig::default(),
            )
            .unwrap();
            println!(
                "xi = {xi:?} n = {n:<3} divergence residual {:.1e}  int |tau|^q1 / |xi|^q1 = {:.6}",
                f.divergence_residual,
                f.norm_ratio.unwrap()
            );
        }
    }
}
