//! One cell solve per macroscopic gradient, with the corrector identities.
//!
//! cargo run --release --example cell_solve

use powerlaw_homog::cell::{corrector_mean, energy_identity, solve_cell};
use powerlaw_homog::{FluxLaw, Grid, Microstructure, SolverConfig};

fn main() {
    let law = FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap();
    let grid = Grid::unit_cell(64).unwrap();
    let cfg = SolverConfig::default();
    for micro in [
        Microstructure::layered(1, 0.25, 0.75).unwrap(),
        Microstructure::dispersed(&[0.5, 0.5], 0.25).unwrap(),
    ] {
        println!("{}", micro.label());
        for xi in [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]] {
            let sol = solve_cell(&law, &micro, &xi, &grid, &cfg).unwrap();
            let mean = corrector_mean(&sol);
            println!(
                "  xi = {xi:?}  b = [{:.8}, {:.8}]  mean p - xi = [{:.1e}, {:.1e}]  energy defect {:.1e}  ({} Newton steps)",
                sol.b[0],
                sol.b[1],
                mean[0] - xi[0],
                mean[1] - xi[1],
                energy_identity(&sol),
                sol.iterations
            );
        }
    }
}
