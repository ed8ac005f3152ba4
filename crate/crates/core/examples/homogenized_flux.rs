//! The homogenized flux of a laminate against its closed forms, then along a
//! ray to show the power-law growth of b.
//!
//! cargo run --release --example homogenized_flux

use powerlaw_homog::{CellEvaluator, FluxLaw, Grid, Microstructure, SolverConfig};

fn main() {
    let layers = Microstructure::layered(1, 0.25, 0.75).unwrap();
    let grid = Grid::unit_cell(32).unwrap();
    let cfg = SolverConfig::default();

    // linear phases: arithmetic mean along the layers, harmonic across
    let linear = CellEvaluator::new(
        FluxLaw::new(2.0, 2.0, 1.0, 2.0).unwrap(),
        layers.clone(),
        grid,
        cfg,
    );
    let (b1, b2) = (
        linear.b(&[1.0, 0.0]).unwrap(),
        linear.b(&[0.0, 1.0]).unwrap(),
    );
    println!(
        "linear laminate: b(e1) = {:.9} (1.5), b(e2) = {:.9} (4/3)",
        b1[0], b2[1]
    );

    let eval = CellEvaluator::new(FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap(), layers, grid, cfg);
    let ray: Vec<Vec<f64>> = [0.25, 0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&t| vec![t, t])
        .collect();
    println!("\n  t      b(t, t)");
    for (xi, sol) in ray.iter().zip(eval.solve_many(&ray).unwrap()) {
        println!("  {:<5}  [{:.6}, {:.6}]", xi[0], sol.b[0], sol.b[1]);
    }
}
