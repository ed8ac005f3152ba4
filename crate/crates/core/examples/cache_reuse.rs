//! Persisting cell solutions: a second evaluator served from the saved file
//! reproduces b bit for bit without solving.
//!
//! cargo run --release --example cache_reuse -- [cache_file]

use std::path::PathBuf;
use std::sync::Arc;

use powerlaw_homog::cache::CellCache;
use powerlaw_homog::{CellEvaluator, FluxLaw, Grid, Microstructure, SolverConfig};

fn evaluator(cache: Arc<CellCache>) -> CellEvaluator {
    CellEvaluator::with_cache(
        FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap(),
        Microstructure::dispersed(&[0.5, 0.5], 0.25).unwrap(),
        Grid::unit_cell(32).unwrap(),
        SolverConfig::default(),
        cache,
    )
}

fn main() {
    let path = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "out/cells.bin".into()),
    );
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).unwrap();
    }
    let xis: Vec<Vec<f64>> = (0..8).map(|k| vec![0.25 * k as f64, 1.0]).collect();

    let cold = Arc::new(CellCache::new());
    let first = evaluator(cold.clone()).solve_many(&xis).unwrap();
    cold.save(&path).unwrap();
    println!("cold: {:?}", cold.stats());

    let warm = Arc::new(CellCache::load(&path).unwrap());
    let second = evaluator(warm.clone()).solve_many(&xis).unwrap();
    println!("warm: {:?}", warm.stats());
    let identical = first
        .iter()
        .zip(&second)
        .all(|(a, b)| a.b == b.b && a.corrector == b.corrector);
    println!("bit-identical: {identical}");
}
