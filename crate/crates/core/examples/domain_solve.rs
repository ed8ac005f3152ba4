//! The oscillating problem at several scales next to the homogenized problem,
//! written as nodal CSV files.
//!
//! cargo run --release --example domain_solve -- [out_dir]

use std::fs::{self, File};
use std::path::PathBuf;

use powerlaw_homog::domain::{integrability_report, write_field_csv, TablePolicy};
use powerlaw_homog::{
    solve_dirichlet_eps, solve_homogenized, CellEvaluator, DomainProblem, FluxLaw, Grid, Load,
    Microstructure, SolverConfig,
};

fn main() {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "out/domain".into()),
    );
    fs::create_dir_all(&out).unwrap();
    let law = FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap();
    let micro = Microstructure::layered(1, 0.25, 0.75).unwrap();
    let cfg = SolverConfig::default();
    let problem = DomainProblem::unit_square(128, Load::Constant(1.0))
        .unwrap()
        .with_cell_resolution(16);

    for eps in [0.5, 0.25, 0.125] {
        let s = solve_dirichlet_eps(&problem, &law, &micro, eps, &cfg).unwrap();
        println!(
            "eps {eps:<5}  phase norms [{:.5e}, {:.5e}]  residual {:.1e}",
            s.phase_norms[0], s.phase_norms[1], s.residual_norm
        );
        write_field_csv(
            &s.u,
            File::create(out.join(format!("u_eps_{eps}.csv"))).unwrap(),
        )
        .unwrap();
    }

    let eval = CellEvaluator::new(law, micro, Grid::unit_cell(16).unwrap(), cfg);
    let h = solve_homogenized(&problem, &eval, &TablePolicy::default(), &cfg).unwrap();
    println!(
        "homogenized  int |grad u|^p2 = {:.6e}  table: {} nodes, held-out error {:.1e}",
        integrability_report(&h, &law),
        h.table.nodes,
        h.table.interpolation_error
    );
    write_field_csv(&h.u, File::create(out.join("u_homogenized.csv")).unwrap()).unwrap();
    println!("fields written to {}", out.display());
}
