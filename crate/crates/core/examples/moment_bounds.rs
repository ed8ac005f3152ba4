//! Gradient moments of the oscillating solutions on the central quarter of
//! the domain against the cell-problem lower bound, for shrinking ε.
//!
//! cargo run --release --example moment_bounds

use powerlaw_homog::corrector::{empirical_moment, moment_lower_bound, SubBox};
use powerlaw_homog::domain::TablePolicy;
use powerlaw_homog::{
    solve_dirichlet_eps, solve_homogenized, CellEvaluator, DomainProblem, FluxLaw, Grid, Load,
    Microstructure, SolverConfig,
};

fn main() {
    let law = FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap();
    let micro = Microstructure::dispersed(&[0.5, 0.5], 0.25).unwrap();
    let cfg = SolverConfig::default();
    let problem = DomainProblem::unit_square(128, Load::Constant(1.0))
        .unwrap()
        .with_cell_resolution(16);
    let eval = CellEvaluator::new(law, micro.clone(), Grid::unit_cell(16).unwrap(), cfg);
    let homog = solve_homogenized(&problem, &eval, &TablePolicy::default(), &cfg).unwrap();
    let d = SubBox::central_quarter(2);
    let q = 3.0;
    let lower = moment_lower_bound(&homog.gradient(), &eval, q, &d).unwrap();
    println!(
        "q = {q}, lower bound per phase [{:.5e}, {:.5e}]",
        lower[0], lower[1]
    );
    for eps in [0.5, 0.25, 0.125] {
        let s = solve_dirichlet_eps(&problem, &law, &micro, eps, &cfg).unwrap();
        let m = empirical_moment(&s, &micro, q, &d).unwrap();
        println!(
            "  eps {eps:<5}  empirical [{:.5e}, {:.5e}]  lower/empirical [{:.3}, {:.3}]",
            m[0],
            m[1],
            lower[0] / m[0],
            lower[1] / m[1]
        );
    }
}
