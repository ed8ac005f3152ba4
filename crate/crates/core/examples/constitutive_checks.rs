//! Sampled monotonicity and continuity of each phase law, the dual energy
//! and the flux Jacobian.
//!
//! cargo run --release --example constitutive_checks

use powerlaw_homog::constitutive::{check_continuity, check_monotonicity, random_pairs};
use powerlaw_homog::{FluxLaw, Phase, SolverConfig};

fn main() {
    let law = FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap();
    let pairs = random_pairs(1000, 2, 2.0, 42);
    for phase in [Phase::One, Phase::Two] {
        let m = check_monotonicity(&law, phase, &pairs);
        let c = check_continuity(&law, phase, &pairs);
        println!(
            "phase {}: p = {}, monotone min ratio {:.4} >= {:.4}: {}, continuity max ratio {:.4} <= {:.4}: {}",
            phase.index() + 1,
            law.exponent(phase),
            m.extreme_ratio.unwrap(),
            2f64.powf(2.0 - law.exponent(phase)),
            m.passed(),
            c.extreme_ratio.unwrap(),
            law.exponent(phase) - 1.0,
            c.passed()
        );
    }
    let xi = [0.6, -0.8];
    let flux = law.flux(Phase::Two, &xi);
    println!(
        "A2(xi) = [{:.4}, {:.4}], energy {:.4}, dual energy at A2(xi) {:.4}",
        flux[0],
        flux[1],
        law.energy_density(Phase::Two, &xi),
        law.dual_density(Phase::Two, &flux[..2])
    );
    let jac = law.flux_jacobian(Phase::Two, &xi, &SolverConfig::default().regularization());
    println!(
        "dA2/dxi = [[{:.4}, {:.4}], [{:.4}, {:.4}]]",
        jac[0][0], jac[0][1], jac[1][0], jac[1][1]
    );
}
