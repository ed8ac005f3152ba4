//! End-to-end acceptance: one line per criterion, nonzero exit if any fails.

mod common;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use powerlaw_homog::cache::CellCache;
use powerlaw_homog::cell::{
    check_b_continuity, check_b_monotone, corrector_mean, energy_identity, solve_cell,
    solve_dual_layer, CellEvaluator,
};
use powerlaw_homog::config::RunConfig;
use powerlaw_homog::constitutive::FluxLaw;
use powerlaw_homog::domain::{solve_homogenized, DomainProblem, Load};
use powerlaw_homog::grid::Grid;
use powerlaw_homog::microstructure::{Microstructure, Phase};
use powerlaw_homog::report::write_report;
use powerlaw_homog::solver::SolverConfig;
use powerlaw_homog::sweep::{sweep, SweepReport};

type Outcome = (bool, String);

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name);
    RunConfig::from_path(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn law() -> FluxLaw {
    FluxLaw::new(2.0, 3.0, 1.0, 2.0).unwrap()
}

fn layers() -> Microstructure {
    Microstructure::layered(1, 0.25, 0.75).unwrap()
}

fn disk() -> Microstructure {
    Microstructure::dispersed(&[0.5, 0.5], 0.25).unwrap()
}

fn unit_vectors() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]
}

fn identities() -> (Outcome, Outcome) {
    let grid = Grid::unit_cell(64).unwrap();
    let cfg = SolverConfig::default();
    let (mut mean_worst, mut energy_worst) = (0.0f64, 0.0f64);
    for micro in [layers(), disk()] {
        for xi in unit_vectors() {
            let sol = solve_cell(&law(), &micro, &xi, &grid, &cfg).unwrap();
            let mean = corrector_mean(&sol);
            for k in 0..2 {
                mean_worst = mean_worst.max((mean[k] - xi[k]).abs());
            }
            energy_worst = energy_worst.max(energy_identity(&sol));
        }
    }
    (
        (
            mean_worst <= 1e-12,
            format!("max |mean p - xi| = {mean_worst:.2e}"),
        ),
        (
            energy_worst <= 1e-8,
            format!("max energy defect = {energy_worst:.2e}"),
        ),
    )
}

fn layered_exactness() -> Outcome {
    let cfg = SolverConfig::default();
    let b = |n: usize, xi: &[f64]| {
        solve_cell(&law(), &layers(), xi, &Grid::unit_cell(n).unwrap(), &cfg)
            .unwrap()
            .b
    };
    let par = b(64, &[1.0, 0.0]);
    let par_err = (par[0] - 1.5).abs().max(par[1].abs());
    let (t, _, _) = common::laminate_normal([2.0, 3.0], [1.0, 2.0], 0.5, 1.0);
    let (n64, n128) = (b(64, &[0.0, 1.0]), b(128, &[0.0, 1.0]));
    let err = (n64[1] - t).abs();
    let refinement = (n64[1] - n128[1]).abs();
    (
        par_err <= 1e-8 && err <= 10.0 * refinement.max(f64::EPSILON),
        format!(
            "parallel error {par_err:.2e}; normal error {err:.2e} vs 10 x refinement difference {:.2e}",
            10.0 * refinement
        ),
    )
}

fn linear_laminate() -> Outcome {
    let law = FluxLaw::new(2.0, 2.0, 1.0, 2.0).unwrap();
    let grid = Grid::unit_cell(64).unwrap();
    let cfg = SolverConfig::default();
    let b1 = solve_cell(&law, &layers(), &[1.0, 0.0], &grid, &cfg)
        .unwrap()
        .b;
    let b2 = solve_cell(&law, &layers(), &[0.0, 1.0], &grid, &cfg)
        .unwrap()
        .b;
    let err = (b1[0] - 1.5)
        .abs()
        .max((b2[1] - 4.0 / 3.0).abs())
        .max(b1[1].abs())
        .max(b2[0].abs());
    (
        err <= 1e-6,
        format!(
            "b = [[{:.9}, {:.1e}], [{:.1e}, {:.9}]], max error {err:.2e}",
            b1[0], b2[0], b1[1], b2[1]
        ),
    )
}

fn b_structure(cache: &Arc<CellCache>) -> Outcome {
    let set = [
        vec![1.0, 0.0],
        vec![-1.0, 0.0],
        vec![0.0, 1.0],
        vec![0.0, -1.0],
        vec![2.0, 0.0],
        vec![1.0, 1.0],
    ];
    let mut pairs = Vec::new();
    for i in 0..set.len() {
        for j in i + 1..set.len() {
            pairs.push((set[i].clone(), set[j].clone()));
        }
    }
    let threshold = 1.0 / (law().p2() - 1.0) - 0.05;
    let steps = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut ok = true;
    let mut min_slack = f64::INFINITY;
    let mut min_slope = f64::INFINITY;
    for micro in [layers(), disk()] {
        let eval = CellEvaluator::with_cache(
            law(),
            micro,
            Grid::unit_cell(32).unwrap(),
            SolverConfig::default(),
            cache.clone(),
        );
        let mono = check_b_monotone(&eval, &pairs).unwrap();
        ok &= mono.passed() && mono.rows.iter().all(|r| r.lhs >= 0.0);
        min_slack = min_slack.min(mono.min_slack);
        for (base, dir) in [(&set[0], &set[0]), (&set[2], &set[2]), (&set[5], &set[0])] {
            let cont = check_b_continuity(&eval, &pairs, base, dir, &steps).unwrap();
            ok &= cont.passed() && cont.slope >= threshold;
            min_slope = min_slope.min(cont.slope);
        }
    }
    (
        ok,
        format!("{} pairs, min monotonicity slack {min_slack:.3e}, min Holder slope {min_slope:.3} (threshold {threshold:.2})", pairs.len()),
    )
}

fn apriori(r: &SweepReport) -> Outcome {
    let c = r.checks();
    (
        c.apriori_ok,
        format!("max/min of phase norms over eps = {:?}", c.apriori_ratio),
    )
}

fn decay(reports: &[(&str, &SweepReport)]) -> Outcome {
    let mut ok = true;
    let mut msg = String::new();
    for (name, r) in reports {
        let c = r.checks();
        ok &= c.decay_ok;
        let _ = write!(
            msg,
            "{name}: e1 factor {:.2} monotone {}, e2 factor {:.2} monotone {}; ",
            c.decay[0].unwrap_or(f64::NAN),
            c.monotone[0],
            c.decay[1].unwrap_or(f64::NAN),
            c.monotone[1]
        );
    }
    (ok, msg.trim_end_matches("; ").to_string())
}

fn moments(reports: &[(&str, &SweepReport)]) -> Outcome {
    let mut ok = true;
    let mut msg = String::new();
    for (name, r) in reports {
        let c = r.checks();
        ok &= c.moments_ok && !c.moment_ratios.is_empty();
        let ratios: Vec<String> = c
            .moment_ratios
            .iter()
            .map(|(q, i, ratio)| format!("q={q} phase {} {ratio:.3}", i + 1))
            .collect();
        let _ = write!(msg, "{name} lower/empirical(1/8): {}; ", ratios.join(", "));
    }
    (ok, format!("{}(limit 1.05)", msg))
}

fn dual_field() -> Outcome {
    let cfg = SolverConfig::default();
    let mut ratios = Vec::new();
    let mut ok = true;
    let mut worst_residual = 0.0f64;
    for n in [32, 64] {
        let grid = Grid::unit_cell(n).unwrap();
        let f = solve_dual_layer(&law(), &layers(), &[0.0, 1.0], &grid, &cfg).unwrap();
        worst_residual = worst_residual.max(f.divergence_residual);
        ok &= f.divergence_residual <= 1e-8;
        for (c, ph) in layers().cell_phases(&grid).iter().enumerate() {
            if *ph == Phase::One {
                ok &= f.tau.get(c) == [-0.0, -1.0] || f.tau.get(c) == [0.0, -1.0];
            }
        }
        let ratio = f.norm_ratio.unwrap_or(f64::NAN);
        ok &= ratio.is_finite();
        ratios.push(ratio);
    }
    let change = (ratios[0] - ratios[1]).abs() / ratios[1];
    ok &= change <= 0.1;
    (
        ok,
        format!(
            "divergence residual {worst_residual:.2e}; norm ratio n=32 {:.6}, n=64 {:.6} (change {:.1e})",
            ratios[0], ratios[1], change
        ),
    )
}

fn integrability(layered: &SweepReport, cache: &Arc<CellCache>) -> Outcome {
    let cfg = config("layered.toml");
    let Some(fine) = layered.homog.as_ref().map(|h| h.integrability) else {
        return (false, "homogenized solve at N=128 failed".into());
    };
    let eval = CellEvaluator::with_cache(
        cfg.law(),
        cfg.microstructure.clone(),
        cfg.cell_grid().unwrap(),
        cfg.solver,
        cache.clone(),
    );
    let problem = DomainProblem::unit_square(64, Load::Constant(1.0)).unwrap();
    let coarse = match solve_homogenized(&problem, &eval, &cfg.table, &cfg.solver) {
        Ok(h) => h.integrability,
        Err(e) => return (false, format!("N=64 solve failed: {e}")),
    };
    let change = (coarse - fine).abs() / fine;
    (
        fine.is_finite() && change < 0.1,
        format!("N=64 {coarse:.6e}, N=128 {fine:.6e}, relative change {change:.2e}"),
    )
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    [
        "apriori.csv",
        "corrector_error.csv",
        "moments.csv",
        "failures.csv",
    ]
    .iter()
    .map(|n| (n.to_string(), fs::read(dir.join(n)).unwrap()))
    .collect()
}

fn determinism(cold: &SweepReport, cache: &CellCache) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("cells.bin");
    cache.save(&path).unwrap();
    let warm_cache = Arc::new(CellCache::load(&path).unwrap());
    let warm = sweep(&cold.config, warm_cache.clone());
    let rerun = sweep(&cold.config, Arc::new(CellCache::new()));
    let dirs = ["cold", "warm", "rerun"].map(|d| tmp.path().join(d));
    for (r, d) in [cold, &warm, &rerun].iter().zip(&dirs) {
        write_report(r, d, None).unwrap();
    }
    let base = csvs(&dirs[0]);
    let same = dirs[1..].iter().all(|d| csvs(d) == base);
    let stats = warm_cache.stats();
    (
        same && stats.misses == 0,
        format!(
            "warm run: {} hits, {} misses; CSVs byte-identical across cold, warm and fresh runs: {same}",
            stats.hits, stats.misses
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let (mean, energy) = identities();
    results.push((1, "corrector mean identity", mean));
    results.push((2, "energy identity", energy));
    results.push((3, "layered exactness", layered_exactness()));
    results.push((4, "linear laminate", linear_laminate()));
    let shared = Arc::new(CellCache::new());
    results.push((5, "monotonicity and continuity of b", b_structure(&shared)));

    let layered_cache = Arc::new(CellCache::new());
    let layered_cfg = config("layered.toml");
    let layered = sweep(&layered_cfg, layered_cache.clone());
    let dispersed = sweep(&config("dispersed.toml"), Arc::new(CellCache::new()));
    for (name, r) in [("layered", &layered), ("dispersed", &dispersed)] {
        if !r.failures.is_empty() {
            eprintln!("{name} sweep stage failures: {:?}", r.failures);
        }
    }
    let both = [("layered", &layered), ("dispersed", &dispersed)];
    results.push((6, "a priori bound", apriori(&layered)));
    results.push((7, "corrector convergence", decay(&both)));
    results.push((8, "fluctuation lower bound", moments(&both)));
    results.push((9, "dual field", dual_field()));
    results.push((
        10,
        "higher integrability",
        integrability(&layered, &layered_cache),
    ));
    results.push((
        11,
        "determinism and cache",
        determinism(&layered, &layered_cache),
    ));

    let mut failed = 0;
    for (k, name, (ok, detail)) in &results {
        println!(
            "criterion {k:>2} {:<34} {}  {detail}",
            name,
            if *ok { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!ok);
    }
    println!(
        "{} of {} criteria passed in {:.0} s",
        results.len() - failed,
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
