//! The `powerlaw-homog` command line.
//!
//! Exit codes: 0 success, 1 a stage failed or a check did not pass,
//! 2 invalid invocation, config or IO error. Failures are printed to stderr
//! as a `[failures]` section of `stage,message` lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::cache::{save_domain_records, CellCache, DomainRecord};
use crate::cell::{corrector_mean, energy_identity, CellEvaluator};
use crate::config::RunConfig;
use crate::constitutive::{check_continuity, check_monotonicity, random_pairs};
use crate::domain::{solve_dirichlet_eps, solve_homogenized, write_field_csv};
use crate::microstructure::Phase;
use crate::report::write_report;
use crate::sweep::sweep;

#[derive(Debug, Parser)]
#[command(
    name = "powerlaw-homog",
    version,
    about = "Correctors and homogenization of two-phase power-law composites"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cell-solution cache file, read before and written after the run.
    #[arg(long, global = true, env = "POWERLAW_HOMOG_CACHE")]
    pub cache: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "POWERLAW_HOMOG_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Progress and cache statistics on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One cell solve per ξ with the corrector identities.
    Cell,
    /// Homogenized flux b(ξ) over the ξ list.
    Homog,
    /// One ε-problem or the homogenized problem on the domain.
    Solve {
        #[arg(
            long,
            conflicts_with = "homogenized",
            required_unless_present = "homogenized"
        )]
        eps: Option<f64>,
        #[arg(long)]
        homogenized: bool,
    },
    /// Homogenized solve, ε-solves, corrector errors, a priori and moments.
    Sweep,
    /// Sampled monotonicity and continuity of both phase laws.
    Check {
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

struct Failure {
    stage: String,
    message: String,
}

fn failure(stage: &str, e: impl std::fmt::Display) -> Failure {
    Failure {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

/// Parses `std::env::args` and runs the selected command.
pub fn main() -> ExitCode {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> ExitCode {
    if let Some(k) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
        {
            return report_failures(&[failure("threads", e)], 2);
        }
    }
    if let Command::Check { samples, seed } = cli.command {
        return check(cli.global.config.as_deref(), samples, seed);
    }
    let Some(path) = cli.global.config.as_deref() else {
        return report_failures(&[failure("config", "--config is required")], 2);
    };
    let cfg = match RunConfig::from_path(path) {
        Ok(c) => c,
        Err(e) => return report_failures(&[failure("config", e)], 2),
    };
    let out = cli
        .global
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let cache_path = cli
        .global
        .cache
        .clone()
        .or_else(|| cfg.output.cache.clone());
    let cache = match &cache_path {
        Some(p) => match CellCache::load(p) {
            Ok(c) => c,
            Err(e) => return report_failures(&[failure("cache", e)], 2),
        },
        None => CellCache::new(),
    };
    let cache = Arc::new(cache);
    if let Err(e) = fs::create_dir_all(&out) {
        return report_failures(&[failure("output", e)], 2);
    }

    let code = match cli.command {
        Command::Cell => cell(&cfg, &cache, &out),
        Command::Homog => homog(&cfg, &cache, &out),
        Command::Solve { eps, homogenized } => {
            solve(&cfg, &cache, &out, eps.filter(|_| !homogenized))
        }
        Command::Sweep => run_sweep(&cfg, &cache, &out, cli.global.verbose),
        Command::Check { .. } => unreachable!(),
    };
    if let Some(p) = &cache_path {
        if let Err(e) = cache.save(p) {
            return report_failures(&[failure("cache", e)], 2);
        }
    }
    if cli.global.verbose {
        let s = cache.stats();
        eprintln!(
            "cache: {} entries ({} loaded), {} hits, {} misses",
            s.entries, s.loaded, s.hits, s.misses
        );
    }
    code
}

fn report_failures(failures: &[Failure], code: u8) -> ExitCode {
    eprintln!("[failures]");
    for f in failures {
        eprintln!("{},\"{}\"", f.stage, f.message.replace('"', "'"));
    }
    ExitCode::from(code)
}

fn evaluator(cfg: &RunConfig, cache: &Arc<CellCache>) -> CellEvaluator {
    let grid = cfg.cell_grid().expect("validated config");
    CellEvaluator::with_cache(
        cfg.law(),
        cfg.microstructure.clone(),
        grid,
        cfg.solver,
        cache.clone(),
    )
}

fn write(out: &Path, name: &str, text: &str) -> Result<(), Failure> {
    fs::write(out.join(name), text).map_err(|e| failure("output", e))
}

fn cell(cfg: &RunConfig, cache: &Arc<CellCache>, out: &Path) -> ExitCode {
    let eval = evaluator(cfg, cache);
    let mut csv =
        String::from("xi1,xi2,b1,b2,mean_defect,energy_defect,residual_norm,iterations\n");
    let mut failures = Vec::new();
    for xi in cfg.xi_list() {
        match eval.solve(&xi) {
            Ok(sol) => {
                let mean = corrector_mean(&sol);
                let mean_defect = mean
                    .iter()
                    .zip(&sol.xi)
                    .map(|(m, x)| (m - x).abs())
                    .fold(0.0, f64::max);
                let row = format!(
                    "{},{},{:e},{:e},{:e},{:e},{:e},{}",
                    xi[0],
                    xi[1],
                    sol.b[0],
                    sol.b[1],
                    mean_defect,
                    energy_identity(&sol),
                    sol.residual_norm,
                    sol.iterations
                );
                println!("{row}");
                let _ = writeln!(csv, "{row}");
            }
            Err(e) => failures.push(failure(&format!("cell xi={xi:?}"), e)),
        }
    }
    if let Err(f) = write(out, "cell.csv", &csv) {
        failures.push(f);
    }
    finish(&failures)
}

fn homog(cfg: &RunConfig, cache: &Arc<CellCache>, out: &Path) -> ExitCode {
    let eval = evaluator(cfg, cache);
    let xis = cfg.xi_list();
    let mut failures = Vec::new();
    let mut csv = String::from("xi1,xi2,b1,b2\n");
    match eval.solve_many(&xis) {
        Ok(sols) => {
            for (xi, sol) in xis.iter().zip(sols) {
                let row = format!("{},{},{:e},{:e}", xi[0], xi[1], sol.b[0], sol.b[1]);
                println!("{row}");
                let _ = writeln!(csv, "{row}");
            }
        }
        Err(e) => failures.push(failure("homog", e)),
    }
    if let Err(f) = write(out, "homog.csv", &csv) {
        failures.push(f);
    }
    finish(&failures)
}

fn solve(cfg: &RunConfig, cache: &Arc<CellCache>, out: &Path, eps: Option<f64>) -> ExitCode {
    let problem = match cfg.domain_problem() {
        Ok(p) => p,
        Err(e) => return report_failures(&[failure("load", e)], 2),
    };
    let (record, name) = match eps {
        Some(e) => {
            match solve_dirichlet_eps(&problem, &cfg.law(), &cfg.microstructure, e, &cfg.solver) {
                Ok(s) => {
                    println!(
                        "eps {e}: residual {:e}, {} iterations, phase norms {:e} {:e}",
                        s.residual_norm, s.iterations, s.phase_norms[0], s.phase_norms[1]
                    );
                    (
                        DomainRecord {
                            eps: Some(e),
                            field: s.u,
                            residual_norm: s.residual_norm,
                        },
                        format!("solve_eps_{e}"),
                    )
                }
                Err(err) => return finish(&[failure(&format!("eps {e}"), err)]),
            }
        }
        None => {
            let eval = evaluator(cfg, cache);
            match solve_homogenized(&problem, &eval, &cfg.table, &cfg.solver) {
                Ok(h) => {
                    println!(
                        "homogenized: residual {:e}, {} iterations, integral |grad u|^p2 = {:e}, table nodes {}",
                        h.residual_norm, h.iterations, h.integrability, h.table.nodes
                    );
                    (
                        DomainRecord {
                            eps: None,
                            field: h.u,
                            residual_norm: h.residual_norm,
                        },
                        "solve_homogenized".to_string(),
                    )
                }
                Err(err) => return finish(&[failure("homogenized", err)]),
            }
        }
    };
    let mut csv = Vec::new();
    let mut failures = Vec::new();
    if let Err(e) = write_field_csv(&record.field, &mut csv) {
        failures.push(failure("output", e));
    } else if let Err(e) = fs::write(out.join(format!("{name}.csv")), csv) {
        failures.push(failure("output", e));
    }
    if let Err(e) = save_domain_records(&out.join(format!("{name}.bin")), &[record]) {
        failures.push(failure("output", e));
    }
    finish(&failures)
}

fn run_sweep(cfg: &RunConfig, cache: &Arc<CellCache>, out: &Path, verbose: bool) -> ExitCode {
    let report = sweep(cfg, cache.clone());
    let stats = cache.stats();
    let mut failures: Vec<Failure> = report
        .failures
        .iter()
        .map(|f| Failure {
            stage: f.stage.clone(),
            message: f.message.clone(),
        })
        .collect();
    if let Err(e) = write_report(&report, out, Some(&stats)) {
        failures.push(failure("output", e));
    }
    let checks = report.checks();
    if verbose {
        for (stage, d) in &report.timings {
            eprintln!("{stage}: {:.3} s", d.as_secs_f64());
        }
    }
    println!(
        "apriori {} decay {} moments {}",
        verdict(checks.apriori_ok),
        verdict(checks.decay_ok),
        verdict(checks.moments_ok)
    );
    if !checks.apriori_ok {
        failures.push(failure(
            "check",
            format!("a priori ratio {:?}", checks.apriori_ratio),
        ));
    }
    if !checks.decay_ok {
        failures.push(failure(
            "check",
            format!(
                "corrector decay {:?} monotone {:?}",
                checks.decay, checks.monotone
            ),
        ));
    }
    if !checks.moments_ok {
        failures.push(failure(
            "check",
            "moment lower bound exceeds empirical moment",
        ));
    }
    finish(&failures)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn check(config: Option<&Path>, samples: usize, seed: u64) -> ExitCode {
    let laws = match config {
        Some(p) => match RunConfig::from_path(p) {
            Ok(c) => vec![c.law()],
            Err(e) => return report_failures(&[failure("config", e)], 2),
        },
        None => [
            (2.0, 3.0, 1.0, 2.0),
            (2.0, 2.0, 1.0, 2.0),
            (3.0, 4.5, 0.5, 3.0),
        ]
        .iter()
        .map(|&(a, b, c, d)| crate::constitutive::FluxLaw::new(a, b, c, d).expect("valid law"))
        .collect(),
    };
    let mut failures = Vec::new();
    for law in &laws {
        for phase in [Phase::One, Phase::Two] {
            for (scale, tag) in [(0.1, "small"), (1.0, "unit"), (10.0, "large")] {
                let pairs = random_pairs(samples, 2, scale, seed);
                let m = check_monotonicity(law, phase, &pairs);
                let c = check_continuity(law, phase, &pairs);
                let name = format!(
                    "p={} sigma={} {tag}",
                    law.exponent(phase),
                    law.coefficient(phase)
                );
                println!(
                    "{name}: monotonicity min ratio {:.4} (bound {:.4}) {}; continuity max ratio {:.4} (bound {:.4}) {}",
                    m.extreme_ratio.unwrap_or(f64::NAN),
                    2f64.powf(2.0 - law.exponent(phase)),
                    verdict(m.passed()),
                    c.extreme_ratio.unwrap_or(f64::NAN),
                    law.exponent(phase) - 1.0,
                    verdict(c.passed())
                );
                if !m.passed() {
                    failures.push(failure(
                        &format!("monotonicity {name}"),
                        format!("{} violations", m.violations.len()),
                    ));
                }
                if !c.passed() {
                    failures.push(failure(
                        &format!("continuity {name}"),
                        format!("{} violations", c.violations.len()),
                    ));
                }
            }
        }
    }
    finish(&failures)
}

fn finish(failures: &[Failure]) -> ExitCode {
    if failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        report_failures(failures, 1)
    }
}
