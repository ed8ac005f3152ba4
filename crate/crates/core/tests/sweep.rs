use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use powerlaw_homog::cache::{load_records, CellCache, Record};
use powerlaw_homog::cli::{run, Cli};
use powerlaw_homog::config::{parse_config, RunConfig};
use powerlaw_homog::report::{corrector_plot, moment_plot, write_report};
use powerlaw_homog::sweep::sweep;

const SMALL: &str = r#"
eps = [0.5, 0.25]
q = [2.0]
xi = [[1.0, 0.0], [0.0, 1.0]]

[law]
p1 = 2.0
p2 = 3.0
sigma1 = 1.0
sigma2 = 2.0

[microstructure]
kind = "layered"
axis = 1
lower = 0.25
upper = 0.75

[grids]
cell_n = 8
domain_n = 32

[load]
kind = "constant"
value = 1.0
"#;

fn small() -> RunConfig {
    parse_config(SMALL).unwrap()
}

const CSVS: [&str; 4] = [
    "apriori.csv",
    "corrector_error.csv",
    "moments.csv",
    "failures.csv",
];

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn sweep_is_deterministic_and_cache_transparent() {
    let cfg = small();
    let tmp = tempfile::tempdir().unwrap();
    let cold_a = sweep(&cfg, Arc::new(CellCache::new()));
    let cold_b = sweep(&cfg, Arc::new(CellCache::new()));
    assert!(cold_a.failures.is_empty(), "{:?}", cold_a.failures);

    let cache = Arc::new(CellCache::new());
    let first = sweep(&cfg, cache.clone());
    let path = tmp.path().join("cells.bin");
    cache.save(&path).unwrap();
    let loaded = Arc::new(CellCache::load(&path).unwrap());
    assert_eq!(loaded.len(), cache.len());
    let warm = sweep(&cfg, loaded.clone());
    assert_eq!(loaded.stats().misses, 0);
    assert!(loaded.stats().hits > 0);

    let dirs: Vec<_> = ["a", "b", "first", "warm"]
        .iter()
        .map(|d| tmp.path().join(d))
        .collect();
    for (report, dir) in [&cold_a, &cold_b, &first, &warm].iter().zip(&dirs) {
        write_report(report, dir, None).unwrap();
    }
    for name in CSVS.iter().chain(&["corrector_error.svg", "moments.svg"]) {
        let want = read(&dirs[0], name);
        for d in &dirs[1..] {
            assert_eq!(read(d, name), want, "{name} differs in {}", d.display());
        }
    }
}

#[test]
fn every_row_is_tagged() {
    let cfg = small();
    let report = sweep(&cfg, Arc::new(CellCache::new()));
    let tmp = tempfile::tempdir().unwrap();
    write_report(&report, tmp.path(), None).unwrap();
    for name in ["apriori.csv", "corrector_error.csv", "moments.csv"] {
        let text = String::from_utf8(read(tmp.path(), name)).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("config_hash,"));
        assert!(header.ends_with(",converged"));
        let rows: Vec<&str> = lines.collect();
        assert!(!rows.is_empty());
        for row in rows {
            assert!(row.starts_with(&report.config_hash));
            assert!(row.ends_with(",true"), "{name}: {row}");
        }
    }
    let moments = String::from_utf8(read(tmp.path(), "moments.csv")).unwrap();
    // one exponent, two phases, two scales
    assert_eq!(moments.lines().count(), 1 + 4);
    let manifest = String::from_utf8(read(tmp.path(), "manifest.txt")).unwrap();
    assert!(manifest.contains(&report.config_hash));
    let echo = manifest.split("[config]\n").nth(1).unwrap();
    assert_eq!(parse_config(echo).unwrap(), cfg);
}

#[test]
fn single_scale_sweep_plots_one_point() {
    let mut cfg = small();
    cfg.eps = vec![0.25];
    let report = sweep(&cfg, Arc::new(CellCache::new()));
    assert_eq!(report.rows.len(), 1);
    let checks = report.checks();
    assert_eq!(checks.decay, [None, None]);
    assert!(!checks.decay_ok);
    let svg = corrector_plot(&report).unwrap();
    assert_eq!(svg.matches("<circle").count(), 2);
    assert!(svg.ends_with("</svg>\n"));
}

#[test]
fn no_exponents_means_no_moment_outputs() {
    let mut cfg = small();
    cfg.q.clear();
    let report = sweep(&cfg, Arc::new(CellCache::new()));
    assert!(report.moments.is_none());
    assert!(moment_plot(&report).is_none());
    assert!(report.checks().moments_ok);
    let tmp = tempfile::tempdir().unwrap();
    let files = write_report(&report, tmp.path(), None).unwrap();
    assert!(files
        .iter()
        .all(|f| !f.ends_with("moments.csv") && !f.ends_with("moments.svg")));
    assert!(tmp.path().join("corrector_error.svg").exists());
}

#[test]
fn failed_stage_is_reported_not_fatal() {
    let mut cfg = small();
    // the homogenized table is capped below the gradients the load produces
    cfg.table.cap = 0.01;
    let report = sweep(&cfg, Arc::new(CellCache::new()));
    assert!(report.homog.is_none());
    assert!(report.failures.iter().any(|f| f.stage == "homogenized"));
    assert!(report.rows.iter().all(|r| r.converged && r.error.is_none()));
    assert!(!report.checks().passed());
    let text = powerlaw_homog::report::failures_csv(&report);
    assert!(text.lines().nth(1).unwrap().starts_with("homogenized,"));
}

fn cli(args: &[&str]) -> ExitCode {
    let mut argv = vec!["powerlaw-homog"];
    argv.extend_from_slice(args);
    run(Cli::try_parse_from(argv).unwrap())
}

#[test]
fn cli_commands_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, SMALL).unwrap();
    let out = tmp.path().join("out");
    let cache = tmp.path().join("cells.bin");
    let common = [
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--cache",
        cache.to_str().unwrap(),
    ];
    let with = |cmd: &[&str]| {
        let mut v = common.to_vec();
        v.extend_from_slice(cmd);
        cli(&v)
    };
    assert_eq!(with(&["cell"]), ExitCode::SUCCESS);
    let cell = fs::read_to_string(out.join("cell.csv")).unwrap();
    assert_eq!(cell.lines().count(), 3);
    assert_eq!(with(&["homog"]), ExitCode::SUCCESS);
    assert!(out.join("homog.csv").exists());
    assert_eq!(with(&["solve", "--eps", "0.25"]), ExitCode::SUCCESS);
    assert_eq!(with(&["solve", "--homogenized"]), ExitCode::SUCCESS);
    let recs = load_records(&out.join("solve_eps_0.25.bin")).unwrap();
    assert!(matches!(&recs[..], [Record::Domain(d)] if d.eps == Some(0.25)));
    let field = fs::read_to_string(out.join("solve_homogenized.csv")).unwrap();
    assert_eq!(field.lines().count(), 1 + 33 * 33);
    // checks may fail at this resolution; 2 would mean the run itself broke
    assert_ne!(with(&["sweep"]), ExitCode::from(2));
    for name in CSVS {
        assert!(out.join(name).exists(), "{name}");
    }
    // the cache file now holds every cell solve of the session
    assert!(CellCache::load(&cache).unwrap().len() > 2);
}

#[test]
fn cli_exit_codes() {
    assert_eq!(cli(&["check", "--samples", "50"]), ExitCode::SUCCESS);
    assert_eq!(cli(&["cell"]), ExitCode::from(2));
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    fs::write(&config, SMALL.replace("p1 = 2.0", "p1 = 1.5")).unwrap();
    assert_eq!(
        cli(&["--config", config.to_str().unwrap(), "cell"]),
        ExitCode::from(2)
    );
    let single = tmp.path().join("single.toml");
    fs::write(&single, SMALL.replace("eps = [0.5, 0.25]", "eps = [0.25]")).unwrap();
    let out = tmp.path().join("out");
    // one scale gives no decay factor, so the sweep check fails
    assert_eq!(
        cli(&[
            "--config",
            single.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "sweep"
        ]),
        ExitCode::from(1)
    );
    assert!(Cli::try_parse_from(["powerlaw-homog", "solve"]).is_err());
    assert!(
        Cli::try_parse_from(["powerlaw-homog", "solve", "--eps", "0.5", "--homogenized"]).is_err()
    );
}

#[test]
fn shipped_configs_describe_the_acceptance_runs() {
    for name in ["layered.toml", "dispersed.toml"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("configs")
            .join(name);
        let cfg = RunConfig::from_path(&path).unwrap();
        let law = cfg.law();
        assert_eq!(
            (law.p1(), law.p2(), law.sigma1(), law.sigma2()),
            (2.0, 3.0, 1.0, 2.0)
        );
        assert_eq!(cfg.eps, vec![0.5, 0.25, 0.125]);
        assert_eq!(cfg.q, vec![2.0, 3.0]);
        assert_eq!((cfg.grids.cell_n, cfg.grids.domain_n), (16, 128));
        assert_eq!(cfg.thresholds.decay_factor, 1.3);
        assert_eq!(cfg.thresholds.moment_slack, 0.05);
        assert_eq!(cfg.thresholds.apriori_ratio, 1.5);
        assert_eq!(parse_config(&cfg.echo()).unwrap(), cfg);
    }
}
