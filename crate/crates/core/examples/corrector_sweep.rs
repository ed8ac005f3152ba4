//! The full pipeline from a config file: corrector errors, a priori table,
//! moment bounds, CSVs, manifest and plots.
//!
//! cargo run --release --example corrector_sweep -- crates/core/configs/layered.toml [out_dir]

use std::path::PathBuf;
use std::sync::Arc;

use powerlaw_homog::cache::CellCache;
use powerlaw_homog::report::write_report;
use powerlaw_homog::{sweep, RunConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let config =
        PathBuf::from(args.next().unwrap_or_else(|| {
            concat!(env!("CARGO_MANIFEST_DIR"), "/configs/layered.toml").into()
        }));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "out/sweep".into()));
    let cfg = RunConfig::from_path(&config).unwrap();
    let cache = Arc::new(CellCache::new());
    let report = sweep(&cfg, cache.clone());

    println!("  eps     e1          e2          a priori total");
    for row in &report.rows {
        let (e1, e2) = row
            .error
            .as_ref()
            .map_or((f64::NAN, f64::NAN), |e| (e.e1, e.e2));
        let total = row.phase_norms.map_or(f64::NAN, |n| n[0] + n[1]);
        println!("  {:<6}  {e1:.4e}  {e2:.4e}  {total:.5e}", row.eps);
    }
    let checks = report.checks();
    println!("checks passed: {}", checks.passed());
    for f in &report.failures {
        println!("failed stage {}: {}", f.stage, f.message);
    }
    for path in write_report(&report, &out, Some(&cache.stats())).unwrap() {
        println!("wrote {}", path.display());
    }
}
