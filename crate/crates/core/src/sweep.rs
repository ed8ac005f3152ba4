//! The full pipeline over an ε-list: homogenized solve, ε-solves, corrector
//! errors, a priori table and moment comparison.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::cache::CellCache;
use crate::cell::CellEvaluator;
use crate::config::RunConfig;
use crate::corrector::{
    corrector_error, empirical_moment, moment_lower_bound, CorrectorErrorRecord, MomentRecord,
};
use crate::domain::{
    apriori_report, solve_dirichlet_eps, solve_homogenized, AprioriTable, EpsSolution,
    HomogSolution, TableDiagnostics,
};

/// A stage that did not complete, kept in the report instead of aborting it.
#[derive(Debug, Clone, PartialEq)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsRow {
    pub eps: f64,
    pub converged: bool,
    pub phase_norms: Option<[f64; 2]>,
    pub residual_norm: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<CorrectorErrorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomogSummary {
    pub residual_norm: f64,
    pub iterations: usize,
    pub integrability: f64,
    pub table: TableDiagnostics,
}

/// Threshold outcomes of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepChecks {
    pub apriori_ratio: Option<f64>,
    pub apriori_ok: bool,
    /// `e_i(ε_first) / e_i(ε_last)` per phase.
    pub decay: [Option<f64>; 2],
    pub monotone: [bool; 2],
    pub decay_ok: bool,
    /// `(q, phase index, lower_bound / empirical(ε_min))`.
    pub moment_ratios: Vec<(f64, usize, f64)>,
    pub moments_ok: bool,
}

impl SweepChecks {
    pub fn passed(&self) -> bool {
        self.apriori_ok && self.decay_ok && self.moments_ok
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: RunConfig,
    pub config_hash: String,
    pub version: &'static str,
    pub homog: Option<HomogSummary>,
    pub rows: Vec<EpsRow>,
    pub apriori: AprioriTable,
    /// `None` when the config lists no moment exponents.
    pub moments: Option<Vec<MomentRecord>>,
    pub failures: Vec<StageFailure>,
    /// Wall time per stage; reported in the manifest only.
    pub timings: Vec<(String, Duration)>,
}

impl SweepReport {
    pub fn checks(&self) -> SweepChecks {
        let th = &self.config.thresholds;
        let complete = self.rows.iter().all(|r| r.converged);
        let apriori_ratio =
            (complete && !self.apriori.rows.is_empty()).then(|| self.apriori.ratio());
        let apriori_ok = apriori_ratio.is_some_and(|r| r <= th.apriori_ratio);

        let errors: Vec<&CorrectorErrorRecord> =
            self.rows.iter().filter_map(|r| r.error.as_ref()).collect();
        let full = errors.len() == self.rows.len() && !errors.is_empty();
        let series = |i: usize| -> Vec<f64> {
            errors
                .iter()
                .map(|e| if i == 0 { e.e1 } else { e.e2 })
                .collect()
        };
        let mut decay = [None, None];
        let mut monotone = [false, false];
        for i in 0..2 {
            let s = series(i);
            if full && s.len() >= 2 {
                decay[i] = Some(s[0] / s[s.len() - 1]);
                monotone[i] = s.windows(2).all(|w| w[1] < w[0]);
            }
        }
        let decay_ok =
            (0..2).all(|i| monotone[i] && decay[i].is_some_and(|d| d >= th.decay_factor));

        let mut moment_ratios = Vec::new();
        let mut moments_ok = true;
        if let Some(moments) = &self.moments {
            for m in moments {
                let Some((_, emp)) = m.empirical.last() else {
                    moments_ok = false;
                    continue;
                };
                for i in 0..2 {
                    let holds = m.lower_bound[i] <= emp[i] * (1.0 + th.moment_slack);
                    moments_ok &= holds;
                    let ratio = if emp[i] > 0.0 {
                        m.lower_bound[i] / emp[i]
                    } else if m.lower_bound[i] == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    moment_ratios.push((m.q, i, ratio));
                }
            }
            moments_ok &= moments.len() == self.config.q.len();
        }
        SweepChecks {
            apriori_ratio,
            apriori_ok,
            decay,
            monotone,
            decay_ok,
            moment_ratios,
            moments_ok,
        }
    }
}

fn fail(failures: &mut Vec<StageFailure>, stage: impl Into<String>, e: impl std::fmt::Display) {
    failures.push(StageFailure {
        stage: stage.into(),
        message: e.to_string(),
    });
}

/// Runs every stage of `cfg` against `cache`. Deterministic given the config
/// and the cache contents.
pub fn sweep(cfg: &RunConfig, cache: Arc<CellCache>) -> SweepReport {
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    let law = cfg.law();
    let solver = cfg.solver;
    let cell_grid = cfg.cell_grid().expect("validated config");
    let eval = CellEvaluator::with_cache(law, cfg.microstructure.clone(), cell_grid, solver, cache);
    let mut report = SweepReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION"),
        homog: None,
        rows: Vec::new(),
        apriori: apriori_report(&[]),
        moments: None,
        failures: Vec::new(),
        timings: Vec::new(),
    };
    let problem = match cfg.domain_problem() {
        Ok(p) => p,
        Err(e) => {
            fail(&mut failures, "load", e);
            report.failures = failures;
            return report;
        }
    };

    let start = Instant::now();
    let (homog, eps_results) = rayon::join(
        || {
            let t = Instant::now();
            (
                solve_homogenized(&problem, &eval, &cfg.table, &solver),
                t.elapsed(),
            )
        },
        || {
            cfg.eps
                .par_iter()
                .map(|&e| {
                    let t = Instant::now();
                    (
                        solve_dirichlet_eps(&problem, &law, &cfg.microstructure, e, &solver),
                        t.elapsed(),
                    )
                })
                .collect::<Vec<_>>()
        },
    );
    timings.push(("homogenized solve".to_string(), homog.1));
    let homog: Option<HomogSolution> = match homog.0 {
        Ok(h) => Some(h),
        Err(e) => {
            fail(&mut failures, "homogenized", e);
            None
        }
    };
    let mut solutions: Vec<Option<EpsSolution>> = Vec::new();
    for (&e, (res, dt)) in cfg.eps.iter().zip(eps_results) {
        timings.push((format!("eps {e} solve"), dt));
        match res {
            Ok(s) => solutions.push(Some(s)),
            Err(err) => {
                fail(&mut failures, format!("eps {e}"), err);
                solutions.push(None);
            }
        }
    }
    timings.push(("domain solves (parallel)".to_string(), start.elapsed()));

    let t = Instant::now();
    let mut rows = Vec::new();
    for (&e, sol) in cfg.eps.iter().zip(&solutions) {
        let error = match (sol, &homog) {
            (Some(s), Some(h)) => match corrector_error(s, h, &eval) {
                Ok(r) => Some(r),
                Err(err) => {
                    fail(&mut failures, format!("corrector error eps {e}"), err);
                    None
                }
            },
            _ => None,
        };
        rows.push(EpsRow {
            eps: e,
            converged: sol.is_some(),
            phase_norms: sol.as_ref().map(|s| s.phase_norms),
            residual_norm: sol.as_ref().map(|s| s.residual_norm),
            iterations: sol.as_ref().map(|s| s.iterations),
            error,
        });
    }
    timings.push(("corrector errors".to_string(), t.elapsed()));
    let converged: Vec<EpsSolution> = solutions.iter().flatten().cloned().collect();
    report.apriori = apriori_report(&converged);

    if !cfg.q.is_empty() {
        let t = Instant::now();
        let sub_box = cfg.sub_box();
        let mut moments = Vec::new();
        if let Some(h) = &homog {
            let grad = h.gradient();
            for &q in &cfg.q {
                let lower = match moment_lower_bound(&grad, &eval, q, &sub_box) {
                    Ok(v) => v,
                    Err(err) => {
                        fail(&mut failures, format!("moment lower bound q={q}"), err);
                        continue;
                    }
                };
                let mut empirical = Vec::new();
                for s in &converged {
                    match empirical_moment(s, &cfg.microstructure, q, &sub_box) {
                        Ok(v) => empirical.push((s.eps, v)),
                        Err(err) => fail(&mut failures, format!("moment q={q} eps {}", s.eps), err),
                    }
                }
                moments.push(MomentRecord {
                    q,
                    sub_box: sub_box.clone(),
                    lower_bound: lower,
                    empirical,
                });
            }
        }
        report.moments = Some(moments);
        timings.push(("moments".to_string(), t.elapsed()));
    }

    report.homog = homog.map(|h| HomogSummary {
        residual_norm: h.residual_norm,
        iterations: h.iterations,
        integrability: h.integrability,
        table: h.table,
    });
    report.rows = rows;
    report.failures = failures;
    report.timings = timings;
    report
}
