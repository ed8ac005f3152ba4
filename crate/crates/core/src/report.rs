//! CSV tables, run manifest and SVG plots of a [`SweepReport`].
//!
//! CSVs carry no timing so that identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::cache::CacheStats;
use crate::sweep::SweepReport;

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// `config_hash,eps,norm1,norm2,total,residual_norm,iterations,converged`
pub fn apriori_csv(r: &SweepReport) -> String {
    let mut s =
        String::from("config_hash,eps,norm1,norm2,total,residual_norm,iterations,converged\n");
    for row in &r.rows {
        let (n1, n2) = match row.phase_norms {
            Some([a, b]) => (Some(a), Some(b)),
            None => (None, None),
        };
        let total = row.phase_norms.map(|[a, b]| a + b);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.config_hash,
            row.eps,
            opt(n1),
            opt(n2),
            opt(total),
            opt(row.residual_norm),
            row.iterations.map(|i| i.to_string()).unwrap_or_default(),
            row.converged
        );
    }
    s
}

/// `config_hash,eps,e1,e2,aux1,aux2,distinct_cell_solves,phase_mismatch,converged`
pub fn corrector_csv(r: &SweepReport) -> String {
    let mut s = String::from(
        "config_hash,eps,e1,e2,aux1,aux2,distinct_cell_solves,phase_mismatch,converged\n",
    );
    for row in &r.rows {
        let e = row.error.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.config_hash,
            row.eps,
            opt(e.map(|e| e.e1)),
            opt(e.map(|e| e.e2)),
            opt(e.map(|e| e.aux1)),
            opt(e.map(|e| e.aux2)),
            e.map(|e| e.distinct_cell_solves.to_string())
                .unwrap_or_default(),
            opt(e.map(|e| e.phase_mismatch)),
            e.is_some()
        );
    }
    s
}

/// `config_hash,q,phase,box_lower,box_upper,lower_bound,eps,empirical,converged`,
/// one line per exponent, phase and ε.
pub fn moments_csv(r: &SweepReport) -> Option<String> {
    let moments = r.moments.as_ref()?;
    let mut s = String::from(
        "config_hash,q,phase,box_lower,box_upper,lower_bound,eps,empirical,converged\n",
    );
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    for m in moments {
        for i in 0..2 {
            for (eps, emp) in &m.empirical {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{:e},{},{:e},true",
                    r.config_hash,
                    m.q,
                    i + 1,
                    join(&m.sub_box.lower),
                    join(&m.sub_box.upper),
                    m.lower_bound[i],
                    eps,
                    emp[i]
                );
            }
        }
    }
    Some(s)
}

/// `stage,message` for every failed stage.
pub fn failures_csv(r: &SweepReport) -> String {
    let mut s = String::from("stage,message\n");
    for f in &r.failures {
        let _ = writeln!(s, "{},\"{}\"", f.stage, f.message.replace('"', "'"));
    }
    s
}

/// Human-readable record of the run: version, config echo, cache use,
/// checks, failures and timings.
pub fn manifest(r: &SweepReport, cache: Option<&CacheStats>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "powerlaw-homog {}", r.version);
    let _ = writeln!(s, "config_hash = {}", r.config_hash);
    let _ = writeln!(s, "microstructure = {}", r.config.microstructure.label());
    if let Some(c) = cache {
        let _ = writeln!(
            s,
            "cache: {} entries ({} loaded), {} hits, {} misses",
            c.entries, c.loaded, c.hits, c.misses
        );
    }
    if let Some(h) = &r.homog {
        let t = &h.table;
        let _ = writeln!(
            s,
            "homogenized: residual {:e}, {} iterations, integral |grad u|^p2 = {:e}",
            h.residual_norm, h.iterations, h.integrability
        );
        let range: Vec<String> = t.range.iter().map(|(a, b)| format!("[{a}, {b}]")).collect();
        let _ = writeln!(
            s,
            "b-table: spacing {}, {} nodes, range {}, {} refinements, held-out error {:e} (relative {:e}, {} samples)",
            t.spacing,
            t.nodes,
            range.join(" x "),
            t.refinements,
            t.interpolation_error,
            t.relative_interpolation_error,
            t.held_out
        );
    }
    let c = r.checks();
    let _ = writeln!(s, "\n[checks]");
    let _ = writeln!(
        s,
        "apriori_ratio = {} ({})",
        opt(c.apriori_ratio),
        pass(c.apriori_ok)
    );
    for i in 0..2 {
        let _ = writeln!(
            s,
            "decay_e{} = {} monotone={} ",
            i + 1,
            opt(c.decay[i]),
            c.monotone[i]
        );
    }
    let _ = writeln!(s, "decay ({})", pass(c.decay_ok));
    for (q, i, ratio) in &c.moment_ratios {
        let _ = writeln!(
            s,
            "moment q={q} phase {}: lower/empirical = {ratio:.4}",
            i + 1
        );
    }
    let _ = writeln!(s, "moments ({})", pass(c.moments_ok));
    let _ = writeln!(s, "\n[failures]");
    for f in &r.failures {
        let _ = writeln!(s, "{} = {}", f.stage, f.message);
    }
    let _ = writeln!(s, "\n[timings]");
    for (stage, d) in &r.timings {
        let _ = writeln!(s, "{stage} = {:.3} s", d.as_secs_f64());
    }
    let _ = writeln!(s, "\n[config]\n{}", r.config.echo());
    s
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 56.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">{title}</text>\n",
        W / 2.0
    )
}

/// Log-log plot of `e₁`, `e₂` against ε. `None` without any error rows.
pub fn corrector_plot(r: &SweepReport) -> Option<String> {
    let pts: Vec<(f64, f64, f64)> = r
        .rows
        .iter()
        .filter_map(|row| row.error.as_ref().map(|e| (row.eps, e.e1, e.e2)))
        .collect();
    if pts.is_empty() {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = pts
        .iter()
        .flat_map(|p| [p.1, p.2])
        .filter(|v| *v > 0.0)
        .map(f64::log10)
        .collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-9 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = svg_open("corrector error vs eps (log-log)");
    let _ = writeln!(
        s,
        "<path d=\"M{PAD} {PAD} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        H - PAD,
        W - PAD
    );
    for p in &pts {
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{}</text>",
            px(p.0.log10()),
            H - PAD + 14.0,
            p.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">eps</text>",
        W / 2.0,
        H - 12.0
    );
    for (y, label) in [(y0, y0), (y1, y1)] {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">1e{label:.2}</text>",
            PAD - 4.0,
            py(y) + 3.0
        );
    }
    for (k, color, name) in [(1, "#1f77b4", "e1"), (2, "#d62728", "e2")] {
        let coords: Vec<(f64, f64)> = pts
            .iter()
            .map(|p| (p.0, if k == 1 { p.1 } else { p.2 }))
            .filter(|(_, v)| *v > 0.0)
            .map(|(e, v)| (px(e.log10()), py(v.log10())))
            .collect();
        if coords.is_empty() {
            continue;
        }
        let d: Vec<String> = coords
            .iter()
            .enumerate()
            .map(|(i, (x, y))| format!("{}{x:.2} {y:.2}", if i == 0 { "M" } else { "L" }))
            .collect();
        let _ = writeln!(
            s,
            "<path d=\"{}\" stroke=\"{color}\" fill=\"none\"/>",
            d.join(" ")
        );
        for (x, y) in &coords {
            let _ = writeln!(
                s,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{color}\"/>"
            );
        }
        let ly = 40.0 + 14.0 * (k as f64 - 1.0);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{ly}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{name}</text>",
            W - PAD - 20.0
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

/// Bars of lower bound and empirical moment at the smallest ε per `(q, phase)`.
/// `None` when the report has no moments.
pub fn moment_plot(r: &SweepReport) -> Option<String> {
    let moments = r.moments.as_ref()?;
    let mut bars: Vec<(String, f64, f64)> = Vec::new();
    for m in moments {
        let Some((_, emp)) = m.empirical.last() else {
            continue;
        };
        for i in 0..2 {
            bars.push((format!("q={} ph{}", m.q, i + 1), m.lower_bound[i], emp[i]));
        }
    }
    if bars.is_empty() {
        return None;
    }
    let top = bars
        .iter()
        .flat_map(|b| [b.1, b.2])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let slot = (W - 2.0 * PAD) / bars.len() as f64;
    let bw = slot * 0.35;
    let scale = |v: f64| v / top * (H - 2.0 * PAD);
    let mut s = svg_open("moment lower bound vs empirical (smallest eps)");
    let _ = writeln!(
        s,
        "<path d=\"M{PAD} {PAD} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        H - PAD,
        W - PAD
    );
    for (k, (label, lo, emp)) in bars.iter().enumerate() {
        let x = PAD + k as f64 * slot + slot * 0.15;
        for (j, (v, color)) in [(lo, "#7f7f7f"), (emp, "#2ca02c")].iter().enumerate() {
            let hgt = scale(**v);
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{hgt:.2}\" fill=\"{color}\"/>",
                x + j as f64 * bw,
                H - PAD - hgt
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">{label}</text>",
            x + bw,
            H - PAD + 14.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"40\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#7f7f7f\">lower bound</text>\n\
         <text x=\"{}\" y=\"54\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#2ca02c\">empirical</text>",
        W - PAD - 70.0,
        W - PAD - 70.0
    );
    s.push_str("</svg>\n");
    Some(s)
}

/// Writes every artifact of `r` into `dir`; returns the written paths.
pub fn write_report(
    r: &SweepReport,
    dir: &Path,
    cache: Option<&CacheStats>,
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, String)> = vec![
        ("apriori.csv", apriori_csv(r)),
        ("corrector_error.csv", corrector_csv(r)),
        ("failures.csv", failures_csv(r)),
        ("manifest.txt", manifest(r, cache)),
    ];
    if let Some(m) = moments_csv(r) {
        files.push(("moments.csv", m));
    }
    if let Some(p) = corrector_plot(r) {
        files.push(("corrector_error.svg", p));
    }
    if let Some(p) = moment_plot(r) {
        files.push(("moments.svg", p));
    }
    let mut out = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text)?;
        out.push(path);
    }
    Ok(out)
}
