use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::Method;
use super::run::{read_jsonl, RunRecord, METRICS_FILE, RESULT_FILE};
use crate::error::Result;
use crate::expert::write_atomic;
use crate::rl::IterationMetrics;

pub const X_LABEL: &str = "environment steps";
pub const Y_LABEL: &str = "episode score";

/// A run found on disk.
#[derive(Clone, Debug)]
pub struct StoredRun {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub metrics: Vec<IterationMetrics>,
}

/// Every directory under `root` (itself included) holding a run record.
pub fn find_runs(root: &Path) -> Result<Vec<StoredRun>> {
    let mut dirs = Vec::new();
    collect_dirs(root, &mut dirs)?;
    dirs.sort();
    dirs.into_iter()
        .map(|dir| {
            let record: RunRecord = serde_json::from_str(&fs::read_to_string(dir.join(RESULT_FILE))?)?;
            let metrics_path = dir.join(METRICS_FILE);
            let metrics = if metrics_path.exists() { read_jsonl(&metrics_path)? } else { Vec::new() };
            Ok(StoredRun { dir, record, metrics })
        })
        .collect()
}

fn collect_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(RESULT_FILE).is_file() {
        out.push(dir.to_path_buf());
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_dirs(&path, out)?;
        }
    }
    Ok(())
}

/// One plotted line: per-x mean with an optional min/max band.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    /// `(x, mean, min, max)`.
    pub points: Vec<(f64, f64, f64, f64)>,
    pub band: bool,
}

/// Aggregates per-iteration values of several seeds. Iterations are
/// aligned by index; an iteration's band spans the seeds reporting it.
pub fn aggregate(name: &str, runs: &[Vec<(f64, Option<f64>)>]) -> Series {
    let len = runs.iter().map(Vec::len).max().unwrap_or(0);
    let mut points = Vec::new();
    for i in 0..len {
        let vals: Vec<(f64, f64)> = runs
            .iter()
            .filter_map(|r| r.get(i).and_then(|&(x, y)| y.map(|y| (x, y))))
            .collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let x = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let mean = vals.iter().map(|v| v.1).sum::<f64>() / n;
        let lo = vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
        let hi = vals.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
        points.push((x, mean, lo, hi));
    }
    Series {
        name: name.to_string(),
        points,
        band: runs.len() > 1,
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let m = raw / mag;
    mag * if m < 1.5 {
        1.0
    } else if m < 3.5 {
        2.0
    } else if m < 7.5 {
        5.0
    } else {
        10.0
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step((hi - lo).max(1e-12));
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{:.0}k", v / 1e3)
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A line chart as an SVG document.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 60.0);
    let pts = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _, lo, hi) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(lo);
        y1 = y1.max(hi);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    x0 = x0.min(0.0);
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        left + pw / 2.0,
        esc(title)
    );
    for t in ticks(x0, x1) {
        let x = sx(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{top}" x2="{x:.1}" y2="{:.1}" stroke="#eee"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            top + ph,
            top + ph + 16.0,
            fmt_tick(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = sy(t);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#eee"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##,
            left + pw,
            left - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 18.0,
        esc(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        esc(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if s.band && s.points.len() > 1 {
            let mut d = String::new();
            for (i, &(x, _, _, hi)) in s.points.iter().enumerate() {
                let _ = write!(d, "{}{:.1},{:.1} ", if i == 0 { 'M' } else { 'L' }, sx(x), sy(hi));
            }
            for &(x, _, lo, _) in s.points.iter().rev() {
                let _ = write!(d, "L{:.1},{:.1} ", sx(x), sy(lo));
            }
            let _ = writeln!(svg, r#"<path d="{}Z" fill="{color}" fill-opacity="0.18" stroke="none"/>"#, d);
        }
        let line: Vec<String> = s
            .points
            .iter()
            .map(|&(x, m, _, _)| format!("{:.1},{:.1}", sx(x), sy(m)))
            .collect();
        if line.len() == 1 {
            let _ = writeln!(svg, r#"<circle cx="{}" r="3" fill="{color}"/>"#, line[0].replacen(',', "\" cy=\"", 1));
        } else if !line.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                line.join(" ")
            );
        }
        let ly = top + 14.0 + 18.0 * k as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn curve(metrics: &[IterationMetrics], pick: impl Fn(&IterationMetrics) -> Option<f64>) -> Vec<(f64, Option<f64>)> {
    metrics.iter().map(|m| (m.env_steps as f64, pick(m))).collect()
}

/// Learning curves per (environment, demonstration count) with one line
/// per method, and an ELBO trace per trgail run. Runs without metrics
/// (behavior cloning, empty files) are skipped with a warning. `ppo` runs
/// appear in every demonstration-count figure of their environment.
pub fn emit_plots(runs: &[StoredRun], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut groups: BTreeMap<(String, usize), BTreeMap<Method, Vec<&StoredRun>>> = BTreeMap::new();
    let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in runs {
        if r.record.method.uses_demonstrations() {
            counts.entry(r.record.env.clone()).or_default().push(r.record.n_demonstrations);
        }
    }
    for r in runs {
        if r.metrics.is_empty() {
            log::warn!("{}: no metrics, skipped", r.dir.display());
            continue;
        }
        let env = r.record.env.clone();
        let ns = match counts.get(&env) {
            Some(ns) if !r.record.method.uses_demonstrations() => ns.clone(),
            _ => vec![r.record.n_demonstrations],
        };
        for n in ns {
            groups
                .entry((env.clone(), n))
                .or_default()
                .entry(r.record.method)
                .or_default()
                .push(r);
        }
    }
    let mut written = Vec::new();
    for ((env, n), methods) in &groups {
        let series: Vec<Series> = methods
            .iter()
            .map(|(m, rs)| {
                let curves: Vec<_> = rs.iter().map(|r| curve(&r.metrics, |x| x.mean_episode_score)).collect();
                aggregate(m.name(), &curves)
            })
            .collect();
        let path = out_dir.join(format!("curve-{env}-n{n}.svg"));
        let title = format!("{env}, {n} demonstrations");
        write_atomic(&path, line_chart(&title, X_LABEL, Y_LABEL, &series).as_bytes())?;
        written.push(path);
    }
    for r in runs.iter().filter(|r| r.record.method == Method::Trgail && !r.metrics.is_empty()) {
        let s = aggregate("ELBO", &[curve(&r.metrics, |m| m.elbo_estimate)]);
        let rec = &r.record;
        let path = out_dir.join(format!("elbo-{}-n{}-seed{}.svg", rec.env, rec.n_demonstrations, rec.seed));
        let title = format!("trgail ELBO, {} demonstrations, seed {}", rec.n_demonstrations, rec.seed);
        write_atomic(&path, line_chart(&title, X_LABEL, "ELBO estimate", &[s]).as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
