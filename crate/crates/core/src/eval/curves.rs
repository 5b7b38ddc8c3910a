use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_json;
use crate::error::{Error, Result};
use crate::metrics::Orientation;

/// Validation columns summarized, with their orientation.
pub const CURVE_METRICS: [(&str, Orientation); 2] =
    [("val_psnr", Orientation::HigherIsBetter), ("val_niqe", Orientation::LowerIsBetter)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub points: Vec<(u64, f64)>,
    pub final_value: f64,
    pub final_iteration: u64,
    pub best: f64,
    pub best_iteration: u64,
}

impl MetricCurve {
    fn new(points: Vec<(u64, f64)>, orientation: Orientation) -> Option<Self> {
        let &(final_iteration, final_value) = points.last()?;
        let (mut best_iteration, mut best) = points[0];
        for &(it, v) in &points[1..] {
            if orientation.prefers(v, best) {
                (best_iteration, best) = (it, v);
            }
        }
        Some(Self { points, final_value, final_iteration, best, best_iteration })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub metrics: BTreeMap<String, MetricCurve>,
}

fn malformed(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::MalformedLog(format!("{}: {what}", path.display()))
}

/// Reads a training log, writes `<metric>.svg` line plots and `summary.json`
/// into `out_dir` (when given) and returns the per-metric summary. Rows with
/// an empty cell for a metric are skipped for that metric.
pub fn convergence_curves(log: impl AsRef<Path>, out_dir: Option<&Path>) -> Result<CurveSummary> {
    let log = log.as_ref();
    let mut reader = csv::Reader::from_path(log).map_err(|e| malformed(log, e))?;
    let headers = reader.headers().map_err(|e| malformed(log, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let it_col = col("iteration").ok_or_else(|| malformed(log, "no `iteration` column"))?;
    let metric_cols: Vec<(usize, &str, Orientation)> =
        CURVE_METRICS.iter().filter_map(|&(m, o)| col(m).map(|c| (c, m, o))).collect();
    if metric_cols.is_empty() {
        return Err(malformed(log, "no val_psnr or val_niqe column"));
    }
    let mut points: Vec<Vec<(u64, f64)>> = vec![Vec::new(); metric_cols.len()];
    let mut rows = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| malformed(log, e))?;
        rows += 1;
        let it: u64 = rec
            .get(it_col)
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| malformed(log, format!("row {}: bad iteration", line + 2)))?;
        for (k, &(c, name, _)) in metric_cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            let v = crate::metrics::parse_value(cell)
                .ok_or_else(|| malformed(log, format!("row {}: bad {name} `{cell}`", line + 2)))?;
            points[k].push((it, v));
        }
    }
    if rows == 0 {
        return Err(malformed(log, "no rows"));
    }
    let mut metrics = BTreeMap::new();
    for (&(_, name, o), pts) in metric_cols.iter().zip(points) {
        if let Some(c) = MetricCurve::new(pts, o) {
            metrics.insert(name.to_string(), c);
        }
    }
    if metrics.is_empty() {
        return Err(malformed(log, "validation columns hold no values"));
    }
    let summary = CurveSummary { metrics };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, c) in &summary.metrics {
            let path = dir.join(format!("{name}.svg"));
            std::fs::write(&path, svg_plot(name, &c.points)).map_err(|e| Error::io(&path, e))?;
        }
        write_json(dir.join("summary.json"), &summary)?;
    }
    Ok(summary)
}

/// Minimal SVG line plot with axis ranges printed at the corners.
pub(crate) fn svg_plot(title: &str, points: &[(u64, f64)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let finite: Vec<(f64, f64)> = points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| (x as f64, y)).collect();
    let (x0, x1) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = finite.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let px = |x: f64| M + (x - x0) / span(x0, x1) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / span(y0, y1) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{title}</text>"#, W / 2.0);
    if !finite.is_empty() {
        let pts: Vec<String> = finite.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{M}" y="{}" font-size="12">{x0}</text>"#, H - M + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{x1}</text>"#, W - M, H - M + 16.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{y0:.3}</text>"#, M - 4.0, H - M);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{y1:.3}</text>"#, M - 4.0, M + 12.0);
    }
    s.push_str("</svg>\n");
    s
}
