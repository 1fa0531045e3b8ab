//! CSV and SVG output.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, MscpError, Result};

use super::metrics::MetricsReport;

pub const CSV_HEADER: [&str; 9] =
    ["task", "method", "grid_key", "alpha", "replications", "mcp", "pfi", "medl_or_size", "runtime_seconds"];

/// One CSV line. Floats are written in shortest round-trip form, so parsing
/// a written file recovers every value exactly; an infinite median length is
/// written as `inf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRecord {
    pub task: String,
    pub method: String,
    pub grid_key: String,
    pub alpha: f64,
    pub replications: usize,
    pub mcp: f64,
    pub pfi: f64,
    pub medl_or_size: f64,
    pub runtime_seconds: f64,
}

pub fn csv_records(report: &MetricsReport) -> Vec<CsvRecord> {
    report
        .rows
        .iter()
        .map(|r| CsvRecord {
            task: r.task.to_string(),
            method: r.method.to_string(),
            grid_key: r.grid_key.clone(),
            alpha: r.alpha,
            replications: r.replications,
            mcp: r.mcp,
            pfi: r.pfi,
            medl_or_size: r.medl_or_size,
            runtime_seconds: r.runtime_seconds,
        })
        .collect()
}

fn csv_err(e: csv::Error) -> MscpError {
    MscpError::Io(e.to_string())
}

pub fn csv_string(report: &MetricsReport) -> Result<String> {
    if report.is_empty() {
        return invalid("report has no rows");
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for rec in csv_records(report) {
        w.serialize(rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| MscpError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn emit_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let text = csv_string(report)?;
    std::fs::write(path, text).map_err(|e| MscpError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return invalid(format!("unexpected CSV header {header:?}"));
    }
    r.deserialize().map(|rec| rec.map_err(csv_err)).collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRecord>> {
    parse_csv(&std::fs::read_to_string(path)?)
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 50.0;
const LEGEND_H: f64 = 18.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Splits `mu=2;n=10` into x = 2 and series suffix `n=10`. Keys without a
/// `mu` component are placed by order of first appearance.
fn grid_position(key: &str, order: &mut Vec<String>) -> (f64, String) {
    let mut x = None;
    let mut rest = Vec::new();
    for part in key.split(';') {
        match part.strip_prefix("mu=").and_then(|v| v.parse::<f64>().ok()) {
            Some(v) => x = Some(v),
            None => rest.push(part),
        }
    }
    match x {
        Some(v) => (v, rest.join(";")),
        None => {
            let idx = order.iter().position(|k| k == key).unwrap_or_else(|| {
                order.push(key.to_string());
                order.len() - 1
            });
            (idx as f64, String::new())
        }
    }
}

struct Series {
    label: String,
    points: Vec<(f64, [f64; 3])>,
}

fn collect_series(report: &MetricsReport) -> Vec<Series> {
    let mut order = Vec::new();
    let mut series: Vec<Series> = Vec::new();
    for row in &report.rows {
        let (x, suffix) = grid_position(&row.grid_key, &mut order);
        let label = if suffix.is_empty() { row.method.to_string() } else { format!("{} {suffix}", row.method) };
        let values = [row.mcp, row.pfi, row.medl_or_size];
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((x, values)),
            None => series.push(Series { label, points: vec![(x, values)] }),
        }
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    series
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Self-contained SVG with coverage, PFI and length/size panels.
pub fn svg_string(report: &MetricsReport) -> Result<String> {
    if report.is_empty() {
        return invalid("report has no rows");
    }
    let series = collect_series(report);
    let titles = ["Coverage (MCP)", "Finite sets (PFI)", "Median length / mean size"];
    let (x_lo, x_hi) = bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let legend_rows = series.len() as f64;
    let width = 3.0 * (PANEL_W + MARGIN) + MARGIN;
    let height = PANEL_H + 2.0 * MARGIN + LEGEND_H * legend_rows + 10.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (panel, title) in titles.iter().enumerate() {
        let ox = MARGIN + panel as f64 * (PANEL_W + MARGIN);
        let oy = MARGIN;
        let (y_lo, y_hi) = if panel < 2 {
            (0.0, 1.0)
        } else {
            bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1[2])))
        };
        let sx = |x: f64| ox + (x - x_lo) / (x_hi - x_lo) * PANEL_W;
        let sy = |y: f64| oy + PANEL_H - (y - y_lo) / (y_hi - y_lo) * PANEL_H;

        let _ = writeln!(svg, r#"<g class="panel">"#);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#, ox + PANEL_W / 2.0, oy - 15.0, escape(title));
        let _ = writeln!(svg, r#"<line x1="{ox}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, oy + PANEL_H, ox + PANEL_W, oy + PANEL_H);
        let _ = writeln!(svg, r#"<line x1="{ox}" y1="{oy}" x2="{ox}" y2="{}" stroke="black"/>"#, oy + PANEL_H);
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let yv = y_lo + t * (y_hi - y_lo);
            let xv = x_lo + t * (x_hi - x_lo);
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, ox - 4.0, sy(yv) + 4.0, yv);
            let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{:.2}</text>"#, sx(xv), oy + PANEL_H + 14.0, xv);
        }
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s.points.iter().filter(|p| p.1[panel].is_finite()).map(|p| (sx(p.0), sy(p.1[panel]))).collect();
            let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
            for (x, y) in pts {
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
            }
        }
        let _ = writeln!(svg, "</g>");
    }
    let ly = MARGIN + PANEL_H + 35.0;
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, s) in series.iter().enumerate() {
        let y = ly + i as f64 * LEGEND_H;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(svg, r#"<line x1="{MARGIN}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"/>"#, MARGIN + 20.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, MARGIN + 26.0, y + 4.0, escape(&s.label));
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_svg(report: &MetricsReport, path: &Path) -> Result<()> {
    let text = svg_string(report)?;
    std::fs::write(path, text).map_err(|e| MscpError::Io(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{Gamma, Method, Task};
    use crate::harness::metrics::MetricsRow;

    fn row(method: Method, key: &str, mcp: f64, medl: f64) -> MetricsRow {
        MetricsRow {
            task: Task::Figure1,
            method,
            grid_key: key.into(),
            alpha: 0.1,
            replications: 2000,
            mcp,
            pfi: 0.5 + mcp / 3.0,
            medl_or_size: medl,
            conditional_coverage: 0.9,
            runtime_seconds: 0.123456789,
        }
    }

    fn sample() -> MetricsReport {
        MetricsReport {
            rows: vec![
                row(Method::Wcp, "mu=0;n=10", 0.9123456789012345, 1.0 / 3.0),
                row(Method::Wcp, "mu=2;n=10", 0.1 + 0.2, f64::INFINITY),
                row(Method::MergedVote(Gamma::Bonferroni), "mu=0;n=50", 1e-17, 123456.789),
            ],
        }
    }

    #[test]
    fn csv_layout_and_round_trip() {
        let report = sample();
        let text = csv_string(&report).unwrap();
        assert!(text.starts_with("task,method,grid_key,alpha,replications,mcp,pfi,medl_or_size,runtime_seconds\n"));
        assert!(!text.contains('\r'));
        assert!(text.contains(",inf,"));
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed, csv_records(&report));
        for (p, r) in parsed.iter().zip(&report.rows) {
            assert_eq!(p.mcp.to_bits(), r.mcp.to_bits());
            assert_eq!(p.medl_or_size, r.medl_or_size);
        }
    }

    #[test]
    fn empty_report_is_rejected() {
        let empty = MetricsReport { rows: vec![] };
        assert!(csv_string(&empty).is_err());
        assert!(svg_string(&empty).is_err());
    }

    #[test]
    fn svg_parses_and_has_polylines() {
        let svg = svg_string(&sample()).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        let polylines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
        // Two series (WCP n=10, MergedVote n=50) on three panels.
        assert_eq!(polylines, 6);
        assert!(svg.contains("MergedVote((K-1)/K) n=50"));
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let err = emit_csv(&sample(), Path::new("/nonexistent-dir/out.csv"));
        assert!(matches!(err, Err(MscpError::Io(_))));
    }
}
