//! Dependency-free SVG line/scatter charts from a report CSV column pair.

use std::path::Path;

use gerk_core::{GerkError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Line,
    Scatter,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

/// Reads two numeric columns from a headered CSV and writes an SVG chart.
pub fn plot_csv(csv_path: &Path, x_col: &str, y_col: &str, kind: PlotKind, out: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(csv_path)
        .map_err(|e| GerkError::Format(format!("{}: {e}", csv_path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| GerkError::Format(format!("{}: {e}", csv_path.display())))?
        .clone();
    let xi = headers
        .iter()
        .position(|h| h == x_col)
        .ok_or_else(|| GerkError::InvalidConfig(format!("no column '{x_col}' in {}", csv_path.display())))?;
    let yi = headers
        .iter()
        .position(|h| h == y_col)
        .ok_or_else(|| GerkError::InvalidConfig(format!("no column '{y_col}' in {}", csv_path.display())))?;

    let mut points: Vec<(f64, f64)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GerkError::Format(format!("{}: {e}", csv_path.display())))?;
        let parse = |idx: usize, name: &str| -> Result<f64> {
            record
                .get(idx)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| {
                    GerkError::parse(
                        csv_path.display().to_string(),
                        line + 2,
                        format!("non-numeric value in column '{name}'"),
                    )
                })
        };
        points.push((parse(xi, x_col)?, parse(yi, y_col)?));
    }
    if points.is_empty() {
        return Err(GerkError::InvalidConfig("no data rows to plot".into()));
    }
    if kind == PlotKind::Line {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    }

    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    ));
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    // axes
    svg.push_str(&format!(
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN,
    ));
    // axis labels and range ticks
    svg.push_str(&format!(
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_col)
    ));
    svg.push_str(&format!(
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        xml_escape(y_col)
    ));
    for (value, x, y, anchor) in [
        (x_min, MARGIN, HEIGHT - MARGIN + 16.0, "middle"),
        (x_max, WIDTH - MARGIN, HEIGHT - MARGIN + 16.0, "middle"),
        (y_min, MARGIN - 6.0, HEIGHT - MARGIN, "end"),
        (y_max, MARGIN - 6.0, MARGIN + 4.0, "end"),
    ] {
        svg.push_str(&format!(
            r#"<text x="{x}" y="{y}" font-size="10" text-anchor="{anchor}">{value:.4}</text>"#
        ));
    }

    match kind {
        PlotKind::Line => {
            let path: Vec<String> = points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            svg.push_str(&format!(
                r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
                path.join(" ")
            ));
            for &(x, y) in &points {
                svg.push_str(&format!(
                    r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4"/>"##,
                    sx(x),
                    sy(y)
                ));
            }
        }
        PlotKind::Scatter => {
            for &(x, y) in &points {
                svg.push_str(&format!(
                    r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#d62728" fill-opacity="0.7"/>"##,
                    sx(x),
                    sy(y)
                ));
            }
        }
    }
    svg.push_str("</svg>");
    std::fs::write(out, svg).map_err(|e| GerkError::io(out.display().to_string(), e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
