//! Plot-ready exports: a long-format CSV and an optional self-contained SVG.

use std::fmt::Write as _;

use vqcollapse::trajectory::fmt_float;

use crate::{CliError, Result};

/// One labeled line on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, t: Vec<f64>, values: Vec<f64>) -> Self {
        Series { label: label.into(), t, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    /// `series,t,value` rows, one block per series.
    pub csv: String,
    pub svg: Option<String>,
}

/// Long-format export of `series`, which must share one time grid.
pub fn emit_plot_data(series: &[Series], with_svg: bool) -> Result<PlotData> {
    let first = series.first().ok_or_else(|| CliError::Config("no series to plot".into()))?;
    for s in series {
        if s.label.is_empty() || s.label.contains([',', '"', '\n', '\r']) {
            return Err(CliError::Config(format!("series label {:?} must be non-empty without commas, quotes or newlines", s.label)));
        }
        if s.values.len() != s.t.len() {
            return Err(CliError::Config(format!("series {:?} has {} times but {} values", s.label, s.t.len(), s.values.len())));
        }
        if s.t != first.t {
            return Err(CliError::Config(format!("series {:?} does not share the time grid of {:?}", s.label, first.label)));
        }
    }
    let mut csv = String::from("series,t,value\n");
    for s in series {
        for (t, v) in s.t.iter().zip(&s.values) {
            let _ = writeln!(csv, "{},{},{}", s.label, fmt_float(*t), fmt_float(*v));
        }
    }
    Ok(PlotData { csv, svg: with_svg.then(|| svg_chart(series)) })
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Linear axes, one polyline per series, legend in the top right.
fn svg_chart(series: &[Series]) -> String {
    let (x0, x1) = range(series[0].t.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|s| s.values.iter().copied()));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#);
    for (v, anchor, x, y) in [
        (x0, "start", left, bottom + 18.0),
        (x1, "end", right, bottom + 18.0),
        (y0, "end", left - 6.0, bottom),
        (y1, "end", left - 6.0, top + 4.0),
    ] {
        let _ = writeln!(out, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{}</text>"#, tick(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, WIDTH / 2.0, HEIGHT - 20.0);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for (&t, &v) in s.t.iter().zip(&s.values) {
            if !(t.is_finite() && v.is_finite()) {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2} {:.2} ", if pen_down { "L" } else { "M" }, px(t), py(v));
            pen_down = true;
        }
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#, d.trim_end());
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(out, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, right - 170.0, right - 150.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, right - 145.0, ly + 4.0, escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
