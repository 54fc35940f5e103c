//! Minimal self-contained SVG line charts.

use std::fmt::Write;

use crate::error::{PacerError, Result};

pub const DEFAULT_WINDOW: usize = 100;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Trailing moving average; series shorter than the window collapse to one
/// averaged point at the last step.
pub fn smooth(points: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let w = window.max(1);
    if points.is_empty() {
        return Vec::new();
    }
    if points.len() <= w && w > 1 {
        let mean = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
        return vec![(points[points.len() - 1].0, mean)];
    }
    let mut out = Vec::with_capacity(points.len() + 1 - w);
    let mut acc: f64 = points[..w].iter().map(|p| p.1).sum();
    out.push((points[w - 1].0, acc / w as f64));
    for i in w..points.len() {
        acc += points[i].1 - points[i - w].1;
        out.push((points[i].0, acc / w as f64));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One polyline per labelled series, plus axes and a legend.
pub fn line_chart(series: &[(String, Vec<(f64, f64)>)], x_label: &str, y_label: &str) -> Result<String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    if all.is_empty() {
        return Err(PacerError::Data("nothing to plot".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
        x0 -= 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
        y0 -= 1.0;
    }
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(svg, r#"<path d="M{l},{t} L{l},{b} L{r},{b}" stroke="black" fill="none"/>"#);
    let _ = writeln!(svg, r#"<text x="{l}" y="{}" text-anchor="start">{}</text>"#, b + 20.0, fmt_tick(x0));
    let _ = writeln!(svg, r#"<text x="{r}" y="{}" text-anchor="end">{}</text>"#, b + 20.0, fmt_tick(x1));
    let _ = writeln!(svg, r#"<text x="{}" y="{b}" text-anchor="end">{}</text>"#, l - 6.0, fmt_tick(y0));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, l - 6.0, t + 4.0, fmt_tick(y1));
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 15.0, escape(x_label));
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        if pts.len() == 1 {
            let _ = writeln!(svg, r#"<circle class="series" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(pts[0].0), py(pts[0].1));
        } else {
            let _ = writeln!(svg, r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        let ly = t + 16.0 * i as f64;
        let _ = writeln!(svg, r#"<g class="legend"><rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text></g>"#, r - 150.0, ly - 9.0, r - 135.0, ly, escape(label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}
