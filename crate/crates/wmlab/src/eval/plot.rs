//! Minimal deterministic SVG charts for telemetry curves and report figures.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::util::write_atomic;

const COLORS: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];
const W: f32 = 640.0;
const H: f32 = 360.0;
const MARGIN: f32 = 48.0;

pub struct Series {
    pub name: String,
    pub points: Vec<(f32, f32)>,
}

fn axis_range(values: impl Iterator<Item = f32>) -> (f32, f32) {
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Multi-series line chart (telemetry curves).
pub fn line_chart(title: &str, ylabel: &str, series: &[Series], path: &Path) -> Result<()> {
    let (x_lo, x_hi) = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f32| MARGIN + (x - x_lo) / (x_hi - x_lo) * (W - 2.0 * MARGIN);
    let py = |y: f32| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = write!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        W / 2.0
    );
    let _ = write!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    // axes
    let _ = write!(
        s,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    );
    for (tick, label_y) in [(y_lo, y_lo), (y_hi, y_hi)] {
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{label_y:.3}</text>"#,
            MARGIN - 4.0,
            py(tick) + 3.0
        );
    }
    for (tick, label_x) in [(x_lo, x_lo), (x_hi, x_hi)] {
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{label_x:.0}</text>"#,
            px(tick),
            H - MARGIN + 14.0
        );
    }
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = String::new();
        for (j, (x, y)) in ser.points.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, px(*x), py(*y));
        }
        let _ = write!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim());
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            W - MARGIN - 150.0,
            MARGIN + 14.0 * (i as f32 + 1.0),
            ser.name
        );
    }
    s.push_str("</svg>\n");
    write_atomic(path, s.as_bytes())
}

/// Grouped bar chart (codebook distribution and ablation figures).
pub fn grouped_bar_chart(
    title: &str,
    group_names: &[String],
    series: &[(String, Vec<f32>)],
    path: &Path,
) -> Result<()> {
    let (_, y_hi) = axis_range(series.iter().flat_map(|(_, v)| v.iter().copied()).chain([0.0]));
    let y_lo = 0.0f32;
    let py = |y: f32| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);
    let n_groups = group_names.len().max(1);
    let n_series = series.len().max(1);
    let group_w = (W - 2.0 * MARGIN) / n_groups as f32;
    let bar_w = group_w * 0.8 / n_series as f32;

    let mut s = String::new();
    let _ = write!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#,
        W / 2.0
    );
    let _ = write!(
        s,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for (gi, gname) in group_names.iter().enumerate() {
        let gx = MARGIN + gi as f32 * group_w;
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{gname}</text>"#,
            gx + group_w / 2.0,
            H - MARGIN + 14.0
        );
        for (si, (_, values)) in series.iter().enumerate() {
            let v = values.get(gi).copied().unwrap_or(0.0);
            let color = COLORS[si % COLORS.len()];
            let x = gx + group_w * 0.1 + si as f32 * bar_w;
            let y = py(v);
            let _ = write!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"/>"#,
                (H - MARGIN) - y
            );
        }
    }
    for (si, (name, _)) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#,
            W - MARGIN - 150.0,
            MARGIN + 14.0 * (si as f32 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    write_atomic(path, s.as_bytes())
}
