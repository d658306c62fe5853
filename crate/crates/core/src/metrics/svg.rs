//! Minimal SVG charts. Display ranges are clamped here only; files and
//! reports keep the raw numbers.

use std::fmt::Write;

use super::{ChannelMetrics, ZonalGrid};

const W: f64 = 640.0;
const PANEL_H: f64 = 180.0;
const MARGIN: f64 = 48.0;
pub const CONTOURS: [f64; 2] = [0.7, 0.9];

fn header(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = write!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Blue (low) to yellow (high) for `v` in [0, 1].
fn color(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (68.0 + v * (253.0 - 68.0)) as u8;
    let g = (1.0 + v * (231.0 - 1.0)) as u8;
    let b = (84.0 + v * (37.0 - 84.0)) as u8;
    format!("rgb({r},{g},{b})")
}

fn polyline(out: &mut String, points: &[(f64, f64)], stroke: &str) {
    if points.is_empty() {
        return;
    }
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.1},{y:.1}"))
        .collect();
    let _ = write!(
        out,
        r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5" points="{}"/>"#,
        pts.join(" ")
    );
}

/// Three stacked panels (MAE, RMSE, R²) against level index, top level first.
pub fn level_profile_chart(name: &str, levels: &[ChannelMetrics]) -> String {
    let height = 3.0 * PANEL_H + 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, W, height, &format!("{name} per level"));
    let n = levels.len().max(2) - 1;
    let x = |l: usize| MARGIN + (W - 2.0 * MARGIN) * l as f64 / n as f64;
    let panels: [(&str, Vec<Option<f64>>); 3] = [
        ("MAE", levels.iter().map(|m| Some(m.mae)).collect()),
        ("RMSE", levels.iter().map(|m| Some(m.rmse)).collect()),
        (
            "R²",
            levels
                .iter()
                .map(|m| m.r2.map(|r| r.clamp(0.0, 1.0)))
                .collect(),
        ),
    ];
    for (i, (label, values)) in panels.iter().enumerate() {
        let top = MARGIN + i as f64 * PANEL_H;
        let bottom = top + PANEL_H - 24.0;
        let (lo, hi) = if *label == "R²" {
            (0.0, 1.0)
        } else {
            let hi = values.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
            (0.0, if hi > 0.0 { hi } else { 1.0 })
        };
        let y = |v: f64| bottom - (bottom - top) * (v - lo) / (hi - lo);
        let _ = write!(
            out,
            r#"<rect x="{MARGIN}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * MARGIN,
            bottom - top
        );
        let _ = write!(out, r#"<text x="4" y="{}">{label}</text>"#, top + 12.0);
        let _ = write!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#,
            MARGIN - 2.0,
            top + 10.0
        );
        let _ = write!(
            out,
            r#"<text x="{}" y="{bottom}" text-anchor="end">{lo:.3}</text>"#,
            MARGIN - 2.0
        );
        let mut run = Vec::new();
        for (l, v) in values.iter().enumerate() {
            match v {
                Some(v) => run.push((x(l), y(*v))),
                None => polyline(&mut out, &std::mem::take(&mut run), "steelblue"),
            }
        }
        polyline(&mut out, &run, "steelblue");
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">level index (0 = top)</text></svg>"#,
        W / 2.0,
        height - 8.0
    );
    out
}

/// Latitude (x) by level (y, top level at the top) heatmap of R² with
/// contour edges at 0.7 and 0.9. Undefined cells are grey.
pub fn zonal_heatmap(name: &str, grid: &ZonalGrid) -> String {
    let nb = grid.r2.len().max(1);
    let nl = grid.r2.first().map_or(1, |r| r.len().max(1));
    let height = 360.0 + 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, W, height, &format!("{name} daily zonal R²"));
    let cw = (W - 2.0 * MARGIN) / nb as f64;
    let ch = 360.0 / nl as f64;
    for (b, row) in grid.r2.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            let fill = v.map_or("rgb(200,200,200)".to_string(), color);
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                MARGIN + b as f64 * cw,
                MARGIN + l as f64 * ch,
                cw + 0.3,
                ch + 0.3
            );
        }
    }
    let above = |b: usize, l: usize, thr: f64| grid.r2[b][l].is_some_and(|v| v > thr);
    for (thr, stroke) in CONTOURS.iter().zip(["orange", "yellow"]) {
        for b in 0..grid.r2.len() {
            for l in 0..grid.r2[b].len() {
                let here = above(b, l, *thr);
                if b + 1 < grid.r2.len() && here != above(b + 1, l, *thr) {
                    let x = MARGIN + (b + 1) as f64 * cw;
                    let y = MARGIN + l as f64 * ch;
                    let _ = write!(
                        out,
                        r#"<line x1="{x:.2}" y1="{y:.2}" x2="{x:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="2"/>"#,
                        y + ch
                    );
                }
                if l + 1 < grid.r2[b].len() && here != above(b, l + 1, *thr) {
                    let x = MARGIN + b as f64 * cw;
                    let y = MARGIN + (l + 1) as f64 * ch;
                    let _ = write!(
                        out,
                        r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{stroke}" stroke-width="2"/>"#,
                        x + cw
                    );
                }
            }
        }
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">latitude</text><text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">level index</text></svg>"#,
        W / 2.0,
        height - 8.0,
        height / 2.0,
        height / 2.0
    );
    out
}

/// Grid cells as colored dots at (lon, lat).
pub fn spatial_map(title: &str, grid: &[[f64; 2]], r2: &[Option<f64>]) -> String {
    let height = 320.0 + 2.0 * MARGIN;
    let mut out = String::new();
    header(&mut out, W, height, &format!("{title} R²"));
    let _ = write!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="320" fill="none" stroke="black"/>"#,
        W - 2.0 * MARGIN
    );
    for (p, v) in grid.iter().zip(r2) {
        let lon = (p[1] + 180.0).rem_euclid(360.0);
        let x = MARGIN + (W - 2.0 * MARGIN) * lon / 360.0;
        let y = MARGIN + 320.0 * (90.0 - p[0]) / 180.0;
        let fill = v.map_or("rgb(200,200,200)".to_string(), color);
        let _ = write!(
            out,
            r#"<circle cx="{x:.1}" cy="{y:.1}" r="5" fill="{fill}" stroke="black" stroke-width="0.5"/>"#
        );
    }
    out.push_str("</svg>");
    out
}
