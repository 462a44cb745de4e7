//! Minimal static SVG line plots.

use std::fmt::Write;

pub struct Series<'a> {
    pub title: &'a str,
    pub t: &'a [f64],
    pub y: &'a [f64],
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 40.0;

fn bounds(v: &[f64]) -> (f64, f64) {
    let finite = v.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-300 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn panel(svg: &mut String, s: &Series, x0: f64, y0: f64) {
    let (tl, th) = bounds(s.t);
    let (yl, yh) = bounds(s.y);
    let w = PANEL_W - 2.0 * MARGIN;
    let h = PANEL_H - 2.0 * MARGIN;
    let px = |t: f64| x0 + MARGIN + (t - tl) / (th - tl) * w;
    let py = |y: f64| y0 + MARGIN + (yh - y) / (yh - yl) * h;
    let _ = writeln!(
        svg,
        r#"<rect x="{:.1}" y="{:.1}" width="{w:.1}" height="{h:.1}" fill="none" stroke="gray"/>"#,
        x0 + MARGIN,
        y0 + MARGIN
    );
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" font-size="13">{}</text>"#, x0 + MARGIN, y0 + MARGIN - 8.0, s.title);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="10">{yh:.4e}</text><text x="{:.1}" y="{:.1}" font-size="10">{yl:.4e}</text>"#,
        x0 + MARGIN + 2.0,
        y0 + MARGIN + 10.0,
        x0 + MARGIN + 2.0,
        y0 + MARGIN + h - 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="10">t = {tl} … {th}</text>"#,
        x0 + MARGIN,
        y0 + MARGIN + h + 14.0
    );
    let points: Vec<String> = s
        .t
        .iter()
        .zip(s.y)
        .filter(|(_, y)| y.is_finite())
        .map(|(t, y)| format!("{:.2},{:.2}", px(*t), py(*y)))
        .collect();
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.join(" "));
}

/// Panels laid out two per row.
pub fn render(title: &str, series: &[Series]) -> String {
    let rows = series.len().div_ceil(2);
    let width = 2.0 * PANEL_W;
    let height = rows as f64 * PANEL_H + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="10" y="20" font-size="15">{title}</text>"#);
    for (k, s) in series.iter().enumerate() {
        panel(&mut svg, s, (k % 2) as f64 * PANEL_W, 30.0 + (k / 2) as f64 * PANEL_H);
    }
    svg.push_str("</svg>\n");
    svg
}
