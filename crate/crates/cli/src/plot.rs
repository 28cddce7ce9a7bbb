//! Static SVG sensitivity curves: one panel per `u0`, `δ` on the x-axis, arm means as
//! solid (a=1) and dashed (a=0) lines with gray confidence bands.

use std::fmt::Write;

use transport_core::{Estimand, Estimator, SensitivityGridResult};

const PANEL_W: f64 = 300.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 72.0;
const GAP: f64 = 24.0;

/// `(δ, point, interval)` for one cell.
type CellValue = (f64, f64, Option<(f64, f64)>);

struct Series {
    points: Vec<(f64, f64)>,
    band: Option<Vec<(f64, f64, f64)>>,
}

fn series(result: &SensitivityGridResult, estimator: Estimator, estimand: Estimand, u0: f64) -> Series {
    let mut rows: Vec<CellValue> = result
        .cells
        .iter()
        .filter(|c| c.u0 == u0)
        .filter_map(|c| c.record(estimator, estimand).map(|r| (c.delta, r.point, r.ci)))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let band = rows
        .iter()
        .map(|(d, _, ci)| ci.filter(|(lo, hi)| lo.is_finite() && hi.is_finite()).map(|(lo, hi)| (*d, lo, hi)))
        .collect::<Option<Vec<_>>>();
    Series {
        points: rows.iter().map(|(d, p, _)| (*d, *p)).collect(),
        band,
    }
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::EPSILON);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_num(v: f64) -> String {
    let s = format!("{:.2}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the sensitivity curves of one estimator.
pub fn render(result: &SensitivityGridResult, estimator: Estimator) -> String {
    let mut u0s: Vec<f64> = Vec::new();
    for c in &result.cells {
        if !u0s.contains(&c.u0) {
            u0s.push(c.u0);
        }
    }
    let panels: Vec<[Series; 2]> = u0s
        .iter()
        .map(|&u0| {
            [
                series(result, estimator, Estimand::MeanA1, u0),
                series(result, estimator, Estimand::MeanA0, u0),
            ]
        })
        .collect();

    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in panels.iter().flatten() {
        for &(x, y) in &s.points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(y);
            y_hi = y_hi.max(y);
        }
        for &(_, lo, hi) in s.band.iter().flatten() {
            y_lo = y_lo.min(lo);
            y_hi = y_hi.max(hi);
        }
    }
    if x_hi <= x_lo {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    if y_hi <= y_lo {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    let n = panels.len().max(1) as f64;
    let width = MARGIN_L + n * PANEL_W + (n - 1.0) * GAP + MARGIN_R;
    let height = MARGIN_T + PANEL_H + MARGIN_B;
    let sy = |y: f64| MARGIN_T + PANEL_H * (1.0 - (y - y_lo) / (y_hi - y_lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}: potential outcome means by bias parameters</text>"#,
        width / 2.0,
        escape(estimator.name())
    );

    let y_ticks = ticks(y_lo, y_hi);
    let x_ticks = ticks(x_lo, x_hi);
    for (k, (u0, [treated, control])) in u0s.iter().zip(&panels).enumerate() {
        let left = MARGIN_L + k as f64 * (PANEL_W + GAP);
        let sx = |x: f64| left + PANEL_W * (x - x_lo) / (x_hi - x_lo);
        let bottom = MARGIN_T + PANEL_H;
        let _ = writeln!(svg, r#"<g class="panel" data-u0="{u0}">"#);
        let _ = writeln!(
            svg,
            r##"<rect x="{left:.1}" y="{MARGIN_T:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#888"/>"##
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">u(0) = {}</text>"#,
            left + PANEL_W / 2.0,
            MARGIN_T - 8.0,
            fmt_num(*u0)
        );
        for &t in &x_ticks {
            let x = sx(t);
            let _ = writeln!(svg, r#"<line x1="{x:.1}" y1="{bottom:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, bottom + 4.0);
            let _ = writeln!(svg, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, bottom + 16.0, fmt_num(t));
        }
        if k == 0 {
            for &t in &y_ticks {
                let y = sy(t);
                let _ = writeln!(svg, r#"<line x1="{:.1}" y1="{y:.1}" x2="{left:.1}" y2="{y:.1}" stroke="black"/>"#, left - 4.0);
                let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, left - 6.0, y + 4.0, fmt_num(t));
            }
        }
        for s in [treated, control] {
            if let Some(band) = &s.band {
                let mut d = String::new();
                for (i, (x, _, hi)) in band.iter().enumerate() {
                    let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(*x), sy(*hi));
                }
                for (x, lo, _) in band.iter().rev() {
                    let _ = write!(d, "L{:.2},{:.2} ", sx(*x), sy(*lo));
                }
                d.push('Z');
                let _ = writeln!(svg, r##"<path class="ci" d="{d}" fill="#bdbdbd" fill-opacity="0.45" stroke="#9e9e9e" stroke-width="0.5"/>"##);
            }
        }
        for (s, arm, dash) in [(treated, 1, ""), (control, 0, r#" stroke-dasharray="6 4""#)] {
            let pts: Vec<String> = s.points.iter().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline class="mean" data-arm="{arm}" points="{}" fill="none" stroke="black" stroke-width="1.5"{dash}/>"#,
                pts.join(" ")
            );
        }
        let _ = writeln!(svg, "</g>");
    }

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">δ (outcome units)</text>"#,
        MARGIN_L + (width - MARGIN_L - MARGIN_R) / 2.0,
        MARGIN_T + PANEL_H + 36.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">Mean outcome (outcome units)</text>"#,
        MARGIN_T + PANEL_H / 2.0,
        MARGIN_T + PANEL_H / 2.0
    );
    let ly = height - 14.0;
    let _ = writeln!(svg, r#"<line x1="{MARGIN_L:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="black" stroke-width="1.5"/>"#, MARGIN_L + 28.0);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">a = 1</text>"#, MARGIN_L + 34.0, ly + 4.0);
    let _ = writeln!(
        svg,
        r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="black" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
        MARGIN_L + 90.0,
        MARGIN_L + 118.0
    );
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">a = 0</text>"#, MARGIN_L + 124.0, ly + 4.0);
    let _ = writeln!(svg, r##"<rect x="{:.1}" y="{:.1}" width="28" height="8" fill="#bdbdbd" fill-opacity="0.45"/>"##, MARGIN_L + 180.0, ly - 4.0);
    let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}% confidence interval</text>"#, MARGIN_L + 214.0, ly + 4.0, fmt_num(result.metadata.level * 100.0));
    svg.push_str("</svg>\n");
    svg
}
