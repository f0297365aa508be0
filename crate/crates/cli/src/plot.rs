//! Minimal deterministic SVG plotter: stacked panels of polylines and points
//! with labelled axes.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_H: f64 = 240.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 28.0;
const BOTTOM: f64 = 30.0;

pub enum Style {
    Line { color: &'static str, dashed: bool },
    Points { color: &'static str },
}

pub struct Series {
    pub label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>, color: &'static str) -> Self {
        Self { label: label.into(), xs, ys, style: Style::Line { color, dashed: false } }
    }

    pub fn dashed(label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>, color: &'static str) -> Self {
        Self { label: label.into(), xs, ys, style: Style::Line { color, dashed: true } }
    }

    pub fn points(label: impl Into<String>, xs: Vec<f64>, ys: Vec<f64>, color: &'static str) -> Self {
        Self { label: label.into(), xs, ys, style: Style::Points { color } }
    }
}

pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
}

fn num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.to_string() }
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let pad = lo.abs().max(1.0) * 0.5;
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn draw_panel(svg: &mut String, panel: &Panel, y0: f64) {
    let (x_lo, x_hi) = range(panel.series.iter().flat_map(|s| s.xs.iter().copied()));
    let (y_lo, y_hi) = range(panel.series.iter().flat_map(|s| s.ys.iter().copied()));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, PANEL_H - TOP - BOTTOM);
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * pw;
    let py = |y: f64| y0 + TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        y0 + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{LEFT:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##,
        y0 + TOP
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x_lo + f * (x_hi - x_lo), y_lo + f * (y_hi - y_lo));
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle" fill="#444">{}</text>"##,
            px(xv),
            y0 + TOP + ph + 14.0,
            num(xv)
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end" fill="#444">{}</text>"##,
            LEFT - 4.0,
            py(yv) + 3.0,
            num(yv)
        );
    }
    for (i, s) in panel.series.iter().enumerate() {
        let ly = y0 + TOP + 12.0 + 16.0 * i as f64;
        let lx = WIDTH - RIGHT + 10.0;
        match s.style {
            Style::Line { color, dashed } => {
                let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
                let mut pts = String::new();
                for (x, y) in s.xs.iter().zip(&s.ys) {
                    if x.is_finite() && y.is_finite() {
                        let _ = write!(pts, "{:.2},{:.2} ", px(*x), py(*y));
                    }
                }
                let _ = writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                    pts.trim_end()
                );
                let _ = writeln!(
                    svg,
                    r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
                    lx + 18.0
                );
            }
            Style::Points { color } => {
                for (x, y) in s.xs.iter().zip(&s.ys) {
                    if x.is_finite() && y.is_finite() {
                        let _ = writeln!(
                            svg,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                            px(*x),
                            py(*y)
                        );
                    }
                }
                let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{ly:.2}" r="3" fill="{color}"/>"#, lx + 9.0);
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            lx + 24.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render the panels stacked vertically.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut svg, p, PANEL_H * i as f64);
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_are_compact() {
        assert_eq!(num(0.0), "0");
        assert_eq!(num(2.5), "2.5");
        assert_eq!(num(-1.0), "-1");
        assert_eq!(num(1.5e-5), "1.50e-5");
    }

    #[test]
    fn render_is_deterministic_and_well_formed() {
        let panel = || Panel {
            title: "x <1>".into(),
            series: vec![
                Series::points("data", vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 1.5], "black"),
                Series::line("fit", vec![0.0, 2.0], vec![1.0, 1.6], "blue"),
                Series::dashed("flat", vec![0.0, 2.0], vec![3.0, 3.0], "red"),
            ],
        };
        let a = render(&[panel(), panel()]);
        assert_eq!(a, render(&[panel(), panel()]));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("x &lt;1&gt;"));
        assert_eq!(a.matches("<polyline").count(), 4);
    }

    #[test]
    fn constant_series_gets_a_nonzero_range() {
        let (lo, hi) = range([2.0, 2.0].into_iter());
        assert!(lo < 2.0 && hi > 2.0);
    }
}
