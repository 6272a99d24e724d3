//! Standalone SVG line charts: one line per series with a shaded min-max
//! band.

use std::fmt::Write as _;

use eaktr_core::trainer::TrainMetrics;

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 420.0;
/// Plot area in pixels: left, right, top, bottom.
pub const AREA: (f64, f64, f64, f64) = (70.0, 540.0, 40.0, 360.0);
pub const SMOOTHING_WINDOW: usize = 10;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A line with its band. All vectors have the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Series {
    /// A series without spread.
    pub fn line(label: &str, x: Vec<f64>, y: Vec<f64>) -> Series {
        Series { label: label.to_string(), lo: y.clone(), hi: y.clone(), x, y }
    }

    /// Mean reward per update across runs (truncated to the shortest run),
    /// banded by the per-update minimum and maximum.
    pub fn from_runs(label: &str, runs: &[Vec<TrainMetrics>]) -> Series {
        let n = runs.iter().map(Vec::len).min().unwrap_or(0);
        let mut s = Series { label: label.to_string(), x: Vec::new(), y: Vec::new(), lo: Vec::new(), hi: Vec::new() };
        for i in 0..n {
            let ys: Vec<f64> = runs.iter().map(|r| r[i].mean_reward).collect();
            s.x.push(runs[0][i].env_steps as f64);
            s.y.push(ys.iter().sum::<f64>() / ys.len() as f64);
            s.lo.push(ys.iter().copied().fold(f64::INFINITY, f64::min));
            s.hi.push(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
        s
    }

    /// Trailing moving average of line and band over `window` points.
    pub fn smoothed(&self, window: usize) -> Series {
        Series { label: self.label.clone(), x: self.x.clone(), y: smooth(&self.y, window), lo: smooth(&self.lo, window), hi: smooth(&self.hi, window) }
    }
}

pub fn smooth(ys: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..ys.len())
        .map(|i| {
            let from = (i + 1).saturating_sub(w);
            ys[from..=i].iter().sum::<f64>() / (i + 1 - from) as f64
        })
        .collect()
}

/// Data range covering `values`, widened when empty or degenerate.
pub fn data_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Maps `v` from `[lo, hi]` onto `[to_lo, to_hi]`.
pub fn affine(v: f64, lo: f64, hi: f64, to_lo: f64, to_hi: f64) -> f64 {
    to_lo + (v - lo) / (hi - lo) * (to_hi - to_lo)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

pub fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (l, r, t, b) = AREA;
    let (x0, x1) = data_range(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = data_range(series.iter().flat_map(|s| s.lo.iter().chain(&s.hi).chain(&s.y).copied()));
    let px = |x: f64| affine(x, x0, x1, l, r);
    let py = |y: f64| affine(y, y0, y1, b, t);
    let mut o = String::new();
    let _ = writeln!(o, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(o, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(o, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, (l + r) / 2.0, escape(title));
    let _ = writeln!(o, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#);
    let _ = writeln!(o, r#"<line x1="{l}" y1="{b}" x2="{l}" y2="{t}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (xp, yp) = (px(xv), py(yv));
        let _ = writeln!(o, r#"<line x1="{xp:.2}" y1="{b}" x2="{xp:.2}" y2="{:.2}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(o, r#"<text x="{xp:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, b + 18.0, tick_label(xv));
        let _ = writeln!(o, r#"<line x1="{:.2}" y1="{yp:.2}" x2="{l}" y2="{yp:.2}" stroke="black"/>"#, l - 5.0);
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l - 8.0, yp + 4.0, tick_label(yv));
    }
    let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, b + 40.0, escape(x_label));
    let _ = writeln!(o, r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#, (t + b) / 2.0, (t + b) / 2.0, escape(y_label));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !s.x.is_empty() {
            let upper = s.x.iter().zip(&s.hi).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)));
            let lower = s.x.iter().zip(&s.lo).rev().map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)));
            let band: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(o, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
            let line: Vec<String> = s.x.iter().zip(&s.y).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(o, r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, line.join(" "));
        }
        let ly = t + 10.0 + 20.0 * i as f64;
        let _ = writeln!(o, r#"<rect x="{:.2}" y="{:.2}" width="14" height="4" fill="{color}"/>"#, r + 20.0, ly - 2.0);
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, r + 40.0, ly + 4.0, escape(&s.label));
    }
    o.push_str("</svg>\n");
    o
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_window() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        assert_eq!(smooth(&[], 10), Vec::<f64>::new());
    }

    #[test]
    fn empty_chart_has_legend() {
        let svg = render("t", "x", "y", &[Series::line("none", vec![], vec![])]);
        assert!(svg.contains(">none</text>"));
        assert!(!svg.contains("<polyline"));
    }
}
