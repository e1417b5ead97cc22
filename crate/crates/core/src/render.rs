//! Self-contained SVG output: correlation heatmaps, sweep line plots with
//! error bars, and frame strips of cart-pole and grid-world rollouts.
//!
//! Output is a pure function of the input (fixed number formatting, no
//! timestamps), so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::analysis::{CorrelationMap, SweepAggregate};
use crate::cartpole::{CartpoleParams, CartpoleState};
use crate::gridworld::GridState;

pub struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            body: String::new(),
            width,
            height,
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, stroke: Option<&str>) {
        let stroke = stroke.map_or(String::new(), |s| format!(" stroke=\"{s}\""));
        let _ = writeln!(
            self.body,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"{stroke}/>"
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width:.2}\"/>"
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{r:.2}\" fill=\"{fill}\"/>");
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        if points.is_empty() {
            return;
        }
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.50\"/>",
            pts.join(" ")
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size:.1}\" font-family=\"sans-serif\" text-anchor=\"{anchor}\">{}</text>",
            escape(content)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Diverging map: -1 blue, 0 white, +1 orange.
pub fn diverging_color(v: f64) -> String {
    let v = if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
    let (end, t) = if v >= 0.0 { ((230.0, 97.0, 1.0), v) } else { ((33.0, 102.0, 172.0), -v) };
    let mix = |e: f64| (255.0 + (e - 255.0) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(end.0), mix(end.1), mix(end.2))
}

/// One square per cell with its value printed; flagged cells are grey.
pub fn heatmap(map: &CorrelationMap, title: &str) -> String {
    let side = map.side();
    let cell = 60.0;
    let (left, top) = (20.0, 40.0);
    let mut svg = Svg::new(left * 2.0 + cell * side as f64, top + 20.0 + cell * side as f64);
    svg.text(left + cell * side as f64 / 2.0, 24.0, 14.0, "middle", title);
    for (k, (&v, &flag)) in map.values.iter().zip(&map.flagged).enumerate() {
        let (r, c) = (k / side, k % side);
        let (x, y) = (left + c as f64 * cell, top + r as f64 * cell);
        let fill = if flag { "#bdbdbd".to_string() } else { diverging_color(v) };
        svg.rect(x, y, cell, cell, &fill, Some("#444444"));
        let label = if flag { "n/a".to_string() } else { format!("{v:.2}") };
        svg.text(x + cell / 2.0, y + cell / 2.0 + 4.0, 12.0, "middle", &label);
    }
    svg.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, y, stderr)`.
    pub points: Vec<(f64, f64, Option<f64>)>,
}

impl Series {
    /// One series per metric from aggregated sweep results.
    pub fn from_aggregates(aggs: &[SweepAggregate]) -> Vec<Series> {
        let mut out: Vec<Series> = Vec::new();
        for a in aggs {
            match out.iter_mut().find(|s| s.label == a.metric) {
                Some(s) => s.points.push((a.p, a.mean, a.stderr)),
                None => out.push(Series {
                    label: a.metric.clone(),
                    points: vec![(a.p, a.mean, a.stderr)],
                }),
            }
        }
        out
    }
}

const PALETTE: [&str; 6] = ["#e66101", "#5e3c99", "#1b9e77", "#d95f02", "#2166ac", "#666666"];

fn span(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line plot with error bars. An empty series list still draws the axes.
pub fn line_plot(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = span(pts().map(|p| p.0));
    let (y0, y1) = span(pts().flat_map(|p| {
        let e = p.2.unwrap_or(0.0);
        [p.1 - e, p.1 + e]
    }));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = Svg::new(w, h);
    svg.text(left + pw / 2.0, 24.0, 14.0, "middle", title);
    svg.line(left, top + ph, left + pw, top + ph, "#000000", 1.0);
    svg.line(left, top, left, top + ph, "#000000", 1.0);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        svg.line(sx(xv), top + ph, sx(xv), top + ph + 4.0, "#000000", 1.0);
        svg.text(sx(xv), top + ph + 18.0, 10.0, "middle", &format!("{xv:.3}"));
        svg.line(left - 4.0, sy(yv), left, sy(yv), "#000000", 1.0);
        svg.text(left - 6.0, sy(yv) + 3.0, 10.0, "end", &format!("{yv:.2}"));
    }
    svg.text(left + pw / 2.0, h - 10.0, 12.0, "middle", x_label);
    svg.text(14.0, top + ph / 2.0, 12.0, "middle", y_label);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut sorted = s.points.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let line: Vec<(f64, f64)> = sorted.iter().map(|p| (sx(p.0), sy(p.1))).collect();
        svg.polyline(&line, color);
        for &(x, y, e) in &sorted {
            if let Some(e) = e {
                svg.line(sx(x), sy(y - e), sx(x), sy(y + e), color, 1.0);
                svg.line(sx(x) - 3.0, sy(y - e), sx(x) + 3.0, sy(y - e), color, 1.0);
                svg.line(sx(x) - 3.0, sy(y + e), sx(x) + 3.0, sy(y + e), color, 1.0);
            }
            svg.circle(sx(x), sy(y), 3.0, color);
        }
        let ly = top + 16.0 * i as f64;
        svg.rect(left + pw + 12.0, ly, 10.0, 10.0, color, None);
        svg.text(left + pw + 28.0, ly + 9.0, 11.0, "start", &s.label);
    }
    svg.finish()
}

/// Every `stride`-th state as a cart rectangle with its pole, left to right.
pub fn cartpole_strip(states: &[CartpoleState], params: &CartpoleParams, stride: usize) -> String {
    let frames: Vec<&CartpoleState> = states.iter().step_by(stride.max(1)).collect();
    let (fw, fh) = (120.0, 120.0);
    let n = frames.len().max(1);
    let mut svg = Svg::new(fw * n as f64, fh + 20.0);
    let scale = fw / (2.0 * params.x_limit + 0.4);
    let ground = fh - 30.0;
    for (i, s) in frames.iter().enumerate() {
        let ox = i as f64 * fw;
        svg.rect(ox, 0.0, fw, fh, "#fafafa", Some("#cccccc"));
        svg.line(ox + 4.0, ground + 8.0, ox + fw - 4.0, ground + 8.0, "#888888", 1.0);
        let cx = ox + fw / 2.0 + s.x.clamp(-params.x_limit, params.x_limit) * scale;
        svg.rect(cx - 10.0, ground - 6.0, 20.0, 12.0, "#5e3c99", None);
        // theta = 0 points straight up.
        let len = params.pole_length * scale * 1.5;
        let (tx, ty) = (cx + len * s.theta.sin(), ground - len * s.theta.cos());
        svg.line(cx, ground, tx, ty, "#e66101", 3.0);
        svg.circle(tx, ty, 3.0, "#e66101");
        svg.text(ox + fw / 2.0, fh + 14.0, 10.0, "middle", &format!("#{}", i * stride.max(1)));
    }
    svg.finish()
}

/// Full-board snapshots: apples green, fires red, agent blue with its
/// 5x5 view outlined.
pub fn grid_frames(states: &[GridState], window: usize) -> String {
    let cell = 12.0;
    let width = states.first().map_or(12, |s| s.width);
    let fw = cell * width as f64 + 16.0;
    let n = states.len().max(1);
    let mut svg = Svg::new(fw * n as f64, fw + 8.0);
    for (i, s) in states.iter().enumerate() {
        let (ox, oy) = (i as f64 * fw + 8.0, 8.0);
        for r in 0..s.width {
            for c in 0..s.width {
                let k = s.idx(r, c);
                let fill = if s.apples[k] {
                    "#1b9e77"
                } else if s.fires[k] {
                    "#d7301f"
                } else {
                    "#f0f0f0"
                };
                svg.rect(ox + c as f64 * cell, oy + r as f64 * cell, cell, cell, fill, Some("#ffffff"));
            }
        }
        let (ar, ac) = s.agent;
        svg.circle(ox + (ac as f64 + 0.5) * cell, oy + (ar as f64 + 0.5) * cell, cell * 0.35, "#2166ac");
        let half = (window / 2) as f64;
        let _ = write!(
            svg.body,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{w:.2}\" fill=\"none\" stroke=\"#2166ac\" stroke-width=\"1.50\"/>\n",
            ox + (ac as f64 - half) * cell,
            oy + (ar as f64 - half) * cell,
            w = window as f64 * cell
        );
    }
    svg.finish()
}

pub fn write_svg(path: &Path, svg: &str) -> std::io::Result<()> {
    std::fs::write(path, svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(v: f64) -> CorrelationMap {
        CorrelationMap {
            values: vec![v; 25],
            flagged: vec![false; 25],
            samples: 10,
        }
    }

    #[test]
    fn colors() {
        assert_eq!(diverging_color(0.0), "#ffffff");
        assert_eq!(diverging_color(1.0), "#e66101");
        assert_eq!(diverging_color(-1.0), "#2166ac");
        assert_eq!(diverging_color(5.0), diverging_color(1.0));
    }

    #[test]
    fn maximal_heatmap_is_uniform() {
        let svg = heatmap(&uniform(1.0), "all ones");
        assert_eq!(svg.matches("fill=\"#e66101\"").count(), 25);
        assert_eq!(svg.matches("<rect").count(), 26);
    }

    #[test]
    fn empty_inputs_still_render_axes() {
        let svg = line_plot(&[], "empty", "p", "score");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("<line"));
        assert!(!svg.contains("<polyline"));
        let strip = cartpole_strip(&[], &CartpoleParams::default(), 10);
        assert!(strip.ends_with("</svg>\n"));
        assert!(grid_frames(&[], 5).ends_with("</svg>\n"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let series = vec![Series {
            label: "a<b".into(),
            points: vec![(0.1, 1.0, Some(0.2)), (0.05, 2.0, None)],
        }];
        assert_eq!(line_plot(&series, "t", "x", "y"), line_plot(&series, "t", "x", "y"));
        assert!(line_plot(&series, "t", "x", "y").contains("a&lt;b"));
    }

    #[test]
    fn golden_heatmap() {
        let mut map = CorrelationMap {
            values: (0..4).map(|k| k as f64 / 3.0 * 2.0 - 1.0).collect(),
            flagged: vec![false; 4],
            samples: 3,
        };
        map.flagged[3] = true;
        map.values[3] = 0.0;
        let golden = include_str!("../tests/golden/heatmap_2x2.svg");
        assert_eq!(heatmap(&map, "golden"), golden);
    }
}
