//! Self-contained SVG output: learning curves, motion histograms and prior
//! heatmaps.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::harness::{Curve, Histogram};
use crate::mechanism::{Mechanism, MechanismKind};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 55.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Fixed-precision number formatting so output is byte-stable.
fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        n(w),
        n(h),
        n(w),
        n(h)
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{}" height="{}" fill="white"/>"#, n(w), n(h));
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let widen = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN_LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn axes(&self, out: &mut String, xlabel: &str, ylabel: &str, xticks: &[f64], yticks: &[f64]) {
        let (left, right) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (top, bottom) = (MARGIN_TOP, HEIGHT - MARGIN_BOTTOM);
        let _ = writeln!(
            out,
            r#"<path class="axis" d="M{} {} L{} {} L{} {}" fill="none" stroke="black"/>"#,
            n(left),
            n(top),
            n(left),
            n(bottom),
            n(right),
            n(bottom)
        );
        for &t in xticks {
            let x = self.px(t);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
                n(x),
                n(bottom + 16.0),
                tick_label(t)
            );
        }
        for &t in yticks {
            let y = self.py(t);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
                n(left - 6.0),
                n(y + 4.0),
                tick_label(t)
            );
        }
        let _ = writeln!(
            out,
            r#"<text class="xlabel" x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
            n((left + right) / 2.0),
            n(HEIGHT - 15.0),
            escape(xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text class="ylabel" x="18" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            n((top + bottom) / 2.0),
            n((top + bottom) / 2.0),
            escape(ylabel)
        );
    }
}

fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.3}")
    }
}

fn linear_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|i| lo + (hi - lo) * i as f64 / count as f64).collect()
}

/// Learning curves: one median polyline per strategy, a shaded
/// interquartile band, and one `point` circle per (strategy, checkpoint).
pub fn learning_curve_svg(curves: &[Curve]) -> Result<String> {
    let points: Vec<_> = curves.iter().flat_map(|c| c.points.iter()).collect();
    if points.is_empty() {
        return Err(Error::InvalidArgument("no curve points to plot".into()));
    }
    let xmax = points.iter().map(|p| p.checkpoint as f64).fold(0.0, f64::max);
    let xmin = points.iter().map(|p| p.checkpoint as f64).fold(f64::INFINITY, f64::min);
    let ymax = points.iter().map(|p| p.q75).fold(0.0, f64::max).max(1.0);
    let frame = Frame::new(xmin, xmax, 0.0, ymax);

    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    let mut xticks: Vec<f64> = Vec::new();
    for p in &points {
        let x = p.checkpoint as f64;
        if !xticks.contains(&x) {
            xticks.push(x);
        }
    }
    xticks.sort_by(f64::total_cmp);
    frame.axes(&mut out, "training mechanisms (L)", "interactions to success", &xticks, &linear_ticks(0.0, ymax, 5));

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let name = escape(curve.strategy.as_str());
        let _ = writeln!(out, r#"<g class="strategy" data-strategy="{name}">"#);
        if !curve.points.is_empty() {
            let upper = curve.points.iter().map(|p| (frame.px(p.checkpoint as f64), frame.py(p.q75)));
            let lower = curve.points.iter().rev().map(|p| (frame.px(p.checkpoint as f64), frame.py(p.q25)));
            let band: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{},{}", n(x), n(y))).collect();
            let _ = writeln!(
                out,
                r#"<polygon class="iqr" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                band.join(" ")
            );
            let line: Vec<String> = curve
                .points
                .iter()
                .map(|p| format!("{},{}", n(frame.px(p.checkpoint as f64)), n(frame.py(p.median))))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline class="median" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
            for p in &curve.points {
                let _ = writeln!(
                    out,
                    r#"<circle class="point" cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                    n(frame.px(p.checkpoint as f64)),
                    n(frame.py(p.median))
                );
            }
        }
        let ly = MARGIN_TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            n(lx),
            n(ly),
            n(lx + 18.0),
            n(ly)
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11">{name}</text>"#, n(lx + 24.0), n(ly + 4.0));
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Bar chart of a motion histogram; the zero bin is drawn first, separately.
pub fn histogram_svg(h: &Histogram, title: &str) -> Result<String> {
    if h.counts.is_empty() || h.edges.len() != h.counts.len() + 1 {
        return Err(Error::InvalidArgument("malformed histogram".into()));
    }
    let bars = h.counts.len() + 1;
    let ymax = h.counts.iter().copied().chain([h.zero_count]).max().unwrap_or(0).max(1) as f64;
    let frame = Frame::new(0.0, bars as f64, 0.0, ymax);
    let mut out = String::new();
    header(&mut out, WIDTH, HEIGHT);
    let _ = writeln!(
        out,
        r#"<text class="title" x="{}" y="14" font-size="13" text-anchor="middle">{}</text>"#,
        n((MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0),
        escape(title)
    );
    frame.axes(&mut out, "motion", "count", &[], &linear_ticks(0.0, ymax, 4));
    let heights = std::iter::once(h.zero_count).chain(h.counts.iter().copied());
    for (i, count) in heights.enumerate() {
        let x0 = frame.px(i as f64);
        let x1 = frame.px(i as f64 + 1.0);
        let y = frame.py(count as f64);
        let (class, fill) = if i == 0 { ("bar zero", "#888888") } else { ("bar", "#1f77b4") };
        let _ = writeln!(
            out,
            r#"<rect class="{class}" x="{}" y="{}" width="{}" height="{}" fill="{fill}" stroke="white"><title>{count}</title></rect>"#,
            n(x0),
            n(y),
            n(x1 - x0),
            n(frame.py(0.0) - y)
        );
    }
    let label_y = HEIGHT - MARGIN_BOTTOM + 16.0;
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">0</text>"#,
        n(frame.px(0.5)),
        n(label_y)
    );
    let last = *h.edges.last().unwrap_or(&0.0);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
        n(frame.px(bars as f64)),
        n(label_y),
        format_args!("{last:.3}")
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Prior values sampled on a polar (direction × distance) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub resolution: usize,
    /// Row-major by direction index, then distance index.
    pub values: Vec<f64>,
    pub theta: (f64, f64),
    pub distance: (f64, f64),
}

impl PolarGrid {
    pub fn cell_center(&self, i_theta: usize, i_dist: usize) -> (f64, f64) {
        let r = self.resolution as f64;
        let t = self.theta.0 + (i_theta as f64 + 0.5) / r * (self.theta.1 - self.theta.0);
        let d = self.distance.0 + (i_dist as f64 + 0.5) / r * (self.distance.1 - self.distance.0);
        (t, d)
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.resolution, best % self.resolution)
    }
}

/// Samples a prior on the polar grid. Sliders use (θ, q) with q ∈ [0, q_max];
/// doors need `door_pitch`, which fixes ψ and maps the disk to (q, r).
pub fn sample_polar<F: Fn(&[f64]) -> f64>(prior: F, m: &Mechanism, resolution: usize, door_pitch: Option<f64>) -> Result<PolarGrid> {
    if resolution < 1 {
        return Err(Error::InvalidArgument("resolution must be positive".into()));
    }
    let bounds = m.bounds();
    let (theta, distance) = match (m.kind, door_pitch) {
        (MechanismKind::Slider, _) => ((bounds.low[0], bounds.high[0]), (0.0, bounds.high[1])),
        (MechanismKind::Door, Some(pitch)) => {
            if !(bounds.low[2]..=bounds.high[2]).contains(&pitch) {
                return Err(Error::OutOfBounds {
                    dim: 2,
                    value: pitch,
                    low: bounds.low[2],
                    high: bounds.high[2],
                });
            }
            ((bounds.low[1], bounds.high[1]), (bounds.low[0], bounds.high[0]))
        }
        (MechanismKind::Door, None) => {
            return Err(Error::InvalidArgument(
                "prior maps need a polar action space; pass a fixed pitch slice for doors".into(),
            ))
        }
    };
    let mut grid = PolarGrid {
        resolution,
        values: Vec::with_capacity(resolution * resolution),
        theta,
        distance,
    };
    for it in 0..resolution {
        for id in 0..resolution {
            let (t, d) = grid.cell_center(it, id);
            let a = match m.kind {
                MechanismKind::Slider => vec![t, d],
                MechanismKind::Door => vec![d, t, door_pitch.unwrap_or(0.0)],
            };
            grid.values.push(prior(&a));
        }
    }
    Ok(grid)
}

/// Disk heatmap of a polar grid: angle is direction, radius is distance.
/// Exactly `resolution²` cells of class `cell`, plus an `optimum` marker.
pub fn prior_map_svg(grid: &PolarGrid, optimum: (f64, f64)) -> String {
    let size = 420.0;
    let c = size / 2.0;
    let radius = size / 2.0 - 20.0;
    let lo = grid.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let to_xy = |t: f64, d: f64| {
        let frac = (d - grid.distance.0) / (grid.distance.1 - grid.distance.0);
        let rr = frac.clamp(0.0, 1.0) * radius;
        (c + rr * t.cos(), c - rr * t.sin())
    };
    let mut out = String::new();
    header(&mut out, size, size);
    let r = grid.resolution;
    let dt = (grid.theta.1 - grid.theta.0) / r as f64;
    let dd = (grid.distance.1 - grid.distance.0) / r as f64;
    for it in 0..r {
        for id in 0..r {
            let v = grid.values[it * r + id];
            let level = if span > 0.0 { (v - lo) / span } else { 0.5 };
            let g = (level * 255.0).round() as u8;
            let t0 = grid.theta.0 + it as f64 * dt;
            let d0 = grid.distance.0 + id as f64 * dd;
            let corners = [
                to_xy(t0, d0),
                to_xy(t0 + dt, d0),
                to_xy(t0 + dt, d0 + dd),
                to_xy(t0, d0 + dd),
            ];
            let pts: Vec<String> = corners.iter().map(|(x, y)| format!("{},{}", n(*x), n(*y))).collect();
            let _ = writeln!(
                out,
                r##"<polygon class="cell" points="{}" fill="#{g:02x}{g:02x}{g:02x}" stroke="none"/>"##,
                pts.join(" ")
            );
        }
    }
    let (ox, oy) = to_xy(optimum.0, optimum.1);
    let _ = writeln!(
        out,
        r#"<circle class="optimum" cx="{}" cy="{}" r="6" fill="none" stroke="red" stroke-width="2"/>"#,
        n(ox),
        n(oy)
    );
    out.push_str("</svg>\n");
    out
}

/// Heatmap of the network (or any) prior for one mechanism. The marker sits
/// at the oracle optimum, projected to the plotted slice for doors.
pub fn prior_map<F: Fn(&[f64]) -> f64>(prior: F, m: &Mechanism, resolution: usize, door_pitch: Option<f64>) -> Result<String> {
    let grid = sample_polar(prior, m, resolution, door_pitch)?;
    let (a_star, _) = m.optimal();
    let optimum = match m.kind {
        MechanismKind::Slider => (a_star[0], a_star[1]),
        MechanismKind::Door => (a_star[1], a_star[0]),
    };
    Ok(prior_map_svg(&grid, optimum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{CurvePoint, Strategy};

    fn curves() -> Vec<Curve> {
        [Strategy::CppGpUcb, Strategy::GpUcbBaseline]
            .into_iter()
            .map(|strategy| Curve {
                strategy,
                points: [0usize, 1, 2]
                    .iter()
                    .map(|&l| CurvePoint {
                        checkpoint: l,
                        q25: 1.0,
                        median: 2.0 + l as f64,
                        q75: 4.0 + l as f64,
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn curve_point_count_and_labels() {
        let svg = learning_curve_svg(&curves()).unwrap();
        assert_eq!(svg.matches(r#"<circle class="point""#).count(), 6);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches(r#"class="iqr""#).count(), 2);
        assert!(svg.contains("training mechanisms (L)"));
        assert!(svg.contains("interactions to success"));
        assert!(learning_curve_svg(&[]).is_err());
    }

    #[test]
    fn flat_curve_does_not_divide_by_zero() {
        let c = vec![Curve {
            strategy: Strategy::RandomBaseline,
            points: vec![CurvePoint { checkpoint: 5, q25: 0.0, median: 0.0, q75: 0.0 }],
        }];
        let svg = learning_curve_svg(&c).unwrap();
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn polar_cell_count() {
        let m = Mechanism::generate(MechanismKind::Slider, 3);
        let svg = prior_map(|_| 0.2, &m, 7, None).unwrap();
        assert_eq!(svg.matches(r#"class="cell""#).count(), 49);
        assert_eq!(svg.matches(r#"class="optimum""#).count(), 1);
    }

    #[test]
    fn constant_prior_is_uniform() {
        let m = Mechanism::generate(MechanismKind::Slider, 3);
        let svg = prior_map(|_| 0.2, &m, 5, None).unwrap();
        let fills: std::collections::BTreeSet<&str> = svg
            .lines()
            .filter(|l| l.contains(r#"class="cell""#))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect();
        assert_eq!(fills.len(), 1);
    }

    #[test]
    fn doors_need_a_slice() {
        let m = Mechanism::generate(MechanismKind::Door, 3);
        assert!(prior_map(|_| 0.0, &m, 4, None).is_err());
        assert!(prior_map(|_| 0.0, &m, 4, Some(0.1)).is_ok());
        assert!(prior_map(|_| 0.0, &m, 4, Some(5.0)).is_err());
    }
}
