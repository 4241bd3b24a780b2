//! Sampled closed curves: simplicity checks and Hausdorff distances.

use std::io::Write;

use num_complex::Complex64;

use crate::error::Result;
use crate::homeo::sampled_holder_exponent;

/// A closed polygon `points[0], ..., points[n] = points[0]` sampled at the
/// parameters `t_j = j / n` of the circle.
#[derive(Debug, Clone, PartialEq)]
pub struct JordanCurve {
    pub points: Vec<Complex64>,
}

impl JordanCurve {
    /// From closed samples; the last point is forced to equal the first.
    pub fn from_closed(mut points: Vec<Complex64>) -> Self {
        assert!(points.len() >= 4, "a closed curve needs at least three vertices");
        let first = points[0];
        *points.last_mut().unwrap() = first;
        Self { points }
    }

    /// Number of distinct vertices.
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_closed(&self) -> bool {
        self.points.first() == self.points.last()
    }

    /// Number of crossing pairs of non-adjacent edges.
    pub fn self_intersections(&self) -> usize {
        self_intersections(&self.points)
    }

    pub fn is_simple(&self) -> bool {
        self.self_intersections() == 0
    }

    /// Dyadic Hölder exponent of `t -> curve(t)`.
    pub fn holder_exponent(&self, depth: u32) -> Result<f64> {
        sampled_holder_exponent(&self.points, depth, |a, b| (a - b).norm())
    }

    pub fn hausdorff(&self, other: &JordanCurve) -> f64 {
        hausdorff(&self.points[..self.len()], &other.points[..other.len()])
    }

    /// Write `(t, x, y)` rows for the distinct vertices.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "x", "y"])?;
        let n = self.len() as f64;
        for (j, p) in self.points[..self.len()].iter().enumerate() {
            w.serialize((j as f64 / n, p.re, p.im))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Render the curve as a closed SVG polygon scaled into a 500 px frame.
    pub fn write_svg<W: Write>(&self, mut writer: W) -> Result<()> {
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.points {
            lo_x = lo_x.min(p.re);
            hi_x = hi_x.max(p.re);
            lo_y = lo_y.min(p.im);
            hi_y = hi_y.max(p.im);
        }
        let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-12);
        let size = 500.0;
        let margin = 20.0;
        let scale = (size - 2.0 * margin) / span;
        let pts: Vec<(f64, f64)> = self.points[..self.len()]
            .iter()
            .map(|p| (margin + (p.re - lo_x) * scale, size - margin - (p.im - lo_y) * scale))
            .collect();
        crate::export::write_svg_polyline(&mut writer, &pts, size, size, true)
    }
}

fn orient(a: Complex64, b: Complex64, c: Complex64) -> f64 {
    (b.re - a.re) * (c.im - a.im) - (b.im - a.im) * (c.re - a.re)
}

fn on_segment(a: Complex64, b: Complex64, p: Complex64) -> bool {
    p.re >= a.re.min(b.re) && p.re <= a.re.max(b.re) && p.im >= a.im.min(b.im) && p.im <= a.im.max(b.im)
}

/// Closed-segment intersection test with exact collinear handling.
pub fn segments_intersect(p1: Complex64, p2: Complex64, q1: Complex64, q2: Complex64) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Count crossings among the edges of a closed polyline (`points` closed,
/// last = first) with a sweep over `x`; edges sharing a vertex are skipped.
pub fn self_intersections(points: &[Complex64]) -> usize {
    let n = points.len() - 1;
    if n < 3 {
        return 0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    let min_x = |e: usize| points[e].re.min(points[e + 1].re);
    let max_x = |e: usize| points[e].re.max(points[e + 1].re);
    order.sort_by(|&a, &b| min_x(a).total_cmp(&min_x(b)));
    let adjacent = |a: usize, b: usize| {
        let d = a.abs_diff(b);
        d <= 1 || d == n - 1
    };
    let mut active: Vec<usize> = Vec::new();
    let mut count = 0;
    for &e in &order {
        let x = min_x(e);
        active.retain(|&a| max_x(a) >= x);
        for &a in &active {
            if adjacent(a, e) {
                continue;
            }
            let (lo_e, hi_e) = (points[e].im.min(points[e + 1].im), points[e].im.max(points[e + 1].im));
            let (lo_a, hi_a) = (points[a].im.min(points[a + 1].im), points[a].im.max(points[a + 1].im));
            if hi_e < lo_a || hi_a < lo_e {
                continue;
            }
            if segments_intersect(points[a], points[a + 1], points[e], points[e + 1]) {
                count += 1;
            }
        }
        active.push(e);
    }
    count
}

/// Symmetric discrete Hausdorff distance between two point sets.
pub fn hausdorff(a: &[Complex64], b: &[Complex64]) -> f64 {
    let directed = |p: &[Complex64], q: &[Complex64]| {
        p.iter()
            .map(|x| q.iter().map(|y| (x - y).norm_sqr()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a)).sqrt()
}

/// Distance from the unit circle, `max_j ||p_j| - 1|`.
pub fn distance_from_unit_circle(curve: &JordanCurve) -> f64 {
    curve.points.iter().map(|p| (p.norm() - 1.0).abs()).fold(0.0, f64::max)
}
