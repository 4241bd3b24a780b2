//! Circle homeomorphisms given by monotone piecewise-linear knot tables.

use std::io::Write;

use crate::chaos::ChaosMeasure;
use crate::error::{Error, Result};
use crate::stats::fit_line;

/// A strictly increasing map of the circle, stored through its lift
/// `H(x) = h(x) + offset` with `H(x + 1) = H(x) + 1`.
///
/// `knots[i] = h(i / M)` with `knots[0] = 0` and `knots[M] = 1`; between knots
/// the map is linear. A nonzero `offset` post-composes with a rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleHomeomorphism {
    knots: Vec<f64>,
    offset: f64,
}

/// Coarsest dyadic level used by the Hölder regression.
pub const HOLDER_FIRST_LEVEL: u32 = 3;

impl CircleHomeomorphism {
    /// Validate a knot table: pinned endpoints and strictly positive increments.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Argument("need at least two knots".into()));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::Argument("knots must start at 0 and end at 1".into()));
        }
        if let Some(i) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Degenerate { index: i });
        }
        Ok(Self { knots, offset: 0.0 })
    }

    pub fn identity(cells: usize) -> Self {
        let m = cells as f64;
        let mut knots: Vec<f64> = (0..=cells).map(|i| i as f64 / m).collect();
        knots[cells] = 1.0;
        Self { knots, offset: 0.0 }
    }

    /// Rotation `t -> t + c` on a grid of `cells` cells.
    pub fn rotation(cells: usize, c: f64) -> Self {
        Self::identity(cells).rotated(c)
    }

    /// Post-compose with the rotation by `c`.
    pub fn rotated(mut self, c: f64) -> Self {
        self.offset += c;
        self
    }

    pub fn cells(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Lift value `H(t)` for any real `t`.
    pub fn evaluate(&self, t: f64) -> f64 {
        let m = self.cells();
        let deg = t.floor();
        let s = (t - deg) * m as f64;
        let i = (s as usize).min(m - 1);
        let fr = s - i as f64;
        deg + self.knots[i] + (self.knots[i + 1] - self.knots[i]) * fr + self.offset
    }

    /// The inverse lift `H^{-1}(s)` for any real `s`.
    pub fn invert(&self, s: f64) -> f64 {
        let m = self.cells();
        let s = s - self.offset;
        let deg = s.floor();
        let r = s - deg;
        // last knot index with knots[i] <= r
        let i = self.knots.partition_point(|&k| k <= r).clamp(1, m) - 1;
        let fr = (r - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        deg + (i as f64 + fr) / m as f64
    }

    /// Increment `H((i+1)/M) - H(i/M)` of cell `i`, indices taken mod M.
    pub fn increment(&self, i: usize) -> f64 {
        let i = i % self.cells();
        self.knots[i + 1] - self.knots[i]
    }

    /// Empirical Hölder exponent from dyadic increments.
    ///
    /// For each level `j` in `3..=depth` take the largest increment over the
    /// `2^j` dyadic cells; the exponent is the least-squares slope of
    /// `-log2(max increment)` against `j`.
    pub fn holder_exponent(&self, depth: u32) -> Result<f64> {
        let m = self.cells();
        check_depth(depth, m)?;
        let step_at = |j: u32| m >> j;
        dyadic_holder_exponent(depth, |j, i| {
            let st = step_at(j);
            self.knots[(i + 1) * st] - self.knots[i * st]
        })
    }

    /// Build the map from a measure rotated by `shift` cells.
    pub fn from_measure_rotated(measure: &ChaosMeasure, shift: usize) -> Result<Self> {
        let m = measure.grid_size();
        let masses: Vec<f64> = (0..m).map(|i| measure.cell_masses[(i + shift) % m]).collect();
        knots_from_masses(&masses)
    }

    /// Write `(t, h(t))` rows at the knots.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "h"])?;
        let m = self.cells() as f64;
        for (i, k) in self.knots.iter().enumerate() {
            w.serialize((i as f64 / m, k + self.offset))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Graph of `h` as a standalone SVG with at most `max_points` vertices.
    pub fn write_svg<W: Write>(&self, mut writer: W, max_points: usize) -> Result<()> {
        let stride = (self.cells() / max_points.max(2)).max(1);
        let size = 400.0;
        let pts: Vec<(f64, f64)> = (0..=self.cells())
            .step_by(stride)
            .chain(std::iter::once(self.cells()))
            .map(|i| (i as f64 / self.cells() as f64, self.knots[i]))
            .map(|(t, h)| (20.0 + t * size, 20.0 + (1.0 - h) * size))
            .collect();
        crate::export::write_svg_polyline(&mut writer, &pts, size + 40.0, size + 40.0, false)
    }
}

fn check_depth(depth: u32, cells: usize) -> Result<()> {
    if depth <= HOLDER_FIRST_LEVEL {
        return Err(Error::Argument(format!(
            "Hölder depth must exceed {HOLDER_FIRST_LEVEL}, got {depth}"
        )));
    }
    if depth >= usize::BITS || (1usize << depth) > cells || cells % (1usize << depth) != 0 {
        return Err(Error::Argument(format!(
            "depth {depth} is too fine for a grid of {cells} cells"
        )));
    }
    Ok(())
}

/// Regression slope of `-log2 max_i increment(j, i)` over `j in 3..=depth`,
/// where `i` ranges over `0..2^j`.
pub fn dyadic_holder_exponent(depth: u32, increment: impl Fn(u32, usize) -> f64) -> Result<f64> {
    let mut levels = Vec::new();
    let mut logs = Vec::new();
    for j in HOLDER_FIRST_LEVEL..=depth {
        let max = (0..1usize << j).map(|i| increment(j, i)).fold(0.0, f64::max);
        if !(max > 0.0) || !max.is_finite() {
            return Err(Error::Numeric(format!("no positive increment at level {j}")));
        }
        levels.push(j as f64);
        logs.push(-max.log2());
    }
    fit_line(&levels, &logs)
        .map(|f| f.slope)
        .ok_or_else(|| Error::Argument("need at least two levels".into()))
}

/// Hölder exponent of a closed sampled path `points[0..=2^k]`.
pub fn sampled_holder_exponent<T>(points: &[T], depth: u32, dist: impl Fn(&T, &T) -> f64) -> Result<f64> {
    let n = points.len().saturating_sub(1);
    check_depth(depth, n)?;
    dyadic_holder_exponent(depth, |j, i| {
        let st = n >> j;
        dist(&points[i * st], &points[(i + 1) * st])
    })
}

fn knots_from_masses(masses: &[f64]) -> Result<CircleHomeomorphism> {
    let total: f64 = masses.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("total mass {total} cannot be normalized")));
    }
    let mut knots = Vec::with_capacity(masses.len() + 1);
    let mut acc = 0.0;
    knots.push(0.0);
    for (i, m) in masses.iter().enumerate() {
        if !(*m > 0.0) {
            return Err(Error::Degenerate { index: i });
        }
        acc += m;
        // a positive mass below one ulp of the running knot would leave a
        // zero increment; move to the next representable value instead
        let prev = knots[i];
        knots.push(f64::max(acc / total, f64::next_up(prev)));
    }
    *knots.last_mut().unwrap() = 1.0;
    CircleHomeomorphism::from_knots(knots)
}

/// `h(t) = tau([0, t)) / tau([0, 1))` on the measure's grid.
pub fn build_homeo(measure: &ChaosMeasure) -> Result<CircleHomeomorphism> {
    knots_from_masses(&measure.cell_masses)
}
