//! Beurling–Ahlfors extension of circle homeomorphisms to the disk.
//!
//! The lift `H` of the circle map is extended to the upper half-plane by
//! `F(x + iy) = (a + b)/2 + i (a - b)`, where `a` and `b` are the averages of
//! `H` over `[x, x + y]` and `[x - y, x]`. Since `F(zeta + 1) = F(zeta) + 1`,
//! the map `f(e^{2 pi i zeta}) = e^{2 pi i F(zeta)}` is a well defined self-map
//! of the disk. All averages are exact integrals of the piecewise-linear lift.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::ChaosMeasure;
use crate::error::{Error, Result};
use crate::grid::{distortion, BeltramiField, Lattice, CLIP_LEVEL};
use crate::homeo::CircleHomeomorphism;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
/// Windows spanning at most this many cells are integrated cell by cell.
const LOCAL_CELLS: f64 = 256.0;

/// Anything that assigns a distortion `K(z) >= 1` to points of the plane.
pub trait Distortion: Sync {
    fn distortion(&self, z: Complex64) -> f64;
}

impl<F: Fn(Complex64) -> f64 + Sync> Distortion for F {
    fn distortion(&self, z: Complex64) -> f64 {
        self(z)
    }
}

/// Map value and Wirtinger derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: Complex64,
    pub dz: Complex64,
    pub dzbar: Complex64,
}

impl Jet {
    pub fn mu(&self) -> Complex64 {
        self.dzbar / self.dz
    }

    pub fn jacobian(&self) -> f64 {
        self.dz.norm_sqr() - self.dzbar.norm_sqr()
    }
}

/// Half-plane extension values and first partials at one point.
#[derive(Debug, Clone, Copy)]
struct HalfPlaneJet {
    u: f64,
    v: f64,
    ux: f64,
    uy: f64,
    vx: f64,
    vy: f64,
}

/// The Beurling–Ahlfors extension of a circle homeomorphism.
#[derive(Debug, Clone)]
pub struct DiskExtension {
    h: CircleHomeomorphism,
    /// `cell_integral[i] = int_0^{i/M} h`.
    cell_integral: Vec<f64>,
}

impl DiskExtension {
    pub fn new(h: CircleHomeomorphism) -> Self {
        let m = h.cells();
        let k = h.knots();
        let mut cell_integral = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        cell_integral.push(0.0);
        for i in 0..m {
            acc += 0.5 * (k[i] + k[i + 1]) / m as f64;
            cell_integral.push(acc);
        }
        Self { h, cell_integral }
    }

    pub fn homeo(&self) -> &CircleHomeomorphism {
        &self.h
    }

    fn cells(&self) -> usize {
        self.h.cells()
    }

    fn slope(&self, cell: i64) -> f64 {
        let m = self.cells() as i64;
        self.h.increment(cell.rem_euclid(m) as usize) * m as f64
    }

    /// `int_0^x (H - offset)` for any real `x`.
    fn lift_integral(&self, x: f64) -> f64 {
        let m = self.cells();
        let deg = x.floor();
        let r = x - deg;
        let s = r * m as f64;
        let i = (s as usize).min(m - 1);
        let fr = s - i as f64;
        let k = self.h.knots();
        let g0 = self.cell_integral[i] + (k[i] * fr + (k[i + 1] - k[i]) * fr * fr / 2.0) / m as f64;
        let i1 = self.cell_integral[m];
        deg * i1 + deg * (deg - 1.0) / 2.0 + g0 + deg * r
    }

    /// `(H(x + y) - H(x), int_x^{x+y} (H - H(x)))`.
    fn forward_window(&self, x: f64, y: f64) -> (f64, f64) {
        let mf = self.cells() as f64;
        if y * mf > LOCAL_CELLS {
            let p = self.h.evaluate(x + y) - self.h.evaluate(x);
            let i = self.lift_integral(x + y) - self.lift_integral(x) - y * (self.h.evaluate(x) - self.h.offset());
            return (p, i);
        }
        let end = x + y;
        let mut cell = (x * mf).floor() as i64;
        let mut t = x;
        let (mut v, mut acc) = (0.0, 0.0);
        while t < end {
            let edge = (cell + 1) as f64 / mf;
            let seg_end = edge.min(end);
            let len = seg_end - t;
            let s = self.slope(cell);
            acc += len * v + 0.5 * s * len * len;
            v += s * len;
            t = seg_end;
            cell += 1;
        }
        (v, acc)
    }

    /// `(H(x) - H(x - y), int_{x-y}^x (H(x) - H))`.
    fn backward_window(&self, x: f64, y: f64) -> (f64, f64) {
        let mf = self.cells() as f64;
        if y * mf > LOCAL_CELLS {
            let q = self.h.evaluate(x) - self.h.evaluate(x - y);
            let j = y * (self.h.evaluate(x) - self.h.offset()) - (self.lift_integral(x) - self.lift_integral(x - y));
            return (q, j);
        }
        let start = x - y;
        let mut cell = (x * mf).ceil() as i64 - 1;
        let mut t = x;
        let (mut v, mut acc) = (0.0, 0.0);
        while t > start {
            let edge = cell as f64 / mf;
            let seg_start = edge.max(start);
            let len = t - seg_start;
            let s = self.slope(cell);
            acc += len * v + 0.5 * s * len * len;
            v += s * len;
            t = seg_start;
            cell -= 1;
        }
        (v, acc)
    }

    fn half_plane(&self, x: f64, y: f64) -> HalfPlaneJet {
        let hx = self.h.evaluate(x);
        let (p, i_plus) = self.forward_window(x, y);
        let (q, i_minus) = self.backward_window(x, y);
        let d_plus = i_plus / y;
        let d_minus = i_minus / y;
        HalfPlaneJet {
            u: hx + 0.5 * (d_plus - d_minus),
            v: d_plus + d_minus,
            ux: 0.5 * (p + q) / y,
            uy: 0.5 * ((p - d_plus) - (q - d_minus)) / y,
            vx: (p - q) / y,
            vy: ((p - d_plus) + (q - d_minus)) / y,
        }
    }

    /// `e^{2 pi i H(t)}`, the boundary values of the extension.
    pub fn boundary(&self, t: f64) -> Complex64 {
        Complex64::from_polar(1.0, TWO_PI * self.h.evaluate(t))
    }

    /// `f(z)` for `|z| < 1`; points with `|z| >= 1` are sent to the boundary
    /// value at `z / |z|`.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let r = z.norm();
        if r == 0.0 {
            return Complex64::default();
        }
        let x = z.arg() / TWO_PI;
        if r >= 1.0 {
            return self.boundary(x);
        }
        let y = -r.ln() / TWO_PI;
        let j = self.half_plane(x, y);
        Complex64::from_polar((-TWO_PI * j.v).exp(), TWO_PI * j.u)
    }

    /// Value and exact derivatives at `0 < |z| < 1`.
    pub fn jet(&self, z: Complex64) -> Option<Jet> {
        let r = z.norm();
        if r == 0.0 || r >= 1.0 {
            return None;
        }
        let x = z.arg() / TWO_PI;
        let y = -r.ln() / TWO_PI;
        let j = self.half_plane(x, y);
        let i = Complex64::i();
        let fx = Complex64::new(j.ux, j.vx);
        let fy = Complex64::new(j.uy, j.vy);
        let d_zeta = 0.5 * (fx - i * fy);
        let d_zetabar = 0.5 * (fx + i * fy);
        let value = Complex64::from_polar((-TWO_PI * j.v).exp(), TWO_PI * j.u);
        Some(Jet {
            value,
            dz: value * d_zeta / z,
            dzbar: -value * d_zetabar / z.conj(),
        })
    }

    /// Exact dilatation and distortion at `0 < |z| < 1`.
    pub fn dilatation_exact(&self, z: Complex64) -> Result<(Complex64, f64)> {
        let jet = self
            .jet(z)
            .ok_or_else(|| Error::Argument(format!("{z} is not in the punctured open disk")))?;
        if jet.dz.norm() < f64::MIN_POSITIVE {
            return Err(Error::Singularity(format!("f_z vanishes at {z}")));
        }
        let mu = jet.mu();
        Ok((mu, distortion(mu.norm().min(CLIP_LEVEL))))
    }

    /// Finite-difference dilatation with step `h` at an interior point.
    pub fn dilatation(&self, z: Complex64, h: f64) -> Result<Dilatation> {
        if z.norm() + h >= 1.0 {
            return Err(Error::Argument(format!("{z} is within one step of the boundary")));
        }
        dilatation(|w| self.eval(w), z, h)
    }

    /// Finite-difference dilatation on the lattice points of the closed disk.
    /// Points closer than two steps to the circle use the value at their
    /// radial projection onto `|z| = 1 - 2h`.
    pub fn beltrami_field(&self, lattice: Lattice) -> Result<BeltramiField> {
        let h = lattice.step();
        let limit = 1.0 - 2.0 * h;
        let results: Vec<(usize, Result<Dilatation>)> = (0..lattice.len())
            .into_par_iter()
            .filter_map(|idx| {
                let z = lattice.point_at(idx);
                let r = z.norm();
                if r > 1.0 {
                    return None;
                }
                let zc = if r > limit { z * (limit / r) } else { z };
                Some((idx, dilatation(|w| self.eval(w), zc, h)))
            })
            .collect();
        let mut field = BeltramiField::zero(lattice);
        for (idx, res) in results {
            let d = res?;
            field.mu[idx] = d.mu;
            field.clipped += d.clipped as usize;
        }
        if field.clipped > 0 {
            log::warn!(
                "clipped |mu| >= 1 at {} of the disk lattice points ({:.4}%)",
                field.clipped,
                100.0 * field.clipped_fraction()
            );
        }
        Ok(field)
    }

    /// Solve `f(z) = w` by damped Newton iteration in the half-plane
    /// coordinate, started on the level set `v = -ln|w| / 2 pi` above
    /// `H^{-1}(arg w / 2 pi)`.
    pub fn invert(&self, w: Complex64) -> Result<Complex64> {
        let rw = w.norm();
        if rw == 0.0 {
            return Ok(Complex64::default());
        }
        if rw >= 1.0 {
            return Err(Error::Argument(format!("{w} is not in the open disk")));
        }
        let target_u = w.arg() / TWO_PI;
        let target_v = -rw.ln() / TWO_PI;
        let residual = |x: f64, y: f64| {
            let j = self.half_plane(x, y);
            let r = (j.u - target_u).hypot(j.v - target_v);
            (j, r)
        };
        let mut x = self.h.invert(target_u);
        let mut y = self.level_height(x, target_v);
        let (mut j, mut r) = residual(x, y);
        let tol = 1e-13 * (1.0 + target_v);
        for _ in 0..200 {
            if r < tol {
                return Ok(Complex64::from_polar((-TWO_PI * y).exp(), TWO_PI * x));
            }
            let det = j.ux * j.vy - j.uy * j.vx;
            if !(det > 0.0) {
                break;
            }
            let (ru, rv) = (j.u - target_u, j.v - target_v);
            let dx = (j.vy * ru - j.uy * rv) / det;
            let dy = (-j.vx * ru + j.ux * rv) / det;
            let mut t = 1.0;
            loop {
                let (nx, ny) = (x - t * dx, y - t * dy);
                if ny > 0.0 {
                    let (nj, nr) = residual(nx, ny);
                    if nr < r {
                        (x, y, j, r) = (nx, ny, nj, nr);
                        break;
                    }
                }
                t *= 0.5;
                if t < 1e-12 {
                    // no descent left at working precision
                    if r < 1e3 * tol {
                        return Ok(Complex64::from_polar((-TWO_PI * y).exp(), TWO_PI * x));
                    }
                    return Err(Error::NonInjective(format!("could not invert the extension at {w}")));
                }
            }
        }
        Err(Error::NonInjective(format!("could not invert the extension at {w}")))
    }

    /// The `y` with `v(x, y) = target`; `v` increases from 0 along vertical lines.
    fn level_height(&self, x: f64, target: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, target.max(1e-12));
        for _ in 0..64 {
            if self.half_plane(x, hi).v >= target {
                break;
            }
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.half_plane(x, mid).v < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

impl Distortion for DiskExtension {
    /// Exact distortion inside the disk and 1 outside.
    fn distortion(&self, z: Complex64) -> f64 {
        // the cover coordinate is singular at the origin only, not the map
        let z = if z == Complex64::default() {
            Complex64::new(1e-9, 0.0)
        } else {
            z
        };
        match self.dilatation_exact(z) {
            Ok((_, k)) => k,
            Err(_) if z.norm() >= 1.0 => 1.0,
            Err(_) => f64::NAN,
        }
    }
}

/// A finite-difference dilatation sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dilatation {
    pub mu: Complex64,
    pub k: f64,
    /// Whether `|mu| >= 1` was clipped.
    pub clipped: bool,
}

/// Centered-difference dilatation of an arbitrary map.
pub fn dilatation(f: impl Fn(Complex64) -> Complex64, z: Complex64, h: f64) -> Result<Dilatation> {
    let i = Complex64::i();
    let fx = (f(z + h) - f(z - h)) / (2.0 * h);
    let fy = (f(z + i * h) - f(z - i * h)) / (2.0 * h);
    let dz = 0.5 * (fx - i * fy);
    let dzbar = 0.5 * (fx + i * fy);
    let scale = dz.norm().max(dzbar.norm());
    if !(scale > f64::MIN_POSITIVE * 1e10) {
        return Err(Error::Singularity(format!("derivatives vanish at {z}")));
    }
    if !(scale.is_finite()) {
        return Err(Error::Numeric(format!("dilatation is not finite at {z}")));
    }
    if dz.norm() <= 1e-12 * scale {
        // orientation-reversing to working precision
        log::warn!("f_z vanishes at {z}; clipping");
        return Ok(Dilatation {
            mu: dzbar / dzbar.norm() * CLIP_LEVEL,
            k: distortion(CLIP_LEVEL),
            clipped: true,
        });
    }
    let mut mu = dzbar / dz;
    let mut clipped = false;
    if mu.norm() >= 1.0 {
        log::warn!("|mu| = {} at {z}; clipping", mu.norm());
        mu *= CLIP_LEVEL / mu.norm();
        clipped = true;
    }
    Ok(Dilatation {
        mu,
        k: distortion(mu.norm()),
        clipped,
    })
}

/// A dyadic interval `[i 2^{-j}, (i + 1) 2^{-j})` of the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicInterval {
    pub level: u32,
    pub index: usize,
}

impl DyadicInterval {
    pub fn new(level: u32, index: usize) -> Result<Self> {
        if level >= 40 || index >= 1usize << level {
            return Err(Error::Argument(format!("no dyadic interval {index} at level {level}")));
        }
        Ok(Self { level, index })
    }

    /// The dyadic interval `[a, b)`, if it is one.
    pub fn from_endpoints(a: f64, b: f64) -> Result<Self> {
        let len = b - a;
        if !(len > 0.0) || a < 0.0 || b > 1.0 {
            return Err(Error::Argument(format!("[{a}, {b}) is not a subinterval of [0, 1)")));
        }
        let level = (-len.log2()).round();
        if (0.5f64.powf(level) - len).abs() > 1e-15 || level > 39.0 {
            return Err(Error::Argument(format!("[{a}, {b}) does not have dyadic length")));
        }
        let index = a / len;
        if (index - index.round()).abs() > 1e-9 {
            return Err(Error::Argument(format!("[{a}, {b}) is not dyadic-aligned")));
        }
        Self::new(level as u32, index.round() as usize)
    }

    pub fn length(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    pub fn start(&self) -> f64 {
        self.index as f64 * self.length()
    }
}

/// Subintervals of size `|I| / 16` taken from `I` and its two neighbours.
const WHITNEY_PIECES: usize = 48;

/// `(sum tau(J)) (sum 1 / tau(J'))` over the 48 subintervals of size
/// `|I| / 16` of `I` and its two neighbouring dyadic intervals.
pub fn whitney_distortion_bound(measure: &ChaosMeasure, interval: DyadicInterval) -> Result<f64> {
    let m = measure.grid_size();
    let pieces_per_unit = 1usize << (interval.level + 4);
    if !m.is_power_of_two() || pieces_per_unit > m {
        return Err(Error::Argument(format!(
            "|I| = 2^-{} is too short for a grid of {m} cells",
            interval.level
        )));
    }
    let c = m / pieces_per_unit;
    let cells_per_interval = 16 * c;
    let start = (interval.index * cells_per_interval + m - cells_per_interval) % m;
    let masses: Vec<f64> = (0..WHITNEY_PIECES)
        .map(|k| measure.cell_range_mass(start + k * c, c))
        .collect();
    let sum: f64 = masses.iter().sum();
    let inv: f64 = masses.iter().map(|t| 1.0 / t).sum();
    Ok(sum * inv)
}

/// Largest distortion over the box `{x in I, |I|/2 <= y <= |I|}` next to the
/// circle, compared with the dyadic bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WhitneyCheck {
    pub interval: DyadicInterval,
    pub bound: f64,
    pub max_k: f64,
    pub ratio: f64,
}

pub fn whitney_check(
    ext: &DiskExtension,
    measure: &ChaosMeasure,
    interval: DyadicInterval,
    samples: usize,
) -> Result<WhitneyCheck> {
    let bound = whitney_distortion_bound(measure, interval)?;
    let len = interval.length();
    let n = samples.max(2);
    let mut max_k = 1.0f64;
    for a in 0..n {
        for b in 0..n {
            let x = interval.start() + len * a as f64 / (n - 1) as f64;
            let y = len * (0.5 + 0.5 * b as f64 / (n - 1) as f64);
            let z = Complex64::from_polar((-TWO_PI * y).exp(), TWO_PI * x);
            let (_, k) = ext.dilatation_exact(z)?;
            max_k = max_k.max(k);
        }
    }
    Ok(WhitneyCheck {
        interval,
        bound,
        max_k,
        ratio: max_k / bound,
    })
}
