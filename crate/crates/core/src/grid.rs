//! Square lattices over `[-S, S]^2` and complex fields sampled on them.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `side x side` lattice with spacing `2S / side`, stored row-major with
/// rows indexing `y`. Point `(ix, iy)` is `(-S + ix h) + i (-S + iy h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    side: usize,
    half_width: f64,
}

impl Lattice {
    pub fn new(side: usize, half_width: f64) -> Result<Self> {
        if side < 8 || !side.is_power_of_two() {
            return Err(Error::Config(format!("lattice side {side} is not a power of two >= 8")));
        }
        if !(half_width > 1.0) || !half_width.is_finite() {
            return Err(Error::Config(format!(
                "domain half-width must exceed 1 (the disk must fit), got {half_width}"
            )));
        }
        Ok(Self { side, half_width })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn step(&self) -> f64 {
        2.0 * self.half_width / self.side as f64
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.side + ix
    }

    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.side, idx / self.side)
    }

    pub fn point(&self, ix: usize, iy: usize) -> Complex64 {
        let h = self.step();
        Complex64::new(-self.half_width + ix as f64 * h, -self.half_width + iy as f64 * h)
    }

    pub fn point_at(&self, idx: usize) -> Complex64 {
        let (ix, iy) = self.coords(idx);
        self.point(ix, iy)
    }

    /// All lattice points in storage order.
    pub fn points(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.point_at(i)).collect()
    }

    /// Centered-difference Wirtinger derivatives `(f_z, f_zbar)` of lattice
    /// values at an interior node; `None` on the outermost ring.
    pub fn wirtinger(&self, values: &[Complex64], ix: usize, iy: usize) -> Option<(Complex64, Complex64)> {
        let n = self.side;
        if ix == 0 || iy == 0 || ix + 1 >= n || iy + 1 >= n {
            return None;
        }
        let two_h = 2.0 * self.step();
        let fx = (values[self.index(ix + 1, iy)] - values[self.index(ix - 1, iy)]) / two_h;
        let fy = (values[self.index(ix, iy + 1)] - values[self.index(ix, iy - 1)]) / two_h;
        let i = Complex64::i();
        Some((0.5 * (fx - i * fy), 0.5 * (fx + i * fy)))
    }
}

/// A dilatation field on a lattice, zero outside the closed unit disk.
#[derive(Debug, Clone, PartialEq)]
pub struct BeltramiField {
    pub lattice: Lattice,
    pub mu: Vec<Complex64>,
    /// Lattice points where `|mu| >= 1` was clipped while building the field.
    pub clipped: usize,
}

/// Largest modulus a clipped dilatation is set to.
pub const CLIP_LEVEL: f64 = 1.0 - 1e-6;

impl BeltramiField {
    pub fn zero(lattice: Lattice) -> Self {
        Self {
            lattice,
            mu: vec![Complex64::default(); lattice.len()],
            clipped: 0,
        }
    }

    /// Sample `mu` at lattice points of the closed unit disk, clipping
    /// `|mu| >= 1` to `CLIP_LEVEL` and counting the clips.
    pub fn from_fn(lattice: Lattice, mu: impl Fn(Complex64) -> Complex64) -> Result<Self> {
        let mut field = Self::zero(lattice);
        for idx in 0..lattice.len() {
            let z = lattice.point_at(idx);
            if z.norm_sqr() <= 1.0 {
                let v = mu(z);
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::Numeric(format!("dilatation is not finite at {z}")));
                }
                field.mu[idx] = v;
            }
        }
        field.clip();
        Ok(field)
    }

    fn clip(&mut self) {
        let mut count = 0;
        for v in self.mu.iter_mut() {
            let a = v.norm();
            if a >= 1.0 {
                *v *= CLIP_LEVEL / a;
                count += 1;
            }
        }
        if count > 0 {
            log::warn!("clipped |mu| >= 1 at {count} lattice points");
        }
        self.clipped += count;
    }

    pub fn sup_abs(&self) -> f64 {
        self.mu.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn support_len(&self) -> usize {
        self.mu.iter().filter(|v| v.norm_sqr() > 0.0).count()
    }

    pub fn distortion_at(&self, idx: usize) -> f64 {
        distortion(self.mu[idx].norm())
    }

    /// Fraction of masked lattice points that needed clipping.
    pub fn clipped_fraction(&self) -> f64 {
        let masked = (0..self.lattice.len())
            .filter(|&i| self.lattice.point_at(i).norm_sqr() <= 1.0)
            .count();
        self.clipped as f64 / masked.max(1) as f64
    }

    /// Write `(z_re, z_im, abs_mu, K)` rows for points inside the disk.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["z_re", "z_im", "abs_mu", "K"])?;
        for (idx, v) in self.mu.iter().enumerate() {
            let z = self.lattice.point_at(idx);
            if z.norm_sqr() <= 1.0 {
                w.serialize((z.re, z.im, v.norm(), distortion(v.norm())))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `K = (1 + |mu|) / (1 - |mu|)`.
pub fn distortion(abs_mu: f64) -> f64 {
    (1.0 + abs_mu) / (1.0 - abs_mu)
}

/// How a dilatation is pulled strictly inside the unit ball before solving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularization {
    /// Multiply by `1 - eps` everywhere.
    Scale,
    /// Cap the modulus at `1 - eps`, leaving smaller values untouched.
    Clamp,
}

/// Multiply the field by `1 - eps`.
pub fn truncate(field: &BeltramiField, eps: f64) -> Result<BeltramiField> {
    regularize(field, eps, Regularization::Scale)
}

pub fn regularize(field: &BeltramiField, eps: f64, mode: Regularization) -> Result<BeltramiField> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Argument(format!("truncation eps must lie in (0, 1), got {eps}")));
    }
    let cap = 1.0 - eps;
    let mu = field
        .mu
        .iter()
        .map(|&v| match mode {
            Regularization::Scale => v * cap,
            Regularization::Clamp => {
                let a = v.norm();
                if a > cap {
                    v * (cap / a)
                } else {
                    v
                }
            }
        })
        .collect();
    Ok(BeltramiField {
        lattice: field.lattice,
        mu,
        clipped: field.clipped,
    })
}

/// Average `mu` over the `[1, 2, 1] x [1, 2, 1] / 16` stencil, `passes` times,
/// at lattice points of the closed unit disk. Points outside keep zero, so
/// the support is unchanged and `sup |mu|` cannot grow.
pub fn mollify(field: &BeltramiField, passes: usize) -> BeltramiField {
    let l = field.lattice;
    let n = l.side();
    let mut out = field.clone();
    const W: [(isize, f64); 3] = [(-1, 1.0), (0, 2.0), (1, 1.0)];
    for _ in 0..passes {
        let src = out.mu.clone();
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                let idx = l.index(ix, iy);
                if l.point_at(idx).norm_sqr() > 1.0 {
                    continue;
                }
                let mut acc = Complex64::default();
                for (dy, wy) in W {
                    for (dx, wx) in W {
                        acc += src[l.index(ix.wrapping_add_signed(dx), iy.wrapping_add_signed(dy))] * (wx * wy);
                    }
                }
                out.mu[idx] = acc / 16.0;
            }
        }
    }
    out
}
