//! Principal solutions of compactly supported Beltrami equations on a
//! periodic lattice.
//!
//! The plane Cauchy and Beurling transforms are approximated by FFT
//! multipliers on the torus `[-S, S]^2` plus two corrections: the affine part
//! that the torus cannot carry, and the Taylor expansion of the periodic
//! images of the kernel, which for the square period lattice `2S Z[i]` is a
//! series in the Eisenstein sums `G_{4}, G_{8}, ...`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::{BeltramiField, Lattice, Regularization};

/// `sum' 1/w^4` over the nonzero Gaussian integers, `Gamma(1/4)^8 / (960 pi^2)`.
pub const GAUSSIAN_G4: f64 = 3.151_212_002_153_9;

/// Number of Eisenstein terms `G_4, G_8, ..., G_{4 * EISENSTEIN_TERMS}` kept.
const EISENSTEIN_TERMS: usize = 5;
/// Exterior Laurent series length.
const LAURENT_TERMS: usize = 80;
/// Radius beyond which lattice values are replaced by the Laurent series.
pub const EXTERIOR_RADIUS: f64 = 1.5;

/// Frequency symbol of `d/dx + i d/dy` used by the multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symbol {
    /// Exact derivative symbol `k_x + i k_y`.
    Spectral,
    /// Symbol of the centered difference, `(sin(k_x h) + i sin(k_y h)) / h`.
    CenteredDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: usize,
    pub half_width: f64,
    pub epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub regularization: Regularization,
    pub symbol: Symbol,
    /// Number of boundary samples used for curve extraction.
    pub curve_samples: usize,
    /// Passes of `grid::mollify` applied to the regularized dilatation in
    /// the welding pipeline.
    pub mollify: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid: 1024,
            half_width: 2.0,
            epsilon: 0.05,
            tol: 1e-6,
            max_iter: 5000,
            regularization: Regularization::Clamp,
            symbol: Symbol::Spectral,
            curve_samples: 4096,
            mollify: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<Lattice> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if self.curve_samples < 16 || !self.curve_samples.is_power_of_two() {
            return Err(Error::Config(format!(
                "curve sample count {} is not a power of two >= 16",
                self.curve_samples
            )));
        }
        if self.half_width <= EXTERIOR_RADIUS + 0.1 {
            return Err(Error::Config(format!(
                "half-width {} leaves no room outside the exterior radius {EXTERIOR_RADIUS}",
                self.half_width
            )));
        }
        Lattice::new(self.grid, self.half_width)
    }
}

/// Eisenstein sums `G_{2n}` of the Gaussian integers for `n = 2..=max_n`
/// (index `n`), from the Weierstrass coefficient recurrence with `g_3 = 0`.
pub fn gaussian_eisenstein(max_n: usize) -> Vec<f64> {
    // c_n = (2n - 1) G_{2n} are the Laurent coefficients of the p-function.
    let mut c = vec![0.0; max_n.max(3) + 1];
    c[2] = 3.0 * GAUSSIAN_G4;
    for n in 4..=max_n {
        let s: f64 = (2..=n - 2).map(|m| c[m] * c[n - m]).sum();
        c[n] = 3.0 * s / ((2 * n + 1) as f64 * (n - 3) as f64);
    }
    c.iter()
        .enumerate()
        .map(|(n, cn)| if n >= 2 { cn / (2 * n - 1) as f64 } else { 0.0 })
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// FFT multipliers and image corrections for one lattice.
pub struct Transforms {
    lattice: Lattice,
    fft: Fft2,
    beurling: Vec<Complex64>,
    cauchy: Vec<Complex64>,
    /// `(power, G_{power + 1} / pi)` for the image series on the period lattice.
    images: Vec<(usize, f64)>,
}

impl std::fmt::Debug for Transforms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transforms").field("lattice", &self.lattice).finish()
    }
}

impl Transforms {
    pub fn new(lattice: Lattice, symbol: Symbol) -> Self {
        let n = lattice.side();
        let h = lattice.step();
        let base = 2.0 * std::f64::consts::PI / (2.0 * lattice.half_width());
        let freq = |i: usize| -> f64 {
            let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
            base * k
        };
        let mut beurling = vec![Complex64::default(); n * n];
        let mut cauchy = vec![Complex64::default(); n * n];
        for iy in 0..n {
            for ix in 0..n {
                let (kx, ky) = (freq(ix), freq(iy));
                let xi = match symbol {
                    Symbol::Spectral => Complex64::new(kx, ky),
                    Symbol::CenteredDifference => Complex64::new((kx * h).sin(), (ky * h).sin()) / h,
                };
                if xi.norm() > 1e-9 * base {
                    beurling[iy * n + ix] = xi.conj() / xi;
                    cauchy[iy * n + ix] = 2.0 / (Complex64::i() * xi);
                }
            }
        }
        let period = 2.0 * lattice.half_width();
        let g = gaussian_eisenstein(2 * EISENSTEIN_TERMS);
        let images = (1..=EISENSTEIN_TERMS)
            .map(|k| {
                let two_k = 4 * k;
                (
                    two_k - 1,
                    g[two_k / 2] / period.powi(two_k as i32) / std::f64::consts::PI,
                )
            })
            .collect();
        Self {
            lattice,
            fft: Fft2::new(n),
            beurling,
            cauchy,
            images,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    fn check(&self, field: &[Complex64]) -> Result<()> {
        if field.len() != self.lattice.len() {
            return Err(Error::Config(format!(
                "field has {} values but the square lattice has {}",
                field.len(),
                self.lattice.len()
            )));
        }
        Ok(())
    }

    fn multiply(&self, field: &[Complex64], mult: &[Complex64]) -> Vec<Complex64> {
        let mut buf = field.to_vec();
        self.fft.forward(&mut buf);
        let scale = 1.0 / self.lattice.len() as f64;
        for (b, m) in buf.iter_mut().zip(mult) {
            *b *= m * scale;
        }
        self.fft.inverse(&mut buf);
        buf
    }

    /// Periodic Beurling transform: multiplier `conj(xi) / xi`, zero mean.
    pub fn beurling_transform(&self, field: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(field)?;
        Ok(self.multiply(field, &self.beurling))
    }

    /// Periodic Cauchy transform: multiplier `2 / (i xi)`, zero mean.
    pub fn periodic_cauchy(&self, field: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check(field)?;
        Ok(self.multiply(field, &self.cauchy))
    }

    /// Plane Cauchy transform `(1/pi) int phi(w) / (z - w) dA(w)` of a field
    /// supported well inside the domain.
    ///
    /// Inside `EXTERIOR_RADIUS` the periodic transform is corrected for the
    /// mean and for the periodic images; outside, when the support fits in
    /// the unit disk, the exterior Laurent series is used instead.
    pub fn cauchy_transform(&self, field: &[Complex64]) -> Result<Vec<Complex64>> {
        Ok(self.cauchy_with_diagnostics(field)?.0)
    }

    /// As `cauchy_transform`, also returning the Laurent coefficients used
    /// outside (empty when not applicable) and the largest jump at the seam.
    pub fn cauchy_with_diagnostics(&self, field: &[Complex64]) -> Result<(Vec<Complex64>, Vec<Complex64>, f64)> {
        self.check(field)?;
        let mut out = self.multiply(field, &self.cauchy);
        let moments = Moments::new(&self.lattice, field, LAURENT_TERMS);
        let corr = self.cauchy_correction(&moments);
        let points = self.lattice.points();
        for (o, z) in out.iter_mut().zip(&points) {
            *o += corr.eval(*z);
        }
        let support_radius = field
            .iter()
            .zip(&points)
            .filter(|(v, _)| v.norm_sqr() > 0.0)
            .map(|(_, z)| z.norm())
            .fold(0.0, f64::max);
        let mut laurent = Vec::new();
        let mut seam = 0.0f64;
        if support_radius <= 1.0 {
            laurent = moments.raw.iter().map(|m| m / std::f64::consts::PI).collect();
            let h = self.lattice.step();
            for (o, z) in out.iter_mut().zip(&points) {
                let r = z.norm();
                if r >= EXTERIOR_RADIUS {
                    let ext = eval_laurent(&laurent, *z);
                    if r < EXTERIOR_RADIUS + 2.0 * h {
                        seam = seam.max((ext - *o).norm());
                    }
                    *o = ext;
                }
            }
        }
        Ok((out, laurent, seam))
    }

    /// Correction turning the periodic Cauchy transform into the plane one.
    fn cauchy_correction(&self, m: &Moments) -> Correction {
        let area = 4.0 * self.lattice.half_width().powi(2);
        let mut poly = vec![Complex64::default(); self.images.last().map_or(1, |x| x.0 + 1)];
        // (z - w)^q = sum_j C(q, j) z^{q-j} (-w)^j
        for &(q, g) in &self.images {
            for j in 0..=q {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                poly[q - j] += g * binomial(q, j) * sign * m.raw[j];
            }
        }
        poly[0] -= m.conj_first / area;
        Correction {
            poly,
            zbar: m.raw[0] / area,
        }
    }

    /// Correction turning the periodic Beurling transform into the plane one.
    fn beurling_correction(&self, m: &Moments) -> Correction {
        let mut poly = vec![Complex64::default(); self.images.last().map_or(1, |x| x.0)];
        // d/dz (z - w)^q = q sum_j C(q - 1, j) z^{q-1-j} (-w)^j
        for &(q, g) in &self.images {
            for j in 0..q {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                poly[q - 1 - j] += g * q as f64 * binomial(q - 1, j) * sign * m.raw[j];
            }
        }
        Correction {
            poly,
            zbar: Complex64::default(),
        }
    }

    fn max_image_power(&self) -> usize {
        self.images.last().map_or(0, |x| x.0)
    }
}

/// `h^2 sum phi(w) w^j` and `h^2 sum phi(w) conj(w)`.
struct Moments {
    raw: Vec<Complex64>,
    conj_first: Complex64,
}

impl Moments {
    fn new(lattice: &Lattice, field: &[Complex64], max_power: usize) -> Self {
        let support: Vec<usize> = (0..field.len()).filter(|&i| field[i].norm_sqr() > 0.0).collect();
        Self::on_support(lattice, field, &support, max_power)
    }

    fn on_support(lattice: &Lattice, field: &[Complex64], support: &[usize], max_power: usize) -> Self {
        let h2 = lattice.step().powi(2);
        let mut raw = vec![Complex64::default(); max_power + 1];
        let mut conj_first = Complex64::default();
        for &i in support {
            let w = lattice.point_at(i);
            let mut t = field[i];
            conj_first += t * w.conj();
            for r in raw.iter_mut() {
                *r += t;
                t *= w;
            }
        }
        for r in raw.iter_mut() {
            *r *= h2;
        }
        Self {
            raw,
            conj_first: conj_first * h2,
        }
    }
}

/// `poly(z) + zbar * conj(z)`.
struct Correction {
    poly: Vec<Complex64>,
    zbar: Complex64,
}

impl Correction {
    fn eval(&self, z: Complex64) -> Complex64 {
        let p = self.poly.iter().rev().fold(Complex64::default(), |acc, c| acc * z + c);
        p + self.zbar * z.conj()
    }
}

/// `sum_j c_j z^{-j-1}`.
fn eval_laurent(coeffs: &[Complex64], z: Complex64) -> Complex64 {
    let inv = 1.0 / z;
    coeffs.iter().rev().fold(Complex64::default(), |acc, c| (acc + c) * inv)
}

/// One Neumann iteration record: `delta` is the discrete L2 norm of the
/// update, `residual` the same relative to the norm of the dilatation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub delta: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    /// `||phi - mu (1 + S phi)|| / ||mu||` at the returned iterate.
    pub fixed_point_residual: f64,
    /// Geometric-mean ratio of successive updates.
    pub contraction_ratio: f64,
    pub sup_mu: f64,
    /// Largest jump between interior and Laurent values at the seam.
    pub seam_mismatch: f64,
}

/// A solution `F = z + C phi` sampled on the lattice, with its exterior
/// Laurent series and an affine post-composition `a F + b`.
#[derive(Debug, Clone)]
pub struct PlanarMap {
    pub lattice: Lattice,
    pub values: Vec<Complex64>,
    laurent: Vec<Complex64>,
    affine: (Complex64, Complex64),
    pub report: SolveReport,
}

impl PlanarMap {
    pub fn identity(lattice: Lattice) -> Self {
        Self {
            lattice,
            values: lattice.points(),
            laurent: Vec::new(),
            affine: (Complex64::new(1.0, 0.0), Complex64::default()),
            report: SolveReport {
                iterations: 0,
                history: Vec::new(),
                fixed_point_residual: 0.0,
                contraction_ratio: 0.0,
                sup_mu: 0.0,
                seam_mismatch: 0.0,
            },
        }
    }

    /// Lattice samples of an explicit map (exterior uses the same closure
    /// through bilinear interpolation only).
    pub fn from_fn(lattice: Lattice, f: impl Fn(Complex64) -> Complex64) -> Self {
        let mut map = Self::identity(lattice);
        map.values = lattice.points().into_iter().map(f).collect();
        map
    }

    /// Evaluate `F` at `z`: bilinear inside the exterior radius, Laurent
    /// outside when available.
    pub fn eval(&self, z: Complex64) -> Complex64 {
        if !self.laurent.is_empty() && z.norm() >= EXTERIOR_RADIUS {
            let (a, b) = self.affine;
            return a * (z + eval_laurent(&self.laurent, z)) + b;
        }
        self.bilinear(z)
    }

    fn bilinear(&self, z: Complex64) -> Complex64 {
        let l = &self.lattice;
        let h = l.step();
        let n = l.side();
        let fx = ((z.re + l.half_width()) / h).clamp(0.0, (n - 1) as f64 - 1e-9);
        let fy = ((z.im + l.half_width()) / h).clamp(0.0, (n - 1) as f64 - 1e-9);
        let (ix, iy) = (fx as usize, fy as usize);
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let v = |dx: usize, dy: usize| self.values[l.index(ix + dx, iy + dy)];
        v(0, 0) * (1.0 - tx) * (1.0 - ty) + v(1, 0) * tx * (1.0 - ty) + v(0, 1) * (1.0 - tx) * ty + v(1, 1) * tx * ty
    }

    /// `a F + b` for a complex affine map.
    pub fn affine(&self, a: Complex64, b: Complex64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = a * *v + b);
        let (a0, b0) = self.affine;
        out.affine = (a * a0, a * b0 + b);
        out
    }

    /// Undo an affine post-composition by reading `F(z) = a z + b + O(1/z)`
    /// off the Fourier modes on the circle of radius `1.75`.
    pub fn renormalize_principal(&self) -> Self {
        let n = 512;
        let r = 1.75;
        let mut a = Complex64::default();
        let mut b = Complex64::default();
        for j in 0..n {
            let e = Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / n as f64);
            let v = self.eval(r * e);
            b += v;
            a += v * e.conj();
        }
        let b = b / n as f64;
        let a = a / (n as f64 * r);
        self.affine(1.0 / a, -b / a)
    }

    /// Sample `F(e^{2 pi i j / n})` for `j = 0..=n` (closed).
    pub fn boundary_samples(&self, n: usize) -> Vec<Complex64> {
        (0..=n)
            .map(|j| {
                self.eval(Complex64::from_polar(
                    1.0,
                    2.0 * std::f64::consts::PI * (j % n) as f64 / n as f64,
                ))
            })
            .collect()
    }

    /// Count interior lattice nodes with a nonpositive centered-difference Jacobian.
    pub fn negative_jacobians(&self) -> usize {
        let n = self.lattice.side();
        let mut count = 0;
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                let (fz, fzb) = self.lattice.wirtinger(&self.values, ix, iy).unwrap();
                if fz.norm_sqr() - fzb.norm_sqr() <= 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// `max |F - z|` on the outermost lattice ring over the interior maximum.
    pub fn boundary_decay_ratio(&self) -> f64 {
        let n = self.lattice.side();
        let mut outer = 0.0f64;
        let mut inner = 0.0f64;
        for iy in 0..n {
            for ix in 0..n {
                let idx = self.lattice.index(ix, iy);
                let d = (self.values[idx] - self.lattice.point(ix, iy)).norm();
                if ix == 0 || iy == 0 || ix == n - 1 || iy == n - 1 {
                    outer = outer.max(d);
                } else {
                    inner = inner.max(d);
                }
            }
        }
        if inner == 0.0 {
            0.0
        } else {
            outer / inner
        }
    }

    /// Write `(t, Re F, Im F)` at `n` boundary samples.
    pub fn write_boundary_csv<W: Write>(&self, writer: W, n: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "re_F", "im_F"])?;
        for (j, v) in self.boundary_samples(n).iter().take(n).enumerate() {
            w.serialize((j as f64 / n as f64, v.re, v.im))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_history_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_history_csv(&self.report.history, writer)
    }
}

pub fn write_history_csv<W: Write>(history: &[IterationRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Solve `F_zbar = mu F_z` with `F(z) = z + O(1/z)` by Neumann iteration on
/// `phi = mu (1 + S phi)`, then `F = z + C phi`.
pub fn solve(mu: &BeltramiField, cfg: &SolverConfig) -> Result<PlanarMap> {
    let lattice = cfg.validate()?;
    if lattice != mu.lattice {
        return Err(Error::Config(
            "dilatation lattice does not match the solver configuration".into(),
        ));
    }
    let sup = mu.sup_abs();
    if sup > 1.0 - cfg.epsilon + 1e-12 {
        return Err(Error::Argument(format!(
            "sup |mu| = {sup} exceeds 1 - eps = {}; regularize first",
            1.0 - cfg.epsilon
        )));
    }
    let transforms = Transforms::new(lattice, cfg.symbol);
    solve_with(&transforms, mu, cfg)
}

/// As `solve`, reusing precomputed transforms.
pub fn solve_with(transforms: &Transforms, mu: &BeltramiField, cfg: &SolverConfig) -> Result<PlanarMap> {
    let lattice = *transforms.lattice();
    let h2 = lattice.step().powi(2);
    let support: Vec<usize> = (0..lattice.len()).filter(|&i| mu.mu[i].norm_sqr() > 0.0).collect();
    let mu_norm = (h2 * support.iter().map(|&i| mu.mu[i].norm_sqr()).sum::<f64>()).sqrt();
    if support.is_empty() {
        return Ok(PlanarMap::identity(lattice));
    }
    let support_points: Vec<Complex64> = support.iter().map(|&i| lattice.point_at(i)).collect();
    let max_power = transforms.max_image_power();

    // S phi on the support, including the image correction.
    let plane_beurling = |phi: &[Complex64]| -> Vec<Complex64> {
        let per = transforms.multiply(phi, &transforms.beurling);
        let corr = transforms.beurling_correction(&Moments::on_support(&lattice, phi, &support, max_power));
        support
            .iter()
            .zip(&support_points)
            .map(|(&i, &z)| per[i] + corr.eval(z))
            .collect()
    };

    let mut phi = mu.mu.clone();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iter = 0;
    while iter < cfg.max_iter {
        iter += 1;
        let s_phi = plane_beurling(&phi);
        let mut delta2 = 0.0;
        for (k, &i) in support.iter().enumerate() {
            let new = mu.mu[i] * (s_phi[k] + 1.0);
            delta2 += (new - phi[i]).norm_sqr();
            phi[i] = new;
        }
        let delta = (h2 * delta2).sqrt();
        history.push(IterationRecord {
            iter,
            delta,
            residual: delta / mu_norm,
        });
        if !delta.is_finite() {
            break;
        }
        if delta <= cfg.tol * mu_norm {
            converged = true;
            break;
        }
    }
    let last_delta = history.last().map_or(f64::NAN, |r| r.residual);
    if !converged {
        return Err(Error::NotConverged {
            iterations: iter,
            last_delta,
            history,
        });
    }
    let s_phi = plane_beurling(&phi);
    let fp2: f64 = support
        .iter()
        .enumerate()
        .map(|(k, &i)| (phi[i] - mu.mu[i] * (s_phi[k] + 1.0)).norm_sqr())
        .sum();
    let contraction_ratio = if history.len() >= 2 {
        (history.last().unwrap().delta / history[0].delta).powf(1.0 / (history.len() - 1) as f64)
    } else {
        0.0
    };

    let (c_phi, laurent, seam) = transforms.cauchy_with_diagnostics(&phi)?;
    let values = lattice.points().iter().zip(&c_phi).map(|(z, c)| z + c).collect();
    log::debug!("Beltrami solve: {iter} iterations, seam mismatch {seam:.2e}");
    Ok(PlanarMap {
        lattice,
        values,
        laurent,
        affine: (Complex64::new(1.0, 0.0), Complex64::default()),
        report: SolveReport {
            iterations: iter,
            history,
            fixed_point_residual: (h2 * fp2).sqrt() / mu_norm,
            contraction_ratio,
            sup_mu: mu.sup_abs(),
            seam_mismatch: seam,
        },
    })
}

/// Median of `|F_zbar| / |F_z|` over a region, with the count of skipped points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalityResidual {
    pub median: f64,
    pub points: usize,
    pub skipped: usize,
}

/// The part of the lattice outside the unit disk where conformality is tested:
/// `|z| >= inner` and `max(|x|, |y|) <= outer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExteriorRegion {
    pub inner: f64,
    pub outer: f64,
}

impl Default for ExteriorRegion {
    fn default() -> Self {
        Self {
            inner: 1.05,
            outer: 1.8,
        }
    }
}

impl ExteriorRegion {
    pub fn contains(&self, z: Complex64) -> bool {
        z.norm() >= self.inner && z.re.abs() <= self.outer && z.im.abs() <= self.outer
    }
}

/// Median finite-difference dilatation of `F` in an exterior region.
pub fn conformality_residual(map: &PlanarMap, region: ExteriorRegion) -> ConformalityResidual {
    let l = &map.lattice;
    let n = l.side();
    let mut vals = Vec::new();
    let mut skipped = 0;
    for iy in 1..n - 1 {
        for ix in 1..n - 1 {
            if !region.contains(l.point(ix, iy)) {
                continue;
            }
            let (fz, fzb) = l.wirtinger(&map.values, ix, iy).unwrap();
            if fz.norm() < 1e-300 {
                skipped += 1;
                continue;
            }
            vals.push(fzb.norm() / fz.norm());
        }
    }
    if skipped > 0 {
        log::warn!("conformality residual skipped {skipped} points with vanishing F_z");
    }
    ConformalityResidual {
        median: crate::stats::median(&vals),
        points: vals.len(),
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn l2(v: &[Complex64]) -> f64 {
        v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn eisenstein_recurrence_matches_lattice_sum() {
        let g = gaussian_eisenstein(6);
        assert_abs_diff_eq!(g[4], 3.0 * GAUSSIAN_G4 * GAUSSIAN_G4 / 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[3], 0.0, epsilon = 1e-15);
        // direct sums of w^-4 and w^-8 over |m|,|n| <= R
        let r = 400i64;
        let (mut s4, mut s8) = (Complex64::default(), Complex64::default());
        for m in -r..=r {
            for n in -r..=r {
                if m == 0 && n == 0 {
                    continue;
                }
                let w = Complex64::new(m as f64, n as f64);
                let w4 = (w * w) * (w * w);
                s4 += 1.0 / w4;
                s8 += 1.0 / (w4 * w4);
            }
        }
        assert!((s4.re - GAUSSIAN_G4).abs() < 1e-5, "{s4}");
        assert!((s8.re - g[4]).abs() < 1e-10, "{s8} vs {}", g[4]);
    }

    #[test]
    fn beurling_is_unitary_and_kills_zero() {
        let l = Lattice::new(64, 2.0).unwrap();
        let t = Transforms::new(l, Symbol::Spectral);
        let field: Vec<Complex64> = l
            .points()
            .iter()
            .map(|z| Complex64::new((3.0 * z.re).sin(), (z.im * z.re).cos()))
            .collect();
        let mean = field.iter().sum::<Complex64>() / field.len() as f64;
        let centered: Vec<Complex64> = field.iter().map(|v| v - mean).collect();
        let s = t.beurling_transform(&centered).unwrap();
        assert!((l2(&s) - l2(&centered)).abs() <= 1e-10 * l2(&centered));
        let zero = t.beurling_transform(&vec![Complex64::default(); l.len()]).unwrap();
        assert!(zero.iter().all(|v| v.norm() == 0.0));
        assert!(matches!(t.beurling_transform(&field[..10]), Err(Error::Config(_))));
        assert!(t
            .cauchy_transform(&vec![Complex64::default(); l.len()])
            .unwrap()
            .iter()
            .all(|v| v.norm() == 0.0));
    }

    // S(dbar g) = d g for a Gaussian bump, with analytic derivatives.
    #[test]
    fn beurling_intertwines_derivatives() {
        let l = Lattice::new(256, 2.0).unwrap();
        let t = Transforms::new(l, Symbol::Spectral);
        let a = 20.0;
        let pts = l.points();
        let g = |z: &Complex64| (-a * z.norm_sqr()).exp();
        // d g = -a zbar g, dbar g = -a z g
        let dbar: Vec<Complex64> = pts.iter().map(|z| -a * z * g(z)).collect();
        let d: Vec<Complex64> = pts.iter().map(|z| -a * z.conj() * g(z)).collect();
        let s = t.beurling_transform(&dbar).unwrap();
        let err = s.iter().zip(&d).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        let scale = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-6 * scale, "{err}");
    }

    #[test]
    fn cauchy_inverts_dbar_by_differences() {
        let l = Lattice::new(128, 2.0).unwrap();
        let t = Transforms::new(l, Symbol::CenteredDifference);
        let phi: Vec<Complex64> = l
            .points()
            .iter()
            .map(|z| {
                let s = z.norm_sqr() / 0.81;
                if s < 1.0 {
                    Complex64::new(1.0, z.re) * (-1.0 / (1.0 - s)).exp()
                } else {
                    Complex64::default()
                }
            })
            .collect();
        let mean = phi.iter().sum::<Complex64>() / phi.len() as f64;
        let periodic = t.periodic_cauchy(&phi).unwrap();
        let c = t.cauchy_transform(&phi).unwrap();
        let (mut worst_periodic, mut worst) = (0.0f64, 0.0f64);
        for iy in 1..127 {
            for ix in 1..127 {
                let target = phi[l.index(ix, iy)];
                let (_, dbar) = l.wirtinger(&periodic, ix, iy).unwrap();
                worst_periodic = worst_periodic.max((dbar - (target - mean)).norm());
                if l.point(ix, iy).norm() > 1.4 {
                    continue;
                }
                let (_, dbar) = l.wirtinger(&c, ix, iy).unwrap();
                worst = worst.max((dbar - target).norm());
            }
        }
        // only the stencil's checkerboard null modes of phi are missed
        assert!(worst_periodic < 1e-6, "{worst_periodic}");
        // the image polynomials are analytic only up to the O(h^2) stencil error
        assert!(worst < 10.0 * l.step().powi(2), "{worst}");
    }

    fn disk_potential(z: Complex64) -> Complex64 {
        if z.norm() < 1.0 {
            z.conj()
        } else {
            1.0 / z
        }
    }

    // Direct summation of the Cauchy kernel on a coarse grid is an
    // independent oracle for the disk potential.
    #[test]
    fn cauchy_of_disk_indicator() {
        let coarse = Lattice::new(128, 2.0).unwrap();
        let h2 = coarse.step().powi(2);
        let inside: Vec<Complex64> = coarse.points().into_iter().filter(|w| w.norm() < 1.0).collect();
        // probes sit at cell centres, away from the lattice nodes
        for (ix, iy) in [(73, 70), (16, 86), (65, 44)] {
            let z = coarse.point(ix, iy) + Complex64::new(0.5, 0.5) * coarse.step();
            let direct: Complex64 = inside.iter().map(|w| 1.0 / (z - w)).sum::<Complex64>() * h2 / std::f64::consts::PI;
            assert!((direct - disk_potential(z)).norm() < 1e-2, "{z}: {direct}");
        }

        let l = Lattice::new(512, 2.0).unwrap();
        let chi: Vec<Complex64> = l
            .points()
            .iter()
            .map(|z| {
                if z.norm() < 1.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::default()
                }
            })
            .collect();
        for symbol in [Symbol::Spectral, Symbol::CenteredDifference] {
            let c = Transforms::new(l, symbol).cauchy_transform(&chi).unwrap();
            for (idx, v) in c.iter().enumerate() {
                let z = l.point_at(idx);
                if (z.norm() - 1.0).abs() < 0.1 || z.re.abs() > 1.8 || z.im.abs() > 1.8 {
                    continue;
                }
                assert!((v - disk_potential(z)).norm() < 1e-2, "{symbol:?} {z}: {v}");
            }
        }
    }

    fn radial_stretch_mu(l: Lattice) -> BeltramiField {
        BeltramiField::from_fn(l, |z| {
            if z.norm() == 0.0 {
                Complex64::default()
            } else {
                z / z.conj() / 3.0
            }
        })
        .unwrap()
    }

    #[test]
    fn zero_dilatation_gives_identity() {
        let cfg = SolverConfig {
            grid: 64,
            ..Default::default()
        };
        let l = cfg.validate().unwrap();
        let map = solve(&BeltramiField::zero(l), &cfg).unwrap();
        assert_eq!(map.values, l.points());
        assert_eq!(map.report.iterations, 0);
    }

    #[test]
    fn oversized_dilatation_rejected() {
        let cfg = SolverConfig {
            grid: 64,
            epsilon: 0.8,
            ..Default::default()
        };
        let l = cfg.validate().unwrap();
        assert!(matches!(solve(&radial_stretch_mu(l), &cfg), Err(Error::Argument(_))));
    }

    #[test]
    fn non_convergence_carries_history() {
        let cfg = SolverConfig {
            grid: 64,
            max_iter: 3,
            tol: 1e-14,
            ..Default::default()
        };
        let l = cfg.validate().unwrap();
        match solve(&radial_stretch_mu(l), &cfg) {
            Err(Error::NotConverged {
                iterations, history, ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn radial_stretch_solution() {
        let cfg = SolverConfig {
            grid: 256,
            ..Default::default()
        };
        let l = cfg.validate().unwrap();
        let map = solve(&radial_stretch_mu(l), &cfg).unwrap();
        let mut err = 0.0f64;
        for (idx, v) in map.values.iter().enumerate() {
            let z = l.point_at(idx);
            let r = z.norm();
            if (r - 1.0).abs() <= 0.05 {
                continue;
            }
            let exact = if r < 1.0 { z * r } else { z };
            err = err.max((v - exact).norm());
        }
        assert!(err < 2e-2, "{err}");
        assert!(
            map.report.contraction_ratio <= 1.0 / 3.0 + 0.05,
            "{}",
            map.report.contraction_ratio
        );
        assert!(map.report.fixed_point_residual <= 10.0 * cfg.tol);
        let conf = conformality_residual(&map, ExteriorRegion::default());
        assert!(conf.median < 1e-3, "{}", conf.median);
        assert_eq!(map.negative_jacobians(), 0);
        assert!(map.boundary_decay_ratio() <= 10.0 / cfg.half_width);
    }

    #[test]
    fn affine_renormalization_recovers_principal_map() {
        let cfg = SolverConfig {
            grid: 128,
            ..Default::default()
        };
        let l = cfg.validate().unwrap();
        let map = solve(&radial_stretch_mu(l), &cfg).unwrap();
        let moved = map.affine(Complex64::new(0.7, -1.3), Complex64::new(2.0, 0.25));
        let back = moved.renormalize_principal();
        let a = map.boundary_samples(256);
        let b = back.boundary_samples(256);
        let d = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig {
            epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            grid: 1000,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            half_width: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }
}
