//! Lehto integrals of distortion fields and their Monte Carlo tails.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::self_intersections;
use crate::error::{Error, Result};
use crate::extension::Distortion;
use crate::pipeline::{grid_for_radius, SampleBuilder};
use crate::stats::{fit_line, pearson, pearson_std_error, wilson_interval, LineFit};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// `A(w, r, R) = { r < |z - w| < R }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annulus {
    pub center: Complex64,
    pub inner: f64,
    pub outer: f64,
}

impl Annulus {
    pub fn new(center: Complex64, inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(Error::Argument(format!(
                "annulus radii must satisfy 0 < r < R, got {inner}, {outer}"
            )));
        }
        Ok(Self { center, inner, outer })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LehtoEstimate {
    pub value: f64,
    pub n_rho: usize,
    pub n_theta: usize,
    /// Difference from the same rule on every other node in both directions.
    pub error_proxy: f64,
    pub dropped: usize,
    /// False when more than 1% of the nodes had a non-finite distortion.
    pub valid: bool,
}

/// `L(w, r, R) = int_r^R (int_0^{2 pi} K(w + rho e^{i theta}) d theta)^{-1} d rho / rho`,
/// by the trapezoid rule in `ln rho` (`n_rho` odd) and in `theta` (`n_theta` even).
pub fn lehto_integral<K: Distortion + ?Sized>(
    k: &K,
    ann: &Annulus,
    n_rho: usize,
    n_theta: usize,
) -> Result<LehtoEstimate> {
    if n_rho < 3 || n_rho % 2 == 0 {
        return Err(Error::Argument(format!("n_rho must be odd and >= 3, got {n_rho}")));
    }
    if n_theta < 4 || n_theta % 2 == 1 {
        return Err(Error::Argument(format!("n_theta must be even and >= 4, got {n_theta}")));
    }
    let log_span = (ann.outer / ann.inner).ln();
    let step = log_span / (n_rho - 1) as f64;
    let mut dropped = 0;
    let mut fine = Vec::with_capacity(n_rho);
    let mut coarse_theta = Vec::with_capacity(n_rho);
    for i in 0..n_rho {
        let rho = ann.inner * (step * i as f64).exp();
        let (mut sum, mut count, mut sum2, mut count2) = (0.0, 0usize, 0.0, 0usize);
        for j in 0..n_theta {
            let z = ann.center + Complex64::from_polar(rho, TWO_PI * j as f64 / n_theta as f64);
            let kv = k.distortion(z);
            if !kv.is_finite() {
                dropped += 1;
                continue;
            }
            sum += kv;
            count += 1;
            if j % 2 == 0 {
                sum2 += kv;
                count2 += 1;
            }
        }
        let recip = |s: f64, c: usize| if c == 0 { 0.0 } else { 1.0 / (TWO_PI * s / c as f64) };
        fine.push(recip(sum, count));
        coarse_theta.push(recip(sum2, count2));
    }
    let trapezoid = |g: &[f64], h: f64| h * (g.iter().sum::<f64>() - 0.5 * (g[0] + g[g.len() - 1]));
    let value = trapezoid(&fine, step);
    let coarse: Vec<f64> = coarse_theta.iter().step_by(2).copied().collect();
    let coarse_value = trapezoid(&coarse, 2.0 * step);
    let total = n_rho * n_theta;
    let valid = (dropped as f64) <= 0.01 * total as f64;
    if dropped > 0 {
        log::warn!("Lehto quadrature dropped {dropped} of {total} nodes with non-finite distortion");
    }
    Ok(LehtoEstimate {
        value,
        n_rho,
        n_theta,
        error_proxy: (value - coarse_value).abs(),
        dropped,
        valid,
    })
}

/// `L_k = L(w, rho^k, 2 rho^k)` for `k = 1..=n` with `rho = 2^{-p}`.
pub fn annulus_decomposition<K: Distortion + ?Sized>(
    k: &K,
    w: Complex64,
    p: u32,
    n: usize,
    n_rho: usize,
    n_theta: usize,
) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::Argument("p = 0 makes the annuli overlap".into()));
    }
    let rho = 0.5f64.powi(p as i32);
    (1..=n)
        .map(|j| {
            let r = rho.powi(j as i32);
            lehto_integral(k, &Annulus::new(w, r, 2.0 * r)?, n_rho, n_theta).map(|e| e.value)
        })
        .collect()
}

/// Reciprocal angular integrals `g(rho_i)` at `rho_i = 2^{-i / per_octave}`
/// for `i = 0..=octaves * per_octave`, and their running Lehto integral
/// from `rho = 1` inward.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub per_octave: usize,
    pub reciprocal: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub dropped: usize,
}

impl RadialProfile {
    pub fn new<K: Distortion + ?Sized>(k: &K, w: Complex64, octaves: usize, per_octave: usize, n_theta: usize) -> Self {
        let nodes = octaves * per_octave + 1;
        let mut dropped = 0;
        let reciprocal: Vec<f64> = (0..nodes)
            .map(|i| {
                let rho = (-(i as f64) / per_octave as f64).exp2();
                let (mut s, mut c) = (0.0, 0usize);
                for j in 0..n_theta {
                    let kv = k.distortion(w + Complex64::from_polar(rho, TWO_PI * j as f64 / n_theta as f64));
                    if kv.is_finite() {
                        s += kv;
                        c += 1;
                    } else {
                        dropped += 1;
                    }
                }
                if c == 0 {
                    0.0
                } else {
                    c as f64 / (TWO_PI * s)
                }
            })
            .collect();
        let h = std::f64::consts::LN_2 / per_octave as f64;
        let mut cumulative = vec![0.0; nodes];
        for i in 1..nodes {
            cumulative[i] = cumulative[i - 1] + 0.5 * h * (reciprocal[i - 1] + reciprocal[i]);
        }
        Self {
            per_octave,
            reciprocal,
            cumulative,
            dropped,
        }
    }

    /// `L(w, 2^{-b}, 2^{-a})` for whole octaves `a < b`.
    pub fn between_octaves(&self, a: usize, b: usize) -> f64 {
        self.cumulative[b * self.per_octave] - self.cumulative[a * self.per_octave]
    }
}

/// Monte Carlo configuration for `P(L(1, 2^{-N p}, 1) < N delta)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailConfig {
    pub beta: f64,
    pub p: u32,
    pub delta: f64,
    pub n_values: Vec<usize>,
    pub samples: usize,
    pub base_seed: u64,
    /// Chaos grid; `None` picks the smallest power of two `>= 32 / r_min`.
    pub grid: Option<usize>,
    pub per_octave: usize,
    pub n_theta: usize,
}

impl TailConfig {
    pub fn new(beta: f64, p: u32, delta: f64, n_values: Vec<usize>, samples: usize) -> Self {
        Self {
            beta,
            p,
            delta,
            n_values,
            samples,
            base_seed: 0,
            grid: None,
            per_octave: 16,
            n_theta: 128,
        }
    }

    fn max_octaves(&self) -> usize {
        self.n_values.iter().copied().max().unwrap_or(0) * self.p as usize
    }

    pub fn resolved_grid(&self) -> usize {
        self.grid
            .unwrap_or_else(|| grid_for_radius(0.5f64.powi(self.max_octaves() as i32)))
    }

    fn validate(&self) -> Result<()> {
        if self.beta * self.beta >= 2.0 {
            return Err(Error::Supercritical { beta: self.beta });
        }
        if !(self.delta > 0.0) {
            return Err(Error::Argument(format!("delta must be positive, got {}", self.delta)));
        }
        if self.p == 0 {
            return Err(Error::Argument("p must be at least 1".into()));
        }
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::Argument("N values must be nonempty and positive".into()));
        }
        if self.samples == 0 || self.per_octave == 0 || self.n_theta < 4 {
            return Err(Error::Argument(
                "samples, per_octave and n_theta must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub n: usize,
    pub hits: u64,
    pub samples: u64,
    pub p_hat: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailEstimate {
    pub beta: f64,
    pub p: u32,
    pub delta: f64,
    pub points: Vec<TailPoint>,
    /// Fit of `log2 p_hat` against `N` over points with hits (needs two).
    pub fit: Option<LineFit>,
    /// When no fit is possible: `max_N -log2(hi_N) / N`, a lower bound on the
    /// decay exponent supported by the Wilson upper limits.
    pub decay_lower_bound: Option<f64>,
    pub grid: usize,
}

impl TailEstimate {
    /// Evaluate the event for one `delta` from per-sample integrals
    /// (`l_values[s][i]` belongs to `n_values[i]`).
    pub fn from_samples(beta: f64, p: u32, delta: f64, n_values: &[usize], l_values: &[Vec<f64>], grid: usize) -> Self {
        let samples = l_values.len() as u64;
        let points: Vec<TailPoint> = n_values
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let hits = l_values.iter().filter(|row| row[i] < n as f64 * delta).count() as u64;
                let w = wilson_interval(hits, samples, 0.95);
                TailPoint {
                    n,
                    hits,
                    samples,
                    p_hat: w.estimate,
                    lo: w.lower,
                    hi: w.upper,
                }
            })
            .collect();
        let nonzero: Vec<&TailPoint> = points.iter().filter(|t| t.hits > 0).collect();
        let fit = if nonzero.len() >= 2 {
            let xs: Vec<f64> = nonzero.iter().map(|t| t.n as f64).collect();
            let ys: Vec<f64> = nonzero.iter().map(|t| t.p_hat.log2()).collect();
            fit_line(&xs, &ys)
        } else {
            None
        };
        let decay_lower_bound = if fit.is_none() {
            points
                .iter()
                .map(|t| -t.hi.log2() / t.n as f64)
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        } else {
            None
        };
        Self {
            beta,
            p,
            delta,
            points,
            fit,
            decay_lower_bound,
            grid,
        }
    }

    /// Fitted slope, or minus the decay lower bound when no fit exists.
    pub fn slope_or_bound(&self) -> Option<f64> {
        self.fit.map(|f| f.slope).or(self.decay_lower_bound.map(|b| -b))
    }

    /// Write `(N, hits, samples, p_hat, lo, hi)` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["N", "hits", "samples", "p_hat", "lo", "hi"])?;
        for t in &self.points {
            w.serialize((t.n, t.hits, t.samples, t.p_hat, t.lo, t.hi))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-sample values of `L(1, 2^{-N p}, 1)` for each configured `N`.
pub fn tail_samples(cfg: &TailConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let builder = SampleBuilder::new(cfg.beta, cfg.resolved_grid())?;
    let octaves = cfg.max_octaves();
    let w = Complex64::new(1.0, 0.0);
    (0..cfg.samples)
        .into_par_iter()
        .map(|s| {
            let ext = builder.extension(cfg.base_seed + s as u64)?;
            let profile = RadialProfile::new(&ext, w, octaves, cfg.per_octave, cfg.n_theta);
            if profile.dropped > 0 {
                log::warn!("sample {s}: {} quadrature nodes dropped", profile.dropped);
            }
            Ok(cfg
                .n_values
                .iter()
                .map(|&n| profile.between_octaves(0, n * cfg.p as usize))
                .collect())
        })
        .collect()
}

/// Monte Carlo estimate of `P(L(1, 2^{-N p}, 1) < N delta)` over the full
/// field-to-extension pipeline.
pub fn tail_probability(cfg: &TailConfig) -> Result<TailEstimate> {
    let values = tail_samples(cfg)?;
    Ok(TailEstimate::from_samples(
        cfg.beta,
        cfg.p,
        cfg.delta,
        &cfg.n_values,
        &values,
        cfg.resolved_grid(),
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LkConfig {
    pub beta: f64,
    pub p: u32,
    pub k_max: usize,
    pub samples: usize,
    pub base_seed: u64,
    pub grid: Option<usize>,
    pub per_octave: usize,
    pub n_theta: usize,
    /// Empirical quantiles bracketing the small-value grid.
    pub quantile_lo: f64,
    pub quantile_hi: f64,
    pub eps_points: usize,
}

impl LkConfig {
    pub fn new(beta: f64, p: u32, k_max: usize, samples: usize) -> Self {
        Self {
            beta,
            p,
            k_max,
            samples,
            base_seed: 0,
            grid: None,
            per_octave: 16,
            n_theta: 128,
            quantile_lo: 0.005,
            quantile_hi: 0.10,
            eps_points: 8,
        }
    }

    pub fn resolved_grid(&self) -> usize {
        self.grid
            .unwrap_or_else(|| grid_for_radius(0.5f64.powi((self.p as usize * self.k_max) as i32)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LkCdf {
    pub k: usize,
    pub eps: Vec<f64>,
    pub prob: Vec<f64>,
    /// Fitted exponent of `P(L_k < eps)` in `eps`; `None` for degenerate laws.
    pub exponent: Option<f64>,
    pub exponent_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LkStatistics {
    pub beta: f64,
    pub p: u32,
    pub means: Vec<f64>,
    pub per_k: Vec<LkCdf>,
    /// Pearson correlations of `(L_j, L_k)`; zero where undefined.
    pub correlation: Vec<Vec<f64>>,
    pub correlation_se: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let fr = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - fr) + sorted[i + 1] * fr
    } else {
        sorted[i]
    }
}

/// Small-value CDFs and cross-correlations of `L_k = L(1, rho^k, 2 rho^k)`.
pub fn lk_statistics(cfg: &LkConfig) -> Result<LkStatistics> {
    if cfg.beta * cfg.beta >= 2.0 {
        return Err(Error::Supercritical { beta: cfg.beta });
    }
    if cfg.p == 0 || cfg.k_max == 0 || cfg.samples < 2 || cfg.eps_points < 2 {
        return Err(Error::Argument(
            "need p >= 1, k_max >= 1, samples >= 2, eps_points >= 2".into(),
        ));
    }
    let builder = SampleBuilder::new(cfg.beta, cfg.resolved_grid())?;
    let p = cfg.p as usize;
    let w = Complex64::new(1.0, 0.0);
    let rows: Vec<Vec<f64>> = (0..cfg.samples)
        .into_par_iter()
        .map(|s| {
            let ext = builder.extension(cfg.base_seed + s as u64)?;
            let profile = RadialProfile::new(&ext, w, p * cfg.k_max, cfg.per_octave, cfg.n_theta);
            Ok((1..=cfg.k_max)
                .map(|k| profile.between_octaves(k * p - 1, k * p))
                .collect())
        })
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = (0..cfg.k_max).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    let n = cfg.samples;
    let mut warnings = Vec::new();
    let degenerate: Vec<bool> = columns
        .iter()
        .map(|c| {
            let (lo, hi) = c
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            hi - lo <= 1e-12 * hi.abs().max(1.0)
        })
        .collect();
    let means = columns.iter().map(|c| c.iter().sum::<f64>() / n as f64).collect();

    let per_k = columns
        .iter()
        .enumerate()
        .map(|(k, col)| {
            let mut sorted = col.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            if degenerate[k] {
                // degenerate law: a step at the common value
                let c = sorted[0];
                let eps = vec![0.5 * c, c, 2.0 * c];
                let prob = eps
                    .iter()
                    .map(|e| col.iter().filter(|v| *v < e).count() as f64 / n as f64)
                    .collect();
                return LkCdf {
                    k: k + 1,
                    eps,
                    prob,
                    exponent: None,
                    exponent_se: None,
                };
            }
            let mut q_lo = cfg.quantile_lo;
            let min_hits = 5.0;
            if q_lo * (n as f64) < min_hits {
                q_lo = (min_hits / n as f64).min(cfg.quantile_hi / 2.0);
                let msg = format!(
                    "L_{}: {} samples cannot resolve the {} quantile; small-value grid widened to start at {:.4}",
                    k + 1,
                    n,
                    cfg.quantile_lo,
                    q_lo
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let (e_lo, e_hi) = (quantile(&sorted, q_lo), quantile(&sorted, cfg.quantile_hi));
            let m = cfg.eps_points;
            let eps: Vec<f64> = (0..m)
                .map(|i| e_lo * (e_hi / e_lo).powf(i as f64 / (m - 1) as f64))
                .collect();
            let prob: Vec<f64> = eps
                .iter()
                .map(|e| col.iter().filter(|v| *v < e).count() as f64 / n as f64)
                .collect();
            let (xs, ys): (Vec<f64>, Vec<f64>) = eps
                .iter()
                .zip(&prob)
                .filter(|(_, p)| **p > 0.0)
                .map(|(e, p)| (e.ln(), p.ln()))
                .unzip();
            let fit = fit_line(&xs, &ys);
            LkCdf {
                k: k + 1,
                eps,
                prob,
                exponent: fit.map(|f| f.slope),
                exponent_se: fit.map(|f| f.slope_se),
            }
        })
        .collect();

    let km = cfg.k_max;
    let mut correlation = vec![vec![0.0; km]; km];
    let mut correlation_se = vec![vec![0.0; km]; km];
    for a in 0..km {
        for b in 0..km {
            if degenerate[a] || degenerate[b] {
                continue;
            }
            if let Some(r) = pearson(&columns[a], &columns[b]) {
                correlation[a][b] = r;
                correlation_se[a][b] = pearson_std_error(r, n);
            }
        }
    }
    Ok(LkStatistics {
        beta: cfg.beta,
        p: cfg.p,
        means,
        per_k,
        correlation,
        correlation_se,
        warnings,
    })
}

/// A map that can be evaluated anywhere in the plane.
pub trait PlanarEval {
    fn eval_at(&self, z: Complex64) -> Complex64;
}

impl<F: Fn(Complex64) -> Complex64> PlanarEval for F {
    fn eval_at(&self, z: Complex64) -> Complex64 {
        self(z)
    }
}

impl PlanarEval for crate::beltrami::PlanarMap {
    fn eval_at(&self, z: Complex64) -> Complex64 {
        self.eval(z)
    }
}

/// Image diameters of an annulus's boundary circles against the modulus bound
/// `D_I <= 16 exp(-c L) D_O` for the classical `c = 2 pi` and for `c = 2 pi^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusCheck {
    pub annulus: Annulus,
    pub lehto: f64,
    pub d_inner: f64,
    pub d_outer: f64,
    pub classical_bound: f64,
    pub paper_bound: f64,
    pub classical_satisfied: bool,
    pub paper_satisfied: bool,
    /// Set when a sampled image circle crosses itself.
    pub flagged: bool,
}

fn diameter(points: &[Complex64]) -> f64 {
    let mut d = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d = d.max((a - b).norm_sqr());
        }
    }
    d.sqrt()
}

pub fn modulus_bound_check<F: PlanarEval + ?Sized>(map: &F, ann: &Annulus, lehto: f64, samples: usize) -> ModulusCheck {
    let image = |r: f64| -> Vec<Complex64> {
        (0..=samples)
            .map(|j| map.eval_at(ann.center + Complex64::from_polar(r, TWO_PI * (j % samples) as f64 / samples as f64)))
            .collect()
    };
    let inner = image(ann.inner);
    let outer = image(ann.outer);
    let flagged = self_intersections(&inner) > 0 || self_intersections(&outer) > 0;
    if flagged {
        log::warn!(
            "image of the annulus around {} is not injective at sampling resolution",
            ann.center
        );
    }
    let d_inner = diameter(&inner[..samples]);
    let d_outer = diameter(&outer[..samples]);
    let classical_bound = 16.0 * (-TWO_PI * lehto).exp() * d_outer;
    let paper_bound = 16.0 * (-TWO_PI * std::f64::consts::PI * lehto).exp() * d_outer;
    let paper_satisfied = d_inner <= paper_bound;
    if !paper_satisfied {
        log::info!(
            "2 pi^2 modulus bound fails on A({}, {}, {}): D_I = {d_inner:.4e} > {paper_bound:.4e}",
            ann.center,
            ann.inner,
            ann.outer
        );
    }
    ModulusCheck {
        annulus: *ann,
        lehto,
        d_inner,
        d_outer,
        classical_bound,
        paper_bound,
        classical_satisfied: d_inner <= classical_bound,
        paper_satisfied,
        flagged,
    }
}
