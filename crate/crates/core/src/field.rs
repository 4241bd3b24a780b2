//! Finite-mode samples of the log-correlated Gaussian field on the circle.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// One realization X_n of the circle field truncated at `modes` frequencies.
///
/// `cos_coeffs[k-1]` and `sin_coeffs[k-1]` are `A_k / sqrt(k)` and `B_k / sqrt(k)`,
/// so coefficient `k` has variance `1/k`. `values[j]` is `X_n` at the cell
/// midpoint `(j + 1/2) / grid_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrace {
    pub modes: usize,
    pub cos_coeffs: Vec<f64>,
    pub sin_coeffs: Vec<f64>,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl FieldTrace {
    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    /// Grid point `t_j` at which `values[j]` is taken.
    pub fn grid_point(&self, j: usize) -> f64 {
        (j as f64 + 0.5) / self.grid_size() as f64
    }

    /// Direct O(modes) evaluation at an arbitrary `t`.
    pub fn value_at(&self, t: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * t;
        self.cos_coeffs
            .iter()
            .zip(&self.sin_coeffs)
            .enumerate()
            .map(|(i, (a, b))| {
                let (s, c) = ((i + 1) as f64 * w).sin_cos();
                a * c + b * s
            })
            .sum()
    }

    /// Pointwise variance `H_n`.
    pub fn variance(&self) -> f64 {
        harmonic_number(self.modes)
    }

    /// Write `(t, X(t))` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "X"])?;
        for (j, x) in self.values.iter().enumerate() {
            w.serialize((self.grid_point(j), x))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The part of a trace carried by the frequency octave of `band_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandField {
    pub band_index: usize,
    /// Lowest and highest frequency in the band (inclusive).
    pub low: usize,
    pub high: usize,
    pub values: Vec<f64>,
}

/// `H_n = 1 + 1/2 + ... + 1/n`.
pub fn harmonic_number(n: usize) -> f64 {
    (1..=n).rev().map(|k| 1.0 / k as f64).sum()
}

/// Covariance of the untruncated field at lag `lag`: `-ln(2 |sin(pi lag)|)`.
pub fn covariance_exact(lag: f64) -> Result<f64> {
    let frac = lag - lag.floor();
    if frac == 0.0 || !lag.is_finite() {
        return Err(Error::Singularity(format!(
            "field covariance is infinite at integer lag {lag}"
        )));
    }
    Ok(-(2.0 * (std::f64::consts::PI * frac).sin().abs()).ln())
}

/// Covariance of the `modes`-truncated field: `sum_{k<=n} cos(2 pi k s) / k`.
pub fn covariance_truncated(lag: f64, modes: usize) -> f64 {
    let w = 2.0 * std::f64::consts::PI * lag;
    (1..=modes).rev().map(|k| (k as f64 * w).cos() / k as f64).sum()
}

/// Frequencies `(low, high)` of octave band `k`: band 0 is `{1}`, band `k >= 1`
/// is `(2^{k-1}, 2^k]`, clipped to `modes`.
pub fn band_range(k: usize, modes: usize) -> (usize, usize) {
    if k == 0 {
        (1, 1.min(modes))
    } else {
        ((1usize << (k - 1)) + 1, (1usize << k).min(modes))
    }
}

/// Number of nonempty octave bands for a cutoff.
pub fn band_count(modes: usize) -> usize {
    if modes == 0 {
        return 0;
    }
    let mut k = 0;
    while (1usize << k) < modes {
        k += 1;
    }
    k + 1
}

/// Reusable synthesizer for one grid size; cheap to clone and share across threads.
#[derive(Clone)]
pub struct TraceSampler {
    grid_size: usize,
    plan: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TraceSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceSampler")
            .field("grid_size", &self.grid_size)
            .finish()
    }
}

impl TraceSampler {
    pub fn new(grid_size: usize) -> Result<Self> {
        if grid_size < 2 || !grid_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid size {grid_size} is not a power of two >= 2"
            )));
        }
        let plan = FftPlanner::new().plan_fft_inverse(grid_size);
        Ok(Self { grid_size, plan })
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Draw coefficients for `seed` and synthesize the grid values.
    pub fn sample(&self, modes: usize, seed: u64) -> Result<FieldTrace> {
        if 2 * modes > self.grid_size {
            return Err(Error::Aliasing {
                modes,
                grid: self.grid_size,
            });
        }
        let (cos_coeffs, sin_coeffs) = draw_coefficients(modes, seed);
        let values = self.synthesize(&cos_coeffs, &sin_coeffs, 0.0);
        Ok(FieldTrace {
            modes,
            cos_coeffs,
            sin_coeffs,
            values,
            seed,
        })
    }

    /// Values of the trigonometric sum with the given coefficients at the grid
    /// midpoints shifted by `shift`.
    pub fn synthesize(&self, cos_coeffs: &[f64], sin_coeffs: &[f64], shift: f64) -> Vec<f64> {
        let m = self.grid_size;
        assert!(2 * cos_coeffs.len() <= m && cos_coeffs.len() == sin_coeffs.len());
        let mut buf = vec![Complex64::default(); m];
        let half_cell = std::f64::consts::PI / m as f64;
        let two_pi_shift = 2.0 * std::f64::consts::PI * shift;
        for (i, (a, b)) in cos_coeffs.iter().zip(sin_coeffs).enumerate() {
            let k = (i + 1) as f64;
            let phase = Complex64::from_polar(1.0, k * (half_cell + two_pi_shift));
            buf[i + 1] = Complex64::new(*a, -*b) * phase;
        }
        self.plan.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }
}

/// Coefficients `A_k / sqrt(k)`, `B_k / sqrt(k)` drawn in the order
/// `A_1, B_1, A_2, B_2, ...`, so a longer cutoff extends a shorter one.
pub fn draw_coefficients(modes: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cos_coeffs = Vec::with_capacity(modes);
    let mut sin_coeffs = Vec::with_capacity(modes);
    for k in 1..=modes {
        let scale = (k as f64).sqrt().recip();
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        cos_coeffs.push(a * scale);
        sin_coeffs.push(b * scale);
    }
    (cos_coeffs, sin_coeffs)
}

/// Sample a trace with a freshly planned synthesizer.
pub fn sample_trace(modes: usize, grid_size: usize, seed: u64) -> Result<FieldTrace> {
    TraceSampler::new(grid_size)?.sample(modes, seed)
}

/// Split a trace into octave bands, each synthesized on the trace's grid.
pub fn band_decompose(trace: &FieldTrace) -> Result<Vec<BandField>> {
    if trace.modes == 0 {
        return Err(Error::Argument("band decomposition needs at least one mode".into()));
    }
    let sampler = TraceSampler::new(trace.grid_size())?;
    let bands = (0..band_count(trace.modes))
        .map(|k| {
            let (low, high) = band_range(k, trace.modes);
            let mut a = vec![0.0; high];
            let mut b = vec![0.0; high];
            a[low - 1..high].copy_from_slice(&trace.cos_coeffs[low - 1..high]);
            b[low - 1..high].copy_from_slice(&trace.sin_coeffs[low - 1..high]);
            BandField {
                band_index: k,
                low,
                high,
                values: sampler.synthesize(&a, &b, 0.0),
            }
        })
        .collect();
    Ok(bands)
}
