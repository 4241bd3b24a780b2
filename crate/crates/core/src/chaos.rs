//! Normalized exponential chaos measures on the circle grid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{harmonic_number, FieldTrace, TraceSampler};
use crate::stats::{fit_line, Accumulator};

/// Inverse temperature and cutoff of a chaos measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaosParams {
    pub beta: f64,
    pub modes: usize,
    /// Allows `beta^2 >= 2` for measure-only experiments.
    pub exploratory: bool,
}

impl ChaosParams {
    /// Parameters for pipeline use; rejects `beta^2 >= 2`.
    pub fn new(beta: f64, modes: usize) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Argument(format!("beta must be finite and >= 0, got {beta}")));
        }
        if beta * beta >= 2.0 {
            return Err(Error::Supercritical { beta });
        }
        Ok(Self {
            beta,
            modes,
            exploratory: false,
        })
    }

    pub fn exploratory(beta: f64, modes: usize) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Argument(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self {
            beta,
            modes,
            exploratory: true,
        })
    }

    /// Moments of order `q` are finite iff `q < 2 / beta^2`.
    pub fn moment_limit(&self) -> f64 {
        if self.beta == 0.0 {
            f64::INFINITY
        } else {
            2.0 / (self.beta * self.beta)
        }
    }
}

/// Cell masses of the chaos measure on `[i/M, (i+1)/M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosMeasure {
    pub cell_masses: Vec<f64>,
    pub total_mass: f64,
    pub params: ChaosParams,
    pub seed: u64,
    /// `prefix[i]` is the mass of `[0, i/M)`.
    prefix: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosSummary {
    pub beta: f64,
    pub modes: usize,
    pub grid: usize,
    pub total_mass: f64,
    pub max_cell_mass: f64,
}

impl ChaosMeasure {
    /// Measure with the given masses; `params` and `seed` are provenance only.
    pub fn from_masses(cell_masses: Vec<f64>, params: ChaosParams, seed: u64) -> Result<Self> {
        if cell_masses.is_empty() {
            return Err(Error::Argument("measure needs at least one cell".into()));
        }
        if let Some(i) = cell_masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::Numeric(format!("cell {i} has invalid mass {}", cell_masses[i])));
        }
        let mut prefix = Vec::with_capacity(cell_masses.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for m in &cell_masses {
            acc += m;
            prefix.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Numeric("measure has zero total mass".into()));
        }
        Ok(Self {
            cell_masses,
            total_mass: acc,
            params,
            seed,
            prefix,
        })
    }

    pub fn grid_size(&self) -> usize {
        self.cell_masses.len()
    }

    /// Mass of `[0, x)` with linear pro-rating inside the last cell.
    pub fn cumulative(&self, x: f64) -> f64 {
        let m = self.grid_size();
        let s = x * m as f64;
        let i = (s.floor() as usize).min(m);
        if i == m {
            return self.total_mass;
        }
        self.prefix[i] + (s - i as f64) * self.cell_masses[i]
    }

    /// Mass of `[a, b)`; requires `0 <= a <= b <= 1`.
    pub fn interval_mass(&self, a: f64, b: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(Error::Argument(format!("interval [{a}, {b}) is not inside [0, 1]")));
        }
        if a > b {
            return Err(Error::Argument(format!("interval endpoints out of order: {a} > {b}")));
        }
        if a == b {
            return Ok(0.0);
        }
        Ok(self.cumulative(b) - self.cumulative(a))
    }

    /// Mass of the `count` consecutive cells starting at `start`, indices mod M.
    pub fn cell_range_mass(&self, start: usize, count: usize) -> f64 {
        let m = self.grid_size();
        let start = start % m;
        let end = start + count;
        if end <= m {
            self.prefix[end] - self.prefix[start]
        } else {
            (self.total_mass - self.prefix[start]) + self.prefix[end - m]
        }
    }

    pub fn max_cell_mass(&self) -> f64 {
        self.cell_masses.iter().copied().fold(0.0, f64::max)
    }

    pub fn summary(&self) -> ChaosSummary {
        ChaosSummary {
            beta: self.params.beta,
            modes: self.params.modes,
            grid: self.grid_size(),
            total_mass: self.total_mass,
            max_cell_mass: self.max_cell_mass(),
        }
    }

    /// Write `(cell_index, t_left, mass)` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cell_index", "t_left", "mass"])?;
        let m = self.grid_size() as f64;
        for (i, mass) in self.cell_masses.iter().enumerate() {
            w.serialize((i, i as f64 / m, mass))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cell mass `i` is `exp(beta X(t_i) - beta^2 H_n / 2) / M`, formed in log space.
pub fn build_measure(trace: &FieldTrace, params: &ChaosParams) -> Result<ChaosMeasure> {
    if params.modes != trace.modes {
        return Err(Error::Config(format!(
            "chaos parameters expect {} modes but the trace has {}",
            params.modes, trace.modes
        )));
    }
    let m = trace.grid_size();
    if 2 * trace.modes > m {
        return Err(Error::Aliasing {
            modes: trace.modes,
            grid: m,
        });
    }
    let beta = params.beta;
    let shift = -0.5 * beta * beta * harmonic_number(trace.modes) - (m as f64).ln();
    let masses: Vec<f64> = if beta == 0.0 {
        vec![1.0 / m as f64; m]
    } else {
        trace.values.iter().map(|x| (beta * x + shift).exp()).collect()
    };
    if let Some(i) = masses.iter().position(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Numeric(format!(
            "cell {i} mass {} is not a finite positive number (beta = {beta})",
            masses[i]
        )));
    }
    ChaosMeasure::from_masses(masses, *params, trace.seed)
}

/// Least-squares moment scaling exponent with a batch standard error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentScaling {
    pub q: f64,
    pub exponent: f64,
    pub std_error: f64,
    pub sizes: Vec<f64>,
    /// Empirical `E[tau(I)^q]` for each size.
    pub moments: Vec<f64>,
}

/// Configuration of a moment-scaling Monte Carlo run.
#[derive(Debug, Clone, Copy)]
pub struct MomentStudy {
    pub grid_size: usize,
    pub samples: usize,
    pub base_seed: u64,
    /// Number of independent batches used for the standard error.
    pub batches: usize,
}

/// Fit the slope of `ln E[tau(I)^q]` against `ln |I|` over dyadic sizes.
///
/// Each sample contributes the average of `tau(I)^q` over all disjoint dyadic
/// intervals of a given size, which is unbiased by rotation invariance.
pub fn moment_scaling(params: &ChaosParams, q: f64, sizes: &[f64], study: &MomentStudy) -> Result<MomentScaling> {
    if params.beta > 0.0 && q >= params.moment_limit() {
        return Err(Error::MomentOutOfRange {
            q,
            beta: params.beta,
            limit: params.moment_limit(),
        });
    }
    if sizes.len() < 2 {
        return Err(Error::Argument("moment scaling needs at least two sizes".into()));
    }
    let m = study.grid_size;
    let cells: Vec<usize> = sizes
        .iter()
        .map(|&s| {
            let c = s * m as f64;
            if !(s > 0.0 && s <= 1.0) || c.fract() != 0.0 || c < 1.0 || !(c as usize).is_power_of_two() {
                Err(Error::Argument(format!(
                    "size {s} is not a dyadic multiple of the grid cell 1/{m}"
                )))
            } else {
                Ok(c as usize)
            }
        })
        .collect::<Result<_>>()?;
    if study.samples == 0 || study.batches == 0 || study.batches > study.samples {
        return Err(Error::Argument("need samples >= batches >= 1".into()));
    }
    let sampler = TraceSampler::new(m)?;
    let per_sample: Vec<Vec<f64>> = (0..study.samples)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let trace = sampler.sample(params.modes, study.base_seed + i as u64)?;
            let measure = build_measure(&trace, params)?;
            Ok(cells
                .iter()
                .map(|&c| {
                    let count = m / c;
                    (0..count)
                        .map(|j| measure.cell_range_mass(j * c, c).powf(q))
                        .sum::<f64>()
                        / count as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let log_sizes: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let slope_of = |rows: &[Vec<f64>]| -> (f64, Vec<f64>) {
        let means: Vec<f64> = (0..sizes.len())
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect();
        let logs: Vec<f64> = means.iter().map(|v| v.ln()).collect();
        let fit = fit_line(&log_sizes, &logs).expect("distinct sizes");
        (fit.slope, means)
    };
    let (exponent, moments) = slope_of(&per_sample);
    let batch_len = study.samples / study.batches;
    let std_error = if study.batches > 1 {
        let acc: Accumulator = (0..study.batches)
            .map(|b| slope_of(&per_sample[b * batch_len..(b + 1) * batch_len]).0)
            .collect();
        acc.std_error()
    } else {
        f64::NAN
    };
    Ok(MomentScaling {
        q,
        exponent,
        std_error,
        sizes: sizes.to_vec(),
        moments,
    })
}

/// Exact second moment of the mass of `cells` consecutive grid cells for the
/// discrete measure of `build_measure`, from the truncated covariance.
///
/// `E[tau(I)^2] = M^{-2} sum_{|d| < L} (L - |d|) exp(beta^2 C_n(d / M))`.
pub fn second_moment_exact(beta: f64, modes: usize, grid_size: usize, cells: usize) -> Result<f64> {
    let cov = truncated_covariance_grid(modes, grid_size)?;
    let m = grid_size;
    let b2 = beta * beta;
    let l = cells as i64;
    let mut total = 0.0;
    for d in (1 - l)..l {
        let idx = d.rem_euclid(m as i64) as usize;
        total += (l - d.abs()) as f64 * (b2 * cov[idx]).exp();
    }
    Ok(total / (m as f64 * m as f64))
}

/// `C_n(j / M)` for `j = 0..M` via one inverse FFT.
pub fn truncated_covariance_grid(modes: usize, grid_size: usize) -> Result<Vec<f64>> {
    use num_complex::Complex64;
    if !grid_size.is_power_of_two() || 2 * modes > grid_size {
        return Err(Error::Aliasing { modes, grid: grid_size });
    }
    let mut buf = vec![Complex64::default(); grid_size];
    for k in 1..=modes {
        buf[k] = Complex64::new(1.0 / k as f64, 0.0);
    }
    rustfft::FftPlanner::new().plan_fft_inverse(grid_size).process(&mut buf);
    Ok(buf.iter().map(|c| c.re).collect())
}
