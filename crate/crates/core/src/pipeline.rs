//! Seeded construction of the random objects: field, measure, homeomorphism,
//! and extension for one sample.

use crate::chaos::{build_measure, ChaosMeasure, ChaosParams};
use crate::error::Result;
use crate::extension::DiskExtension;
use crate::field::TraceSampler;
use crate::homeo::{build_homeo, CircleHomeomorphism};

/// Builds per-seed samples on a fixed chaos grid with `modes = grid / 2`.
#[derive(Debug, Clone)]
pub struct SampleBuilder {
    sampler: TraceSampler,
    params: ChaosParams,
}

impl SampleBuilder {
    pub fn new(beta: f64, grid: usize) -> Result<Self> {
        let sampler = TraceSampler::new(grid)?;
        let params = ChaosParams::new(beta, grid / 2)?;
        Ok(Self { sampler, params })
    }

    pub fn params(&self) -> &ChaosParams {
        &self.params
    }

    pub fn grid(&self) -> usize {
        self.sampler.grid_size()
    }

    pub fn measure(&self, seed: u64) -> Result<ChaosMeasure> {
        let trace = self.sampler.sample(self.params.modes, seed)?;
        build_measure(&trace, &self.params)
    }

    pub fn homeo(&self, seed: u64) -> Result<CircleHomeomorphism> {
        build_homeo(&self.measure(seed)?)
    }

    pub fn extension(&self, seed: u64) -> Result<DiskExtension> {
        Ok(DiskExtension::new(self.homeo(seed)?))
    }
}

/// Smallest power of two `M` with `M >= 32 / r_min`, so the chaos grid
/// resolves the finest annulus of a Lehto study.
pub fn grid_for_radius(r_min: f64) -> usize {
    let target = (32.0 / r_min).ceil() as usize;
    target.next_power_of_two()
}
