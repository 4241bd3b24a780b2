//! Fixtures shared by the criterion benches in `benches/`.

use confweld_core::{BeltramiField, DiskExtension, Lattice, SampleBuilder, SolverConfig};
use num_complex::Complex64;

/// Solver configuration at lattice side `grid`, defaults otherwise.
pub fn solver(grid: usize) -> SolverConfig {
    SolverConfig {
        grid,
        ..Default::default()
    }
}

/// `mu = (1/3) z / zbar` on the disk, whose solution is `z |z|` inside.
pub fn radial_stretch(lattice: Lattice) -> BeltramiField {
    BeltramiField::from_fn(lattice, |z| {
        if z.norm() == 0.0 {
            Complex64::default()
        } else {
            z / z.conj() / 3.0
        }
    })
    .expect("valid dilatation")
}

/// Extension of the chaos homeomorphism for `(beta, seed)` on `chaos_grid` cells.
pub fn extension(beta: f64, seed: u64, chaos_grid: usize) -> DiskExtension {
    SampleBuilder::new(beta, chaos_grid)
        .and_then(|b| b.extension(seed))
        .expect("subcritical sample")
}
