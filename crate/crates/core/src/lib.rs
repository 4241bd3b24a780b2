//! Random Jordan curves by conformal welding of chaos homeomorphisms.
//!
//! The pipeline runs from a log-correlated Fourier field on the circle
//! ([`field`]), through its exponential measure ([`chaos`]) and normalized
//! distribution function ([`homeo`]), to the Beurling–Ahlfors extension
//! ([`extension`]), a periodic-grid Beltrami solver ([`beltrami`]) and the
//! welded curve ([`welding`]). [`lehto`] holds the Lehto-integral studies.

pub mod beltrami;
pub mod chaos;
pub mod curve;
pub mod error;
pub mod export;
pub mod extension;
pub mod fft;
pub mod field;
pub mod grid;
pub mod homeo;
pub mod lehto;
pub mod pipeline;
pub mod stats;
pub mod welding;

pub use beltrami::{solve, PlanarMap, SolveReport, SolverConfig, Symbol};
pub use chaos::{build_measure, ChaosMeasure, ChaosParams};
pub use curve::JordanCurve;
pub use error::{Error, Result};
pub use extension::{DiskExtension, Distortion};
pub use field::{FieldTrace, TraceSampler};
pub use grid::{BeltramiField, Lattice, Regularization};
pub use homeo::{build_homeo, CircleHomeomorphism};
pub use lehto::{Annulus, LehtoEstimate, TailConfig, TailEstimate};
pub use pipeline::SampleBuilder;
pub use welding::{verify_welding, weld, WeldingResult};
