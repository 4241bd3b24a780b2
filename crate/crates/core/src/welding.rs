//! The full pipeline `h -> f -> mu -> F -> curve` and its consistency checks.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::beltrami::{
    conformality_residual, solve, ConformalityResidual, ExteriorRegion, PlanarMap, SolveReport, SolverConfig,
};
use crate::curve::JordanCurve;
use crate::error::{Error, Result};
use crate::extension::DiskExtension;
use crate::grid::{mollify, regularize, BeltramiField, Lattice};
use crate::homeo::CircleHomeomorphism;
use crate::pipeline::SampleBuilder;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Annulus of the disk where `F o f^{-1}` is tested for conformality.
pub const VERIFY_INNER: f64 = 0.3;
pub const VERIFY_OUTER: f64 = 0.8;

/// Default chaos grid for welds driven by a sampled measure.
pub const WELD_CHAOS_GRID: usize = 1 << 15;

/// Flag thresholds. A result with any flag set is not accepted.
const MAX_CONFORMALITY: f64 = 1e-2;
const MAX_CLIPPED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct WeldDiagnostics {
    pub solve: SolveReport,
    pub conformality: ConformalityResidual,
    pub negative_jacobians: usize,
    pub clipped_points: usize,
    pub clipped_fraction: f64,
    pub self_intersections: usize,
    pub boundary_decay_ratio: f64,
}

/// Parameters of a weld as recorded in manifests.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunMetadata {
    pub beta: Option<f64>,
    pub seed: Option<u64>,
    pub chaos_grid: Option<usize>,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct WeldingResult {
    pub curve: JordanCurve,
    pub map: PlanarMap,
    pub extension: DiskExtension,
    /// Finite-difference dilatation of `f` before regularization.
    pub mu: BeltramiField,
    pub metadata: RunMetadata,
    pub diagnostics: WeldDiagnostics,
    pub flags: Vec<String>,
}

impl WeldingResult {
    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }

    /// `f_-`: the map `F` itself on `|z| >= 1`.
    pub fn f_minus(&self, z: Complex64) -> Result<Complex64> {
        if z.norm() < 1.0 {
            return Err(Error::Argument(format!("f_- is defined for |z| >= 1, got {z}")));
        }
        Ok(self.map.eval(z))
    }

    /// `f_+ = F o f^{-1}` on the open disk.
    pub fn f_plus(&self, w: Complex64) -> Result<Complex64> {
        Ok(self.map.eval(self.extension.invert(w)?))
    }

    pub fn summary(&self) -> WeldSummary {
        WeldSummary {
            metadata: self.metadata,
            diagnostics: self.diagnostics.clone(),
            flags: self.flags.clone(),
            curve_points: self.curve.len(),
        }
    }
}

/// Serializable part of a weld, for manifests.
#[derive(Debug, Clone, Serialize)]
pub struct WeldSummary {
    pub metadata: RunMetadata,
    pub diagnostics: WeldDiagnostics,
    pub flags: Vec<String>,
    pub curve_points: usize,
}

/// Weld a circle homeomorphism: extend, sample the dilatation on the
/// lattice, regularize, mollify, solve, and read the curve off the unit circle.
pub fn weld(h: &CircleHomeomorphism, cfg: &SolverConfig) -> Result<WeldingResult> {
    weld_with_metadata(h, cfg, None, None, None)
}

/// Weld the homeomorphism of the chaos measure with parameter `beta` and `seed`.
pub fn weld_sample(beta: f64, seed: u64, chaos_grid: usize, cfg: &SolverConfig) -> Result<WeldingResult> {
    let h = SampleBuilder::new(beta, chaos_grid)?.homeo(seed)?;
    weld_with_metadata(&h, cfg, Some(beta), Some(seed), Some(chaos_grid))
}

fn weld_with_metadata(
    h: &CircleHomeomorphism,
    cfg: &SolverConfig,
    beta: Option<f64>,
    seed: Option<u64>,
    chaos_grid: Option<usize>,
) -> Result<WeldingResult> {
    let lattice = cfg.validate()?;
    let extension = DiskExtension::new(h.clone());
    let mu = extension.beltrami_field(lattice)?;
    let reg = regularize(&mu, cfg.epsilon, cfg.regularization)?;
    let reg = mollify(&reg, cfg.mollify);
    let map = solve(&reg, cfg)?;

    let curve = JordanCurve::from_closed(map.boundary_samples(cfg.curve_samples));
    let conformality = conformality_residual(&map, ExteriorRegion::default());
    let diagnostics = WeldDiagnostics {
        solve: map.report.clone(),
        conformality,
        negative_jacobians: map.negative_jacobians(),
        clipped_points: mu.clipped,
        clipped_fraction: mu.clipped_fraction(),
        self_intersections: curve.self_intersections(),
        boundary_decay_ratio: map.boundary_decay_ratio(),
    };
    let mut flags = Vec::new();
    if diagnostics.self_intersections > 0 {
        flags.push(format!(
            "curve has {} self-intersections",
            diagnostics.self_intersections
        ));
    }
    if diagnostics.negative_jacobians > 0 {
        flags.push(format!(
            "{} lattice nodes with nonpositive Jacobian",
            diagnostics.negative_jacobians
        ));
    }
    if !(conformality.median <= MAX_CONFORMALITY) {
        flags.push(format!("exterior conformality residual {:.3e}", conformality.median));
    }
    if diagnostics.clipped_fraction > MAX_CLIPPED_FRACTION {
        flags.push(format!(
            "{:.3}% of dilatation samples clipped",
            100.0 * diagnostics.clipped_fraction
        ));
    }
    for f in &flags {
        log::warn!("weld flagged: {f}");
    }
    Ok(WeldingResult {
        curve,
        map,
        extension,
        mu,
        metadata: RunMetadata {
            beta,
            seed,
            chaos_grid,
            solver: *cfg,
        },
        diagnostics,
        flags,
    })
}

/// Median `|g_zbar| / |g_z|` by centered differences with the lattice step
/// over lattice points `w` with `VERIFY_INNER <= |w| <= VERIFY_OUTER`.
pub fn welding_defect(lattice: &Lattice, g: impl Fn(Complex64) -> Result<Complex64> + Sync) -> Result<f64> {
    let h = lattice.step();
    let i = Complex64::i();
    let ratios: Vec<f64> = (0..lattice.len())
        .into_par_iter()
        .filter_map(|idx| {
            let w = lattice.point_at(idx);
            let r = w.norm();
            (VERIFY_INNER..=VERIFY_OUTER).contains(&r).then_some(w)
        })
        .map(|w| {
            let gx = (g(w + h)? - g(w - h)?) / (2.0 * h);
            let gy = (g(w + i * h)? - g(w - i * h)?) / (2.0 * h);
            let dz = 0.5 * (gx - i * gy);
            let dzbar = 0.5 * (gx + i * gy);
            if dz.norm() == 0.0 {
                return Err(Error::Singularity(format!("f_+ has vanishing derivative at {w}")));
            }
            Ok(dzbar.norm() / dz.norm())
        })
        .collect::<Result<_>>()?;
    if ratios.is_empty() {
        return Err(Error::Argument("no lattice points in the verification annulus".into()));
    }
    Ok(crate::stats::median(&ratios))
}

/// Conformality defect of `f_+ = F o f^{-1}` on the verification annulus.
pub fn verify_welding(result: &WeldingResult) -> Result<f64> {
    if result.is_flagged() {
        return Err(Error::Flagged(result.flags.join("; ")));
    }
    welding_defect(&result.map.lattice, |w| result.f_plus(w))
}

/// Hausdorff distances between curves of consecutive `eps` values.
pub fn epsilon_convergence(h: &CircleHomeomorphism, eps_list: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>> {
    if eps_list.len() < 2 || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Argument(
            "eps list must be strictly decreasing with at least two entries".into(),
        ));
    }
    let mut curves = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let res = weld(h, &SolverConfig { epsilon: eps, ..*cfg })?;
        if res.is_flagged() {
            return Err(Error::Flagged(format!("eps = {eps}: {}", res.flags.join("; "))));
        }
        curves.push(res.curve);
    }
    Ok(curves.windows(2).map(|w| w[0].hausdorff(&w[1])).collect())
}

/// Dyadic Hölder exponent of `t -> F(e^{2 pi i t})` along the sampled curve.
pub fn curve_holder_exponent(result: &WeldingResult, depth: u32) -> Result<f64> {
    result.curve.holder_exponent(depth)
}

/// `F(e^{2 pi i t})` evaluated directly, for parameters off the sample grid.
pub fn boundary_point(result: &WeldingResult, t: f64) -> Complex64 {
    result.map.eval(Complex64::from_polar(1.0, TWO_PI * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::distance_from_unit_circle;

    fn small_cfg() -> SolverConfig {
        SolverConfig {
            grid: 256,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn identity_welds_to_circle() {
        let res = weld(&CircleHomeomorphism::identity(1024), &small_cfg()).unwrap();
        assert!(!res.is_flagged(), "{:?}", res.flags);
        assert!(distance_from_unit_circle(&res.curve) < 1e-2);
        assert!(res.curve.is_closed());
        assert!(verify_welding(&res).unwrap() < 1e-3);
        let holder = curve_holder_exponent(&res, 10).unwrap();
        assert!((holder - 1.0).abs() < 0.02, "{holder}");
    }

    #[test]
    fn rotation_welds_to_circle() {
        let res = weld(&CircleHomeomorphism::rotation(1024, 0.3), &small_cfg()).unwrap();
        assert!(!res.is_flagged());
        assert!(distance_from_unit_circle(&res.curve) < 1e-2);
        assert!(res.mu.sup_abs() < 1e-6);
    }

    #[test]
    fn synthetic_radial_pair_has_identity_f_plus() {
        let lattice = Lattice::new(1024, 2.0).unwrap();
        let f_inv = |w: Complex64| {
            let r = w.norm();
            if r == 0.0 {
                w
            } else {
                w / r.sqrt()
            }
        };
        let big_f = PlanarMap::from_fn(lattice, |z| if z.norm() < 1.0 { z * z.norm() } else { z });
        let defect = welding_defect(&lattice, |w| Ok(big_f.eval(f_inv(w)))).unwrap();
        assert!(defect < 1e-3, "{defect}");
        // a mismatched pair is detected
        let wrong = welding_defect(&lattice, |w| Ok(big_f.eval(w))).unwrap();
        assert!(wrong > 0.1, "{wrong}");
    }

    #[test]
    fn repeated_welds_are_identical() {
        let cfg = small_cfg();
        let a = weld_sample(0.7, 3, 1 << 13, &cfg).unwrap();
        let b = weld_sample(0.7, 3, 1 << 13, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn affine_perturbation_renormalizes() {
        let res = weld_sample(0.7, 5, 1 << 13, &small_cfg()).unwrap();
        let moved = res
            .map
            .affine(Complex64::new(0.8, 0.6) * 1.7, Complex64::new(0.3, -0.2));
        let back = moved.renormalize_principal();
        let orig = res.map.boundary_samples(1024);
        let again = back.boundary_samples(1024);
        let err = orig.iter().zip(&again).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn epsilon_list_must_decrease() {
        let h = CircleHomeomorphism::identity(256);
        assert!(epsilon_convergence(&h, &[0.05, 0.1], &small_cfg()).is_err());
        let d = epsilon_convergence(&h, &[0.2, 0.1], &small_cfg()).unwrap();
        assert!(d[0] <= 1e-3);
    }

    #[test]
    fn f_minus_rejects_interior() {
        let res = weld(&CircleHomeomorphism::identity(256), &small_cfg()).unwrap();
        assert!(res.f_minus(Complex64::new(0.5, 0.0)).is_err());
        let z = Complex64::new(1.2, 0.3);
        assert!((res.f_minus(z).unwrap() - z).norm() < 1e-9);
    }
}
