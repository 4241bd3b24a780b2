use anyhow::{anyhow, bail, Result};
use confweld_core::chaos::{moment_scaling, second_moment_exact, MomentStudy};
use confweld_core::curve::distance_from_unit_circle;
use confweld_core::field::{covariance_exact, covariance_truncated, TraceSampler};
use confweld_core::lehto::{annulus_decomposition, lehto_integral, lk_statistics, tail_probability, LkConfig};
use confweld_core::pipeline::grid_for_radius;
use confweld_core::stats::{fit_line, normal_quantile, Accumulator};
use confweld_core::welding::{curve_holder_exponent, WELD_CHAOS_GRID};
use confweld_core::{
    build_homeo, build_measure, solve, verify_welding, Annulus, BeltramiField, ChaosParams, CircleHomeomorphism,
    DiskExtension, SolverConfig, TailConfig,
};
use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{RunConfig, Study};
use crate::manifest::Outputs;

/// Process exit status of a completed run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Flagged = 2,
}

const GMC_GRID: usize = 1 << 13;
const COVARIANCE_MODES: usize = 4096;
const MOMENT_GRID: usize = 1 << 15;
/// Quadrature nodes for single Lehto integrals.
const N_RHO: usize = 65;
const N_THETA: usize = 128;

fn params(cfg: &RunConfig, modes: usize) -> Result<ChaosParams> {
    Ok(if cfg.exploratory {
        ChaosParams::exploratory(cfg.beta, modes)?
    } else {
        ChaosParams::new(cfg.beta, modes)?
    })
}

fn sample_homeo(cfg: &RunConfig, grid: usize) -> Result<CircleHomeomorphism> {
    let modes = cfg.modes_for(grid);
    let p = params(cfg, modes)?;
    let trace = TraceSampler::new(grid)?.sample(modes, cfg.seed)?;
    Ok(build_homeo(&build_measure(&trace, &p)?)?)
}

/// Hölder regressions use every dyadic level a sample resolves.
fn depth_for(n: usize) -> u32 {
    n.trailing_zeros()
}

pub fn weld(cfg: &RunConfig) -> Result<Status> {
    let solver = cfg.solver();
    solver.validate()?;
    let grid = cfg.chaos_grid_or(WELD_CHAOS_GRID);
    let h = sample_homeo(cfg, grid)?;
    let res = confweld_core::weld(&h, &solver)?;

    let mut out = Outputs::new(&cfg.out)?;
    res.curve.write_csv(out.create("curve.csv")?)?;
    res.curve.write_svg(out.create("curve.svg")?)?;
    h.write_csv(out.create("homeo.csv")?)?;
    res.map.write_history_csv(out.create("solver_history.csv")?)?;

    let flagged = res.is_flagged();
    let verify = if cfg.verify && !flagged {
        Some(verify_welding(&res)?)
    } else {
        None
    };
    let holder_h = h.holder_exponent(depth_for(h.cells())).ok();
    let holder_curve = curve_holder_exponent(&res, depth_for(res.curve.len())).ok();
    let results = json!({
        "weld": res.summary(),
        "distance_from_unit_circle": distance_from_unit_circle(&res.curve),
        "welding_defect": verify,
        "holder_exponent_h": holder_h,
        "holder_exponent_curve": holder_curve,
    });
    let status = if flagged { Status::Flagged } else { Status::Ok };
    let path = out.finish("weld", cfg, if flagged { "flagged" } else { "ok" }, results)?;
    for f in &res.flags {
        eprintln!("flagged: {f}");
    }
    println!("{}", path.display());
    Ok(status)
}

pub fn tail(cfg: &RunConfig) -> Result<Status> {
    let delta = cfg
        .delta
        .ok_or_else(|| anyhow!("missing --delta (the tail threshold per scale is required)"))?;
    let tail_cfg = TailConfig {
        base_seed: cfg.seed,
        grid: cfg.chaos_grid,
        ..TailConfig::new(cfg.beta, cfg.p, delta, cfg.n_values.clone(), cfg.samples)
    };
    let est = tail_probability(&tail_cfg)?;
    let mut out = Outputs::new(&cfg.out)?;
    est.write_csv(out.create("tail.csv")?)?;

    let lk = if cfg.lk_samples > 0 {
        let lk_cfg = LkConfig {
            base_seed: cfg.seed,
            grid: cfg.chaos_grid,
            ..LkConfig::new(cfg.beta, cfg.p, cfg.k_max, cfg.lk_samples)
        };
        let stats = lk_statistics(&lk_cfg)?;
        let mut w = csv::Writer::from_writer(out.create("lk_cdf.csv")?);
        w.write_record(["k", "eps", "prob"])?;
        for c in &stats.per_k {
            for (e, p) in c.eps.iter().zip(&c.prob) {
                w.serialize((c.k, e, p))?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(out.create("lk_correlation.csv")?);
        w.write_record(["j", "k", "correlation", "std_error"])?;
        for (j, row) in stats.correlation.iter().enumerate() {
            for (k, c) in row.iter().enumerate() {
                w.serialize((j + 1, k + 1, c, stats.correlation_se[j][k]))?;
            }
        }
        w.flush()?;
        for warning in &stats.warnings {
            log::warn!("{warning}");
        }
        Some(stats)
    } else {
        None
    };
    let results = json!({
        "tail": est,
        "fitted_slope": est.fit.as_ref().map(|f| f.slope),
        "lk": lk,
    });
    println!("{}", out.finish("tail", cfg, "ok", results)?.display());
    Ok(Status::Ok)
}

pub fn stats(cfg: &RunConfig) -> Result<Status> {
    match cfg.study {
        Study::Covariance => covariance_study(cfg),
        Study::Moment => moment_study(cfg),
    }
}

fn covariance_study(cfg: &RunConfig) -> Result<Status> {
    let modes = cfg.modes.unwrap_or(COVARIANCE_MODES);
    let grid = cfg.chaos_grid_or(2 * modes);
    let sampler = TraceSampler::new(grid)?;
    if 2 * modes > grid {
        bail!("grid {grid} cannot resolve {modes} modes");
    }
    let shifts: Vec<usize> = cfg
        .lags
        .iter()
        .map(|&lag| {
            if !(0.0..=1.0).contains(&lag) {
                bail!("lag {lag} outside [0, 1]");
            }
            Ok((lag * grid as f64).round() as usize % grid)
        })
        .collect::<Result<_>>()?;
    let per_sample: Vec<Vec<f64>> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let x = sampler.sample(modes, cfg.seed + i)?.values;
            Ok(shifts
                .iter()
                .map(|&d| (0..grid).map(|j| x[j] * x[(j + d) % grid]).sum::<f64>() / grid as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    let z = normal_quantile(0.95);
    let mut out = Outputs::new(&cfg.out)?;
    let mut w = csv::Writer::from_writer(out.create("covariance.csv")?);
    w.write_record([
        "lag",
        "grid_lag",
        "estimate",
        "std_error",
        "ci_lo",
        "ci_hi",
        "exact",
        "truncated",
    ])?;
    let mut rows = Vec::new();
    for (i, (&lag, &d)) in cfg.lags.iter().zip(&shifts).enumerate() {
        let acc: Accumulator = per_sample.iter().map(|r| r[i]).collect();
        let t = d as f64 / grid as f64;
        let exact = covariance_exact(t).ok();
        let truncated = covariance_truncated(t, modes);
        let (m, se) = (acc.mean(), acc.std_error());
        w.serialize((lag, t, m, se, m - z * se, m + z * se, exact, truncated))?;
        rows.push(json!({ "lag": lag, "grid_lag": t, "estimate": m, "std_error": se, "exact": exact, "truncated": truncated }));
    }
    w.flush()?;
    drop(w);
    println!(
        "{}",
        out.finish("stats", cfg, "ok", json!({ "covariance": rows }))?.display()
    );
    Ok(Status::Ok)
}

fn moment_study(cfg: &RunConfig) -> Result<Status> {
    let grid = cfg.chaos_grid_or(MOMENT_GRID);
    let modes = cfg.modes_for(grid);
    let p = params(cfg, modes)?;
    let sizes: Vec<f64> = cfg.levels.iter().map(|&j| 0.5f64.powi(j as i32)).collect();
    let study = MomentStudy {
        grid_size: grid,
        samples: cfg.samples,
        base_seed: cfg.seed,
        batches: cfg.batches,
    };
    let fit = moment_scaling(&p, cfg.q, &sizes, &study)?;
    let b2 = cfg.beta * cfg.beta;
    let predicted = (1.0 + b2 / 2.0) * cfg.q - b2 * cfg.q * cfg.q / 2.0;
    let exact: Option<Vec<f64>> = (cfg.q == 2.0)
        .then(|| {
            sizes
                .iter()
                .map(|s| second_moment_exact(cfg.beta, modes, grid, (s * grid as f64) as usize))
                .collect::<confweld_core::Result<_>>()
        })
        .transpose()?;
    let oracle_slope = exact.as_ref().and_then(|e| {
        let xs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
        let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
        fit_line(&xs, &ys).map(|f| f.slope)
    });

    let mut out = Outputs::new(&cfg.out)?;
    let mut w = csv::Writer::from_writer(out.create("moments.csv")?);
    w.write_record(["size", "moment", "exact"])?;
    for (i, (s, m)) in sizes.iter().zip(&fit.moments).enumerate() {
        w.serialize((s, m, exact.as_ref().map(|e| e[i])))?;
    }
    w.flush()?;
    drop(w);
    let results = json!({
        "exponent": fit.exponent,
        "std_error": fit.std_error,
        "predicted": predicted,
        "oracle_slope": oracle_slope,
        "moment_limit": p.moment_limit(),
    });
    println!("{}", out.finish("stats", cfg, "ok", results)?.display());
    Ok(Status::Ok)
}

pub fn gmc(cfg: &RunConfig) -> Result<Status> {
    let grid = cfg.chaos_grid_or(GMC_GRID);
    let modes = cfg.modes_for(grid);
    let p = params(cfg, modes)?;
    let trace = TraceSampler::new(grid)?.sample(modes, cfg.seed)?;
    let measure = build_measure(&trace, &p)?;
    let mut out = Outputs::new(&cfg.out)?;
    trace.write_csv(out.create("field.csv")?)?;
    measure.write_csv(out.create("measure.csv")?)?;
    let homeo = build_homeo(&measure);
    if let Ok(h) = &homeo {
        h.write_csv(out.create("homeo.csv")?)?;
        h.write_svg(out.create("homeo.svg")?, 4096)?;
    }
    let results = json!({
        "measure": measure.summary(),
        "field_variance": trace.variance(),
        "holder_exponent_h": homeo.as_ref().ok().and_then(|h| h.holder_exponent(depth_for(h.cells())).ok()),
        "homeo_error": homeo.as_ref().err().map(|e| e.to_string()),
    });
    // a measure that underflowed to zero somewhere has no homeomorphism
    let status = if homeo.is_err() { Status::Flagged } else { Status::Ok };
    let label = if homeo.is_err() { "flagged" } else { "ok" };
    println!("{}", out.finish("gmc", cfg, label, results)?.display());
    Ok(status)
}

pub fn lehto(cfg: &RunConfig) -> Result<Status> {
    let n = *cfg.n_values.iter().max().ok_or_else(|| anyhow!("n_values is empty"))?;
    if cfg.p == 0 {
        bail!("p = 0 makes the annuli overlap");
    }
    let r_min = 0.5f64.powi((n as u32 * cfg.p) as i32);
    let grid = cfg.chaos_grid_or(grid_for_radius(r_min));
    let h = sample_homeo(cfg, grid)?;
    let ext = DiskExtension::new(h);
    let w = Complex64::new(1.0, 0.0);
    let lk = annulus_decomposition(&ext, w, cfg.p, n, N_RHO, N_THETA)?;
    let total = lehto_integral(&ext, &Annulus::new(w, r_min, 1.0)?, 4 * N_RHO + 1, N_THETA)?;
    let mut out = Outputs::new(&cfg.out)?;
    let mut wr = csv::Writer::from_writer(out.create("lehto.csv")?);
    wr.write_record(["k", "inner", "outer", "lehto"])?;
    let rho = 0.5f64.powi(cfg.p as i32);
    for (k, l) in lk.iter().enumerate() {
        let r = rho.powi(k as i32 + 1);
        wr.serialize((k + 1, r, 2.0 * r, l))?;
    }
    wr.flush()?;
    drop(wr);
    let sum: f64 = lk.iter().sum();
    let results = json!({
        "grid": grid,
        "lk": lk,
        "sum_lk": sum,
        "total": total.value,
        "total_valid": total.valid,
        "superadditive": sum <= total.value * (1.0 + 1e-2),
    });
    let status = if total.valid { Status::Ok } else { Status::Flagged };
    println!(
        "{}",
        out.finish("lehto", cfg, if total.valid { "ok" } else { "flagged" }, results)?
            .display()
    );
    Ok(status)
}

/// Small, fast checks with known answers; fails with exit 1 on any miss.
pub fn selftest() -> Result<Status> {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            failures.push(name.to_string());
        }
    };

    let c = covariance_exact(0.5)?;
    check("covariance at 1/2", (c + 2f64.ln()).abs() < 1e-12, format!("{c:.6}"));

    let sampler = TraceSampler::new(512)?;
    let p = ChaosParams::new(0.5, 256)?;
    let acc: Accumulator = (0..2000u64)
        .into_par_iter()
        .map(|s| -> confweld_core::Result<f64> { Ok(build_measure(&sampler.sample(256, s)?, &p)?.total_mass) })
        .collect::<confweld_core::Result<Vec<_>>>()?
        .into_iter()
        .collect();
    check(
        "chaos mean mass",
        (acc.mean() - 1.0).abs() < 4.0 * acc.std_error(),
        format!("{:.4} +- {:.4}", acc.mean(), acc.std_error()),
    );

    let ann = Annulus::new(Complex64::default(), 0.5, 1.0)?;
    let l = lehto_integral(&|_: Complex64| 1.0, &ann, N_RHO, N_THETA)?.value;
    let target = 2f64.ln() / (2.0 * std::f64::consts::PI);
    check("Lehto integral of K = 1", (l - target).abs() < 1e-9, format!("{l:.6}"));

    let solver = SolverConfig {
        grid: 256,
        ..Default::default()
    };
    let lattice = solver.validate()?;
    let mu = BeltramiField::from_fn(lattice, |z| if z.norm() == 0.0 { z } else { z / z.conj() / 3.0 })?;
    let map = solve(&mu, &solver)?;
    let err = map
        .values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| {
            let z = lattice.point_at(i);
            let r = z.norm();
            ((r - 1.0).abs() > 0.05).then(|| (v - if r < 1.0 { z * r } else { z }).norm())
        })
        .fold(0.0, f64::max);
    check("radial stretch solve", err < 2e-2, format!("sup error {err:.2e}"));

    let res = confweld_core::weld(
        &CircleHomeomorphism::identity(1024),
        &SolverConfig {
            grid: 128,
            ..Default::default()
        },
    )?;
    let d = distance_from_unit_circle(&res.curve);
    check(
        "identity weld",
        d < 1e-2 && !res.is_flagged(),
        format!("distance {d:.2e}"),
    );

    if failures.is_empty() {
        Ok(Status::Ok)
    } else {
        Err(anyhow!("selftest failed: {}", failures.join(", ")))
    }
}
