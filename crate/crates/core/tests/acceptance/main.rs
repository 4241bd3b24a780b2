//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Runs at full scale by default, which takes the better part of an hour on
//! one core. `ACCEPTANCE_ONLY=1,5,7` restricts the run to a subset. The
//! binary exits 0 after reporting unless `ACCEPTANCE_STRICT=1` is set, in
//! which case any failing criterion makes it exit 1.

use std::time::Instant;

use confweld_core::chaos::{moment_scaling, second_moment_exact, MomentStudy};
use confweld_core::curve::distance_from_unit_circle;
use confweld_core::field::{covariance_exact, TraceSampler};
use confweld_core::grid::distortion;
use confweld_core::lehto::{lehto_integral, lk_statistics, modulus_bound_check, LkConfig, TailConfig};
use confweld_core::stats::{fit_line, Accumulator};
use confweld_core::welding::{
    curve_holder_exponent, epsilon_convergence, verify_welding, weld_sample, WELD_CHAOS_GRID,
};
use confweld_core::{
    build_measure, solve, Annulus, BeltramiField, ChaosParams, SampleBuilder, SolverConfig, WeldingResult,
};
use num_complex::Complex64;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn(&mut Shared) -> Outcome;

/// Welds reused by criteria 6, 7 and 12.
#[derive(Default)]
struct Shared {
    weld_batch: Option<WeldBatch>,
}

struct WeldRecord {
    beta: f64,
    seed: u64,
    flags: Vec<String>,
    conformality: Option<f64>,
    verify: Option<f64>,
    modulus: Vec<(bool, bool, bool)>,
    error: Option<String>,
}

struct WeldBatch {
    records: Vec<WeldRecord>,
}

fn main() {
    env_logger::builder().is_test(true).try_init().ok();
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    let checks: [(usize, &str, Check); 12] = [
        (1, "identity pipeline", identity_pipeline),
        (2, "field covariance", field_covariance),
        (3, "chaos normalization", chaos_normalization),
        (4, "moment scaling", moment_scaling_check),
        (5, "Beltrami solver oracle", solver_oracle),
        (6, "exterior conformality", exterior_conformality),
        (7, "welding identity", welding_identity),
        (8, "Lehto tail", lehto_tail),
        (9, "small-value CDF", small_value_cdf),
        (10, "Holder positivity", holder_positivity),
        (11, "eps-Cauchy behavior", eps_cauchy),
        (12, "modulus-bound ledger", modulus_ledger),
    ];

    let mut shared = Shared::default();
    let mut failures = 0;
    for (id, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = check(&mut shared);
        let secs = start.elapsed().as_secs_f64();
        if !outcome.pass {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {name}: {} ({secs:.1} s) {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
    }
    println!("acceptance: {failures} failing criteria");
    if strict && failures > 0 {
        std::process::exit(1);
    }
}

fn identity_pipeline(_: &mut Shared) -> Outcome {
    let start = Instant::now();
    let res = match weld_sample(0.0, 0, WELD_CHAOS_GRID, &SolverConfig::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("weld failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let d = distance_from_unit_circle(&res.curve);
    Outcome::new(
        d <= 1e-2 && secs <= 60.0 && !res.is_flagged(),
        format!("distance {d:.2e}, runtime {secs:.1} s"),
    )
}

fn field_covariance(_: &mut Shared) -> Outcome {
    let modes = 4096;
    let m = 2 * modes;
    // lags that are whole numbers of grid cells
    let lags = [(m / 2, 0.5), (m / 6, 1.0 / 6.0)];
    let sampler = TraceSampler::new(m).unwrap();
    let sums: Vec<[f64; 2]> = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            let x = sampler.sample(modes, seed).unwrap().values;
            let mut out = [0.0; 2];
            for (k, &(d, _)) in lags.iter().enumerate() {
                out[k] = (0..m).map(|j| x[j] * x[(j + d) % m]).sum::<f64>() / m as f64;
            }
            out
        })
        .collect();
    let mut pass = true;
    let mut detail = Vec::new();
    for (k, &(d, lag)) in lags.iter().enumerate() {
        let acc: Accumulator = sums.iter().map(|s| s[k]).collect();
        // the shift is rounded to the grid, so compare at the lag actually used
        let target = covariance_exact(d as f64 / m as f64).unwrap();
        let ok = (acc.mean() - target).abs() <= 0.03;
        pass &= ok;
        detail.push(format!("lag {lag:.4}: {:.4} vs {target:.4}", acc.mean()));
    }
    Outcome::new(pass, detail.join(", "))
}

fn chaos_normalization(_: &mut Shared) -> Outcome {
    let modes = 4096;
    let params = ChaosParams::new(0.7, modes).unwrap();
    let sampler = TraceSampler::new(2 * modes).unwrap();
    let acc: Accumulator = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            build_measure(&sampler.sample(modes, seed).unwrap(), &params)
                .unwrap()
                .total_mass
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    Outcome::new(
        (acc.mean() - 1.0).abs() <= 0.02,
        format!("mean mass {:.4} +- {:.4}", acc.mean(), acc.std_error()),
    )
}

fn moment_scaling_check(_: &mut Shared) -> Outcome {
    let beta = 0.7;
    let m = 1 << 15;
    let modes = m / 2;
    let sizes: Vec<f64> = (4..=10).map(|j| 0.5f64.powi(j)).collect();
    let target = 2.0 - beta * beta;

    let exact: Vec<f64> = sizes
        .iter()
        .map(|s| {
            second_moment_exact(beta, modes, m, (s * m as f64) as usize)
                .unwrap()
                .ln()
        })
        .collect();
    let logs: Vec<f64> = sizes.iter().map(|s| s.ln()).collect();
    let oracle = fit_line(&logs, &exact).unwrap().slope;
    if (oracle - target).abs() > 0.03 {
        return Outcome::new(false, format!("oracle slope {oracle:.4} does not confirm {target:.2}"));
    }

    let params = ChaosParams::new(beta, modes).unwrap();
    let study = MomentStudy {
        grid_size: m,
        samples: 2000,
        base_seed: 0,
        batches: 10,
    };
    match moment_scaling(&params, 2.0, &sizes, &study) {
        Ok(fit) => Outcome::new(
            (fit.exponent - target).abs() <= 0.15,
            format!(
                "oracle {oracle:.4}, Monte Carlo {:.4} +- {:.4}",
                fit.exponent, fit.std_error
            ),
        ),
        Err(e) => Outcome::new(false, format!("oracle {oracle:.4}, Monte Carlo failed: {e}")),
    }
}

fn solver_oracle(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig::default();
    let lattice = cfg.validate().unwrap();
    let mu = BeltramiField::from_fn(lattice, |z| {
        if z.norm() == 0.0 {
            Complex64::default()
        } else {
            z / z.conj() / 3.0
        }
    })
    .unwrap();
    let map = match solve(&mu, &cfg) {
        Ok(m) => m,
        Err(e) => return Outcome::new(false, format!("solve failed: {e}")),
    };
    let mut err = 0.0f64;
    for (idx, v) in map.values.iter().enumerate() {
        let z = lattice.point_at(idx);
        let r = z.norm();
        if (0.95..=1.05).contains(&r) {
            continue;
        }
        let exact = if r < 1.0 { z * r } else { z };
        err = err.max((v - exact).norm());
    }
    let ratio = map.report.contraction_ratio;
    Outcome::new(
        err <= 5e-3 && ratio <= mu.sup_abs() + 0.05,
        format!(
            "sup error {err:.2e}, contraction {ratio:.4} (sup mu {:.4})",
            mu.sup_abs()
        ),
    )
}

const WELD_BETAS: [f64; 3] = [0.3, 0.7, 1.0];
const WELD_SEEDS: u64 = 10;

fn modulus_annuli(step: f64) -> Vec<Annulus> {
    let r = 4.0 * step;
    let centers = [
        Complex64::new(0.0, 0.0),
        Complex64::new(0.5, 0.0),
        Complex64::new(0.0, -0.6),
        Complex64::from_polar(0.9, 2.0),
    ];
    let mut out = Vec::new();
    for c in centers {
        for (inner, outer) in [(r, 0.5), (r, 0.1), (0.1, 0.4)] {
            out.push(Annulus::new(c, inner, outer).unwrap());
        }
    }
    out
}

fn modulus_records(res: &WeldingResult, eps: f64) -> Vec<(bool, bool, bool)> {
    let kmax = distortion(1.0 - eps);
    let k = |z: Complex64| {
        use confweld_core::Distortion;
        res.extension.distortion(z).min(kmax)
    };
    modulus_annuli(res.map.lattice.step())
        .iter()
        .map(|ann| {
            let l = lehto_integral(&k, ann, 65, 128).unwrap();
            let c = modulus_bound_check(&res.map, ann, l.value, 1024);
            (c.classical_satisfied, c.paper_satisfied, c.flagged)
        })
        .collect()
}

fn weld_batch(shared: &mut Shared) -> &WeldBatch {
    if shared.weld_batch.is_none() {
        let cfg = SolverConfig::default();
        let mut records = Vec::new();
        for beta in WELD_BETAS {
            for seed in 0..WELD_SEEDS {
                let rec = match weld_sample(beta, seed, WELD_CHAOS_GRID, &cfg) {
                    Ok(res) => {
                        let accepted = !res.is_flagged();
                        let verify = verify_welding(&res).ok();
                        WeldRecord {
                            beta,
                            seed,
                            flags: res.flags.clone(),
                            conformality: accepted.then_some(res.diagnostics.conformality.median),
                            verify,
                            modulus: if accepted {
                                modulus_records(&res, cfg.epsilon)
                            } else {
                                Vec::new()
                            },
                            error: None,
                        }
                    }
                    Err(e) => WeldRecord {
                        beta,
                        seed,
                        flags: Vec::new(),
                        conformality: None,
                        verify: None,
                        modulus: Vec::new(),
                        error: Some(e.to_string()),
                    },
                };
                eprintln!(
                    "weld beta {beta} seed {seed}: conformality {:?}, verify {:?}, flags {:?}, error {:?}",
                    rec.conformality, rec.verify, rec.flags, rec.error
                );
                records.push(rec);
            }
        }
        shared.weld_batch = Some(WeldBatch { records });
    }
    shared.weld_batch.as_ref().unwrap()
}

fn exterior_conformality(shared: &mut Shared) -> Outcome {
    let batch = weld_batch(shared);
    let accepted: Vec<f64> = batch.records.iter().filter_map(|r| r.conformality).collect();
    let worst = accepted.iter().cloned().fold(0.0, f64::max);
    Outcome::new(
        !accepted.is_empty() && worst <= 1e-2,
        format!("{} accepted welds, worst median {worst:.2e}", accepted.len()),
    )
}

fn welding_identity(shared: &mut Shared) -> Outcome {
    let batch = weld_batch(shared);
    let mut parts = Vec::new();
    let mut pass = true;
    for beta in WELD_BETAS {
        let rows: Vec<&WeldRecord> = batch.records.iter().filter(|r| r.beta == beta).collect();
        let ok = rows.iter().filter(|r| r.verify.is_some_and(|v| v <= 1e-2)).count();
        let worst = rows
            .iter()
            .map(|r| r.verify.unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max);
        pass &= ok == rows.len();
        parts.push(format!(
            "beta {beta}: {ok}/{} within 1e-2, worst {worst:.2e}",
            rows.len()
        ));
    }
    let failed: Vec<String> = batch
        .records
        .iter()
        .filter(|r| !r.verify.is_some_and(|v| v <= 1e-2))
        .map(|r| format!("({}, {})", r.beta, r.seed))
        .collect();
    if !failed.is_empty() {
        parts.push(format!("failing (beta, seed): {}", failed.join(" ")));
    }
    Outcome::new(pass, parts.join("; "))
}

fn lehto_tail(_: &mut Shared) -> Outcome {
    let cfg = TailConfig::new(1.0, 3, 0.02, vec![2, 3, 4, 5], 10_000);
    match confweld_core::lehto::tail_probability(&cfg) {
        Ok(est) => {
            let points: Vec<String> = est
                .points
                .iter()
                .map(|p| format!("N={} {}/{}", p.n, p.hits, p.samples))
                .collect();
            let (pass, what) = match (&est.fit, est.decay_lower_bound) {
                (Some(fit), _) => (fit.slope <= -1.0, format!("slope {:.3}", fit.slope)),
                (None, Some(b)) => (b >= 1.0, format!("decay lower bound {b:.3}")),
                (None, None) => (false, "no estimate".to_string()),
            };
            Outcome::new(pass, format!("{what} at grid {} [{}]", est.grid, points.join(", ")))
        }
        Err(e) => Outcome::new(false, format!("tail estimate failed: {e}")),
    }
}

fn small_value_cdf(_: &mut Shared) -> Outcome {
    let cfg = LkConfig::new(1.0, 3, 4, 4000);
    let stats = match lk_statistics(&cfg) {
        Ok(s) => s,
        Err(e) => return Outcome::new(false, format!("statistics failed: {e}")),
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for cdf in &stats.per_k {
        match cdf.exponent {
            Some(e) => {
                pass &= e >= 0.8;
                parts.push(format!("k={} exponent {e:.3}", cdf.k));
            }
            None => {
                pass = false;
                parts.push(format!("k={} no exponent", cdf.k));
            }
        }
    }
    let c12 = stats.correlation[0][1];
    let c14 = stats.correlation[0][3];
    let se = stats.correlation_se[0][1].hypot(stats.correlation_se[0][3]);
    pass &= c14.abs() <= c12.abs() + 2.0 * se;
    parts.push(format!("corr(L1,L2) {c12:.3}, corr(L1,L4) {c14:.3}, se {se:.3}"));
    for w in &stats.warnings {
        parts.push(format!("warning: {w}"));
    }
    Outcome::new(pass, parts.join("; "))
}

fn holder_positivity(_: &mut Shared) -> Outcome {
    let cfg = SolverConfig {
        grid: 512,
        ..Default::default()
    };
    let builder = SampleBuilder::new(1.0, WELD_CHAOS_GRID).unwrap();
    let mut min_h = f64::INFINITY;
    let mut min_c = f64::INFINITY;
    let mut flagged = 0;
    let mut errors = Vec::new();
    for seed in 0..100u64 {
        let h = match builder.homeo(seed) {
            Ok(h) => h,
            Err(e) => {
                errors.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        // all resolved dyadic levels of h; the curve has 2^12 samples
        match h.holder_exponent(h.cells().trailing_zeros()) {
            Ok(a) => min_h = min_h.min(a),
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
        match weld_sample(1.0, seed, WELD_CHAOS_GRID, &cfg) {
            Ok(res) => {
                flagged += res.is_flagged() as usize;
                match curve_holder_exponent(&res, 12) {
                    Ok(a) => min_c = min_c.min(a),
                    Err(e) => errors.push(format!("seed {seed}: {e}")),
                }
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    let mut detail = format!("min h exponent {min_h:.3}, min curve exponent {min_c:.3}, {flagged}/100 welds flagged");
    if !errors.is_empty() {
        detail.push_str(&format!("; errors: {}", errors.join("; ")));
    }
    Outcome::new(errors.is_empty() && min_h >= 0.05 && min_c >= 0.05, detail)
}

fn eps_cauchy(_: &mut Shared) -> Outcome {
    let builder = SampleBuilder::new(0.7, WELD_CHAOS_GRID).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let h = builder.homeo(seed).unwrap();
        match epsilon_convergence(&h, &[0.2, 0.1, 0.05], &SolverConfig::default()) {
            Ok(d) => {
                let ok = d.windows(2).all(|w| w[1] < w[0]);
                pass &= ok;
                parts.push(format!("seed {seed}: {:.3e} > {:.3e}", d[0], d[1]));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("seed {seed}: {e}"));
            }
        }
    }
    Outcome::new(pass, parts.join("; "))
}

fn modulus_ledger(shared: &mut Shared) -> Outcome {
    let batch = weld_batch(shared);
    let checks: Vec<(bool, bool, bool)> = batch.records.iter().flat_map(|r| r.modulus.iter().copied()).collect();
    let usable: Vec<_> = checks.iter().filter(|c| !c.2).collect();
    let classical = usable.iter().filter(|c| c.0).count();
    let paper = usable.iter().filter(|c| c.1).count();
    Outcome::new(
        !usable.is_empty() && classical == usable.len(),
        format!(
            "classical exponent holds on {classical}/{n} annuli; 2 pi^2 exponent holds on {paper}/{n} (logged only); {} flagged annuli skipped",
            checks.len() - usable.len(),
            n = usable.len()
        ),
    )
}
