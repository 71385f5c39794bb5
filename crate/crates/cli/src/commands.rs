//! The experiment subcommands. Each writes its files through a [`Run`] and
//! returns a status plus an in-memory report.

use anyhow::Context;
use log::{info, warn};
use serde::Serialize;
use swiss_cheese::functionals::{McConfig, McEstimate};
use swiss_cheese::mv_topology::{
    collection_lambdas, default_family, distance_from_lambdas, minimizer_orbit, mixture_example, MixtureDistance,
    OrbitCollection, OrbitComponent, TestFunctionSpec,
};
use swiss_cheese::output::{fmt_f64, write_profile, write_rate_points, write_walks};
use swiss_cheese::rate_function::{rate_curve, solve_rate_point, CurveConfig, ProblemParams, SearchConfig};
use swiss_cheese::walk_sim::{
    conditioned_sample, escape_probability, range_summary, simulate_batch, skeleton_measures, EscapeEstimate,
    EscapeMethod, WalkParams, WalkRecord,
};
use swiss_cheese::Exec;

use crate::checks::{
    binomial_grid, bridge_normalization, heat_kernel_mass, llt_trend, rate_identities, scaling_sweep, CheckResult,
    IdentityTolerances, LltTrend, PointIdentities, BRIDGE_TRIPLES,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::manifest::Run;
use crate::stats::{rank_sum_less, RankSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    HardFailure,
    Inconclusive,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::HardFailure => 1,
            Status::Inconclusive => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::HardFailure => "hard_failure",
            Status::Inconclusive => "inconclusive",
        }
    }
}

/// Seed for an independent sub-experiment of the run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn identity_tolerances(cfg: &ExperimentConfig) -> IdentityTolerances {
    IdentityTolerances {
        pohozaev: cfg.tol("pohozaev"),
        derivative: cfg.tol("derivative"),
        g_monotone: cfg.tol("g_monotone"),
        xi_floor: cfg.tol("xi_floor"),
    }
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RateCurveReport {
    pub d: usize,
    pub kappa: f64,
    pub points: Vec<PointIdentities>,
    pub energy_monotone: bool,
    pub hard_failures: Vec<String>,
}

pub fn cmd_rate_curve(cfg: &ExperimentConfig, run: &mut Run) -> anyhow::Result<(Status, RateCurveReport)> {
    let rc = &cfg.rate_curve;
    info!("rate curve: d = {}, kappa = {}, {} points", rc.d, rc.kappa, rc.b.len());
    let curve = rate_curve(rc.d, rc.kappa, &rc.b, &CurveConfig::default(), Exec::Parallel);
    let points = rate_identities(rc.d, rc.kappa, &rc.b, &curve, identity_tolerances(cfg));
    run.write("rate_curve.csv", &csv_bytes(|w| write_rate_points(w, &curve))?)?;
    if rc.profiles {
        for (i, p) in curve.iter().enumerate() {
            if let Ok(Some(profile)) = p.as_ref().map(|p| p.profile.as_ref()) {
                run.write(&format!("profiles/b_{i:02}.csv"), &csv_bytes(|w| write_profile(w, profile))?)?;
            }
        }
    }
    let energies: Vec<f64> = points.iter().filter(|p| p.converged).map(|p| p.energy).collect();
    let energy_monotone = energies.windows(2).all(|w| w[1] <= w[0]);
    let mut hard_failures = Vec::new();
    for p in &points {
        match &p.error {
            Some(e) => warn!("b = {}: {e}", p.b),
            None => {
                if !p.pohozaev_pass {
                    hard_failures.push(format!("b = {}: Pohozaev residual {:.3e}", p.b, p.pohozaev_residual));
                }
                if !p.derivative_pass {
                    hard_failures.push(format!("b = {}: derivative deviation {:?}", p.b, p.derivative_deviation));
                }
                if !p.serrin_tang_pass {
                    hard_failures.push(format!("b = {}: {}", p.b, p.serrin_tang_failures.join("; ")));
                }
            }
        }
    }
    if !energy_monotone {
        hard_failures.push("I(b) is not non-increasing".into());
    }
    let report = RateCurveReport { d: rc.d, kappa: rc.kappa, points, energy_monotone, hard_failures };
    run.write_json("identities.json", &report)?;
    let status = if report.hard_failures.is_empty() { Status::Ok } else { Status::HardFailure };
    Ok((status, report))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RangeRow {
    pub n: u64,
    pub walks: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WalkStatsReport {
    pub d: usize,
    pub eps: f64,
    pub rows: Vec<RangeRow>,
    pub green_series: EscapeEstimate,
    pub monte_carlo: EscapeEstimate,
    /// Monte Carlo within `kappa_sigma` standard errors of the series.
    pub estimators_agree: bool,
}

pub fn cmd_walk_stats(cfg: &ExperimentConfig, run: &mut Run) -> anyhow::Result<(Status, WalkStatsReport)> {
    let ws = &cfg.walk_stats;
    let mut rows = Vec::new();
    let mut all: Vec<WalkRecord> = Vec::new();
    for &n in &ws.ns {
        let params = WalkParams::new(ws.d, n, ws.eps, cfg.seed)?;
        info!("walk stats: n = {} ({} walks)", params.n, ws.walks);
        let records = simulate_batch(&params, ws.walks, Exec::Parallel);
        let (mean, stderr) = range_summary(&records);
        rows.push(RangeRow { n: params.n, walks: ws.walks, mean, stderr });
        all.extend(records);
    }
    run.write("walks.csv", &csv_bytes(|w| write_walks(w, &all))?)?;
    let green = escape_probability(ws.d, EscapeMethod::GreenSeries { n_max: ws.green_n_max }, Exec::Parallel)?;
    let mc = escape_probability(
        ws.d,
        EscapeMethod::MonteCarlo { walks: ws.mc_walks, cutoff: ws.mc_cutoff, seed: derive_seed(cfg.seed, 10) },
        Exec::Parallel,
    )?;
    let sigma = mc.error.hypot(green.error);
    let estimators_agree = (mc.value - green.value).abs() <= cfg.tol("kappa_sigma") * sigma;
    let report = WalkStatsReport { d: ws.d, eps: ws.eps, rows, green_series: green, monte_carlo: mc, estimators_agree };
    run.write_json("kappa.json", &report)?;
    Ok((Status::Ok, report))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct Acceptance {
    pub attempts: u64,
    pub accepted: usize,
    pub rate: f64,
    pub wilson: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct TubeReport {
    pub d: usize,
    pub n: u64,
    pub eps: f64,
    pub kappa: f64,
    pub b: f64,
    pub profile_b: f64,
    pub acceptance: Acceptance,
    pub rate_point: Option<(f64, f64, f64)>,
    /// `n^{2/d−1} ln(acceptance rate)`, next to `−I(b)/d`.
    pub scaled_log_rate: f64,
    pub predicted_scaled_log_rate: f64,
    pub conditioned: Vec<f64>,
    pub unconditioned: Vec<f64>,
    pub conditioned_mean: f64,
    pub unconditioned_mean: f64,
    pub rank_sum: Option<RankSum>,
    /// Conditioned distances significantly smaller at the 5% level.
    pub directional_pass: bool,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Truncated **D** from the skeleton site measure of each record to `target`.
fn skeleton_distances(
    records: &[WalkRecord],
    family: &[TestFunctionSpec],
    target: &[McEstimate],
    mc: &McConfig,
) -> Vec<f64> {
    Exec::Parallel.map_slice(records, |r| {
        let (sites, _) = skeleton_measures(r);
        let col = OrbitCollection::single(OrbitComponent::Cloud(sites));
        distance_from_lambdas(family, &collection_lambdas(family, &col, mc), target).value
    })
}

pub fn cmd_tube(cfg: &ExperimentConfig, run: &mut Run) -> anyhow::Result<(Status, TubeReport)> {
    let tc = &cfg.tube;
    let kappa = escape_probability(tc.d, EscapeMethod::GreenSeries { n_max: tc.green_n_max }, Exec::Parallel)?.value;
    let base = WalkParams::new(tc.d, tc.n, tc.eps, cfg.seed)?;
    let b = match tc.b {
        Some(b) => b,
        None => {
            let pilot = WalkParams { seed: derive_seed(cfg.seed, 1), ..base };
            let mut ranges: Vec<u64> =
                simulate_batch(&pilot, tc.pilot_walks, Exec::Parallel).iter().map(|r| r.range).collect();
            ranges.sort_unstable();
            let k = ((tc.pilot_rate * ranges.len() as f64) as usize).min(ranges.len() - 1);
            (ranges[k] as f64 + 0.5) / base.n as f64
        }
    };
    let profile_b = tc.profile_b.unwrap_or(b);
    if profile_b >= kappa {
        return Err(ConfigError(format!("tube: minimizer level {profile_b} must be below kappa_d = {kappa}")).into());
    }
    info!("tube: kappa_d = {kappa:.9}, b = {b}, minimizer at b = {profile_b}");
    let point = solve_rate_point(&ProblemParams::new(tc.d, kappa, profile_b)?, &SearchConfig::default())
        .context("solving for the minimizer")?;
    let profile = point.profile.clone().context("minimizer has no profile")?;
    let minimizer = OrbitCollection::single(minimizer_orbit(&profile, tc.minimizer_samples, derive_seed(cfg.seed, 3)));
    let family = default_family();
    let mc = McConfig { seed: derive_seed(cfg.seed, 4), exec: Exec::Parallel, ..McConfig::default() };
    let target = collection_lambdas(&family, &minimizer, &mc);

    let sample = conditioned_sample(&base, b, tc.budget, Some(tc.target_accepted), tc.chunk, Exec::Parallel)?;
    let uncond =
        simulate_batch(&WalkParams { seed: derive_seed(cfg.seed, 2), ..base }, tc.unconditioned, Exec::Parallel);
    let conditioned = skeleton_distances(&sample.accepted, &family, &target, &mc);
    let unconditioned = skeleton_distances(&uncond, &family, &target, &mc);

    let mut csv = String::from("group,walk,R_n,distance\n");
    for (group, records, dist) in
        [("conditioned", &sample.accepted, &conditioned), ("unconditioned", &uncond, &unconditioned)]
    {
        for (r, dv) in records.iter().zip(dist.iter()) {
            csv.push_str(&format!("{group},{},{},{}\n", r.index, r.range, fmt_f64(*dv)));
        }
    }
    run.write("tube.csv", csv.as_bytes())?;

    let d = tc.d as f64;
    let rank_sum = (conditioned.len() >= 2).then(|| rank_sum_less(&conditioned, &unconditioned));
    let report = TubeReport {
        d: tc.d,
        n: base.n,
        eps: tc.eps,
        kappa,
        b,
        profile_b,
        acceptance: Acceptance {
            attempts: sample.attempts,
            accepted: sample.accepted.len(),
            rate: sample.rate,
            wilson: sample.wilson,
        },
        rate_point: Some((point.energy, point.mult.lambda, point.mult.mu)),
        scaled_log_rate: (base.n as f64).powf(2.0 / d - 1.0) * sample.rate.ln(),
        predicted_scaled_log_rate: -point.energy / d,
        conditioned_mean: mean(&conditioned),
        unconditioned_mean: mean(&unconditioned),
        conditioned,
        unconditioned,
        directional_pass: rank_sum.is_some_and(|r| r.p_value < 0.05),
        rank_sum,
    };
    run.write_json("distances.json", &report)?;
    let status = if report.rank_sum.is_none() {
        warn!(
            "tube: {} acceptances in {} attempts; inconclusive",
            report.acceptance.accepted, report.acceptance.attempts
        );
        Status::Inconclusive
    } else {
        Status::Ok
    };
    Ok((status, report))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct MvDemoReport {
    pub family: Vec<TestFunctionSpec>,
    pub rows: Vec<MixtureDistance>,
    /// First distance over last distance.
    pub ratio: f64,
}

pub fn cmd_mv_demo(cfg: &ExperimentConfig, run: &mut Run) -> anyhow::Result<(Status, MvDemoReport)> {
    let mv = &cfg.mv_demo;
    let family = default_family();
    let rows = mixture_example(&mv.ns, mv.samples, mv.replicates, cfg.seed, &family, Exec::Parallel);
    let mut csv = String::from("n,D,mc_stderr,replicates\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", fmt_f64(r.n), fmt_f64(r.value), fmt_f64(r.mc_stderr), r.replicates));
    }
    run.write("mv_demo.csv", csv.as_bytes())?;
    let ratio = rows[0].value / rows[rows.len() - 1].value;
    let report = MvDemoReport { family, rows, ratio };
    run.write_json("mv_demo.json", &report)?;
    Ok((Status::Ok, report))
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub pass: bool,
    pub llt: LltTrend,
}

pub fn cmd_verify(cfg: &ExperimentConfig, run: &mut Run) -> anyhow::Result<(Status, VerifyReport)> {
    let vc = &cfg.verify;
    let mut checks = Vec::new();
    let mut push = |name: &str, pass: bool, value: f64, tolerance: f64, detail: String| {
        info!("{name}: {} (value {value:.3e}, tolerance {tolerance:.3e})", if pass { "pass" } else { "FAIL" });
        checks.push(CheckResult { name: name.into(), hard: true, pass, value, tolerance, detail });
    };

    let tol = cfg.tol("heat_norm");
    let err = [0.1, 1.0, 10.0].iter().map(|&s| (heat_kernel_mass(vc.d, s) - 1.0).abs()).fold(0.0, f64::max);
    push("heat_kernel_normalization", err <= tol, err, tol, format!("d = {}, s in {{0.1, 1, 10}}", vc.d));

    let tol = cfg.tol("bridge_norm");
    let err = BRIDGE_TRIPLES.iter().map(|&(x, y, e)| (bridge_normalization(x, y, e) - 1.0).abs()).fold(0.0, f64::max);
    push("bridge_normalization", err <= tol, err, tol, "d = 3, five (x, y, eps) triples".into());

    let tol = cfg.tol("scaling_endpoint");
    let sweep = scaling_sweep(vc.d, vc.kappa);
    let monotone = sweep.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    let lo_err = (sweep[0].1 - vc.kappa).abs() / vc.kappa;
    let hi_err = sweep[sweep.len() - 1].1 / vc.kappa;
    let worst = lo_err.max(hi_err);
    push(
        "scaling_sweep",
        monotone && worst <= tol,
        worst,
        tol,
        format!("monotone = {monotone}, Gamma(2^-6) = {:.6}, Gamma(2^6) = {:.6}", sweep[0].1, sweep[sweep.len() - 1].1),
    );

    let tol = cfg.tol("binomial");
    let grid = binomial_grid()?;
    let excess = grid.iter().map(|c| c.exact - c.bound).fold(f64::NEG_INFINITY, f64::max);
    push("binomial_bound", excess <= tol, excess, tol, "max(exact - bound) over 27 triples".into());

    let tol = cfg.tol("llt_slope");
    let llt = llt_trend(vc.d, &vc.llt_ns)?;
    let parity_ok = llt.reports.iter().all(|r| r.wrong_parity_mass == 0.0);
    push(
        "local_clt",
        parity_ok && llt.fit.ci_low <= tol,
        llt.fit.slope,
        tol,
        format!(
            "slope {:.3e} in [{:.3e}, {:.3e}], parity exact = {parity_ok}",
            llt.fit.slope, llt.fit.ci_low, llt.fit.ci_high
        ),
    );

    let curve = rate_curve(vc.d, vc.kappa, &vc.b, &CurveConfig::default(), Exec::Parallel);
    let ids = rate_identities(vc.d, vc.kappa, &vc.b, &curve, identity_tolerances(cfg));
    let tol = cfg.tol("pohozaev");
    let worst =
        ids.iter().map(|p| if p.converged { p.pohozaev_residual.abs() } else { f64::INFINITY }).fold(0.0, f64::max);
    push("pohozaev", worst <= tol, worst, tol, format!("b in {:?}", vc.b));
    let failures: Vec<String> =
        ids.iter().flat_map(|p| p.serrin_tang_failures.iter().map(move |f| format!("b = {}: {f}", p.b))).collect();
    let st_ok = ids.iter().all(|p| p.converged && p.serrin_tang_pass);
    push("serrin_tang", st_ok, failures.len() as f64, 0.0, failures.join("; "));

    let pass = checks.iter().all(|c| c.pass || !c.hard);
    let report = VerifyReport { checks, pass, llt };
    run.write_json("verify.json", &report)?;
    Ok((if pass { Status::Ok } else { Status::HardFailure }, report))
}
