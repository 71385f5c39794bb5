//! One line per acceptance criterion; the test fails if any line reads FAIL.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use statrs::function::gamma::gamma;
use swiss_cheese::exec::with_workers;
use swiss_cheese::rate_function::{rate_curve, solve_rate_point, CurveConfig, ProblemParams, SearchConfig};
use swiss_cheese::walk_sim::{escape_probability, EscapeMethod};
use swiss_cheese::Exec;
use swiss_cheese_cli::checks::{
    binomial_grid, bridge_normalization, llt_trend, rate_identities, scaling_sweep, IdentityTolerances, BRIDGE_TRIPLES,
};
use swiss_cheese_cli::commands::{cmd_mv_demo, cmd_rate_curve, cmd_tube, cmd_walk_stats, derive_seed, Status};
use swiss_cheese_cli::config::ExperimentConfig;
use swiss_cheese_cli::manifest::Run;

struct Ledger {
    lines: Vec<(usize, bool, String)>,
}

impl Ledger {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!("criterion {id:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((id, pass, detail));
    }
}

fn config(out: &Path) -> ExperimentConfig {
    ExperimentConfig { out: out.to_path_buf(), ..ExperimentConfig::default() }
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn start(name: &str, cfg: &ExperimentConfig) -> Run {
    Run::start(name, cfg, vec![name.into()], BTreeMap::new()).unwrap()
}

fn watson_kappa() -> f64 {
    let g = 6f64.sqrt() / (32.0 * PI.powi(3))
        * gamma(1.0 / 24.0)
        * gamma(5.0 / 24.0)
        * gamma(7.0 / 24.0)
        * gamma(11.0 / 24.0);
    1.0 / g
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                files.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ledger = Ledger { lines: Vec::new() };
    let kappa_watson = watson_kappa();

    // 1 and 2: walk statistics with the default configuration.
    let cfg = config(&tmp.path().join("walk-stats"));
    let ((status, ws), elapsed) = timed(|| cmd_walk_stats(&cfg, &mut start("walk-stats", &cfg)).unwrap());
    assert_eq!(status, Status::Ok);
    let green = ws.green_series.value;
    let wc = &cfg.walk_stats;
    let ((g, mc), escape_time) = timed(|| {
        let g = escape_probability(3, EscapeMethod::GreenSeries { n_max: wc.green_n_max }, Exec::Parallel).unwrap();
        let mc = escape_probability(
            3,
            EscapeMethod::MonteCarlo { walks: wc.mc_walks, cutoff: wc.mc_cutoff, seed: derive_seed(cfg.seed, 10) },
            Exec::Parallel,
        )
        .unwrap();
        (g, mc)
    });
    assert_eq!((g.value, mc.value), (green, ws.monte_carlo.value));
    let sigma = mc.error.hypot(g.error);
    let watson_err = (green - kappa_watson).abs();
    let mc_dev = (mc.value - green).abs() / sigma;
    ledger.record(
        1,
        watson_err <= 1e-3 && mc_dev <= 3.0 && escape_time < Duration::from_secs(60),
        format!(
            "green {green:.9} vs Watson {kappa_watson:.9} (|diff| {watson_err:.2e} <= 1e-3); Monte Carlo {:.6} at {mc_dev:.2} sigma (<= 3); {escape_time:.1?}",
            mc.value
        ),
    );
    let row = ws.rows.iter().find(|r| r.n == 1_000_000).expect("n = 1e6 row");
    let z = (row.mean - green) / row.stderr;
    ledger.record(
        2,
        row.walks == 100 && z.abs() <= 3.0 && row.mean > green && elapsed < Duration::from_secs(5 * 60),
        format!("n = 1e6, {} walks: mean R_n/n {:.6} +- {:.6}, {z:.2} SE from kappa_3 (need |z| <= 3 and z > 0); walk-stats took {elapsed:.1?}", row.walks, row.mean, row.stderr),
    );

    // 3 to 5: default rate curve.
    let cfg = config(&tmp.path().join("rate-curve"));
    let rc = &cfg.rate_curve;
    let ((_, report), elapsed) = timed(|| cmd_rate_curve(&cfg, &mut start("rate-curve", &cfg)).unwrap());
    let in_range = rc.b.len() == 10
        && rc.b.iter().all(|&b| b > 0.1 * rc.kappa && b < 0.9 * rc.kappa)
        && rc.d == 3
        && rc.kappa == 1.0;
    let worst_poh = report
        .points
        .iter()
        .map(|p| if p.converged { p.pohozaev_residual.abs() } else { f64::INFINITY })
        .fold(0.0, f64::max);
    ledger.record(
        3,
        in_range && worst_poh <= 1e-3 && elapsed < Duration::from_secs(5 * 60),
        format!("10 points in (0.1, 0.9), worst relative residual {worst_poh:.2e} (<= 1e-3), {elapsed:.1?}"),
    );
    let devs: Vec<f64> = report.points.iter().filter_map(|p| p.derivative_deviation).collect();
    let worst_dev = devs.iter().cloned().fold(0.0, f64::max);
    ledger.record(
        4,
        devs.len() == rc.b.len() - 2 && worst_dev <= 0.05,
        format!("{} interior points, worst |mu - 2 dI/db| / |mu| = {:.2}% (<= 5%)", devs.len(), 100.0 * worst_dev),
    );
    let full: Vec<f64> = (1..20).map(|i| 0.05 * i as f64).collect();
    let curve = rate_curve(3, 1.0, &full, &CurveConfig::default(), Exec::Parallel);
    let tols = IdentityTolerances { pohozaev: 1e-3, derivative: 0.05, g_monotone: 1e-8, xi_floor: -1e-12 };
    let extended = rate_identities(3, 1.0, &full, &curve, tols);
    let st = |pts: &[swiss_cheese_cli::checks::PointIdentities]| {
        pts.iter().filter(|p| !(p.converged && p.serrin_tang_pass)).count()
    };
    let (st_default, st_full) = (st(&report.points), st(&extended));
    ledger.record(
        5,
        st_default == 0 && st_full == 0,
        format!(
            "Serrin-Tang failures: {st_default} of {} on the default grid, {st_full} of {} on b in 0.05..0.95",
            report.points.len(),
            full.len()
        ),
    );

    // 6: kappa scaling collapse.
    let cfg_search = SearchConfig::default();
    let chi = |kappa: f64, u: f64| {
        let p = solve_rate_point(&ProblemParams::new(3, kappa, kappa * u).unwrap(), &cfg_search).unwrap();
        kappa.powf(2.0 / 3.0) * p.energy
    };
    let worst = [0.3, 0.5, 0.7].iter().map(|&u| (chi(0.6595, u) / chi(1.0, u) - 1.0).abs()).fold(0.0, f64::max);
    ledger.record(
        6,
        worst <= 0.01,
        format!("kappa in {{1, 0.6595}}, u in {{0.3, 0.5, 0.7}}: worst relative gap {worst:.2e} (<= 1e-2)"),
    );

    // 7 to 10: identity checks.
    let worst = BRIDGE_TRIPLES.iter().map(|&(x, y, e)| (bridge_normalization(x, y, e) - 1.0).abs()).fold(0.0, f64::max);
    ledger.record(
        7,
        BRIDGE_TRIPLES.len() == 5 && worst <= 1e-4,
        format!("5 triples, worst |integral - 1| = {worst:.2e} (<= 1e-4)"),
    );

    let vk = ExperimentConfig::default().verify.kappa;
    let sweep = scaling_sweep(3, vk);
    let monotone = sweep.windows(2).all(|w| w[1].1 <= w[0].1);
    let lo = (sweep[0].1 - vk).abs() / vk;
    let hi = sweep[sweep.len() - 1].1 / vk;
    ledger.record(
        8,
        sweep.len() == 13 && monotone && lo <= 0.01 && hi <= 0.01,
        format!("a = 2^-6..2^6, monotone = {monotone}, endpoints {lo:.2e} and {hi:.2e} relative to kappa (<= 1%)"),
    );

    let grid = binomial_grid().unwrap();
    let violations = grid.iter().filter(|c| c.exact > c.bound).count();
    ledger.record(
        9,
        grid.len() == 27 && violations == 0,
        format!("{violations} violations of exact <= bound on {} triples", grid.len()),
    );

    let ns: Vec<usize> = (10..=30).collect();
    let llt = llt_trend(3, &ns).unwrap();
    ledger.record(
        10,
        llt.fit.ci_low <= 0.0,
        format!("slope {:.3e}, CI [{:.3e}, {:.3e}] reaches 0 or below", llt.fit.slope, llt.fit.ci_low, llt.fit.ci_high),
    );

    // 11: Gaussian mixture demo.
    let cfg = config(&tmp.path().join("mv-demo"));
    let (_, mv) = cmd_mv_demo(&cfg, &mut start("mv-demo", &cfg)).unwrap();
    let bands: Vec<String> =
        mv.rows.iter().map(|r| format!("n = {}: {:.4e} +- {:.1e}", r.n, r.value, r.mc_stderr)).collect();
    ledger.record(11, mv.ratio >= 3.0, format!("{}; ratio {:.2} (>= 3)", bands.join(", "), mv.ratio));

    // 12: tube proxy.
    let cfg = config(&tmp.path().join("tube"));
    let ((status, tube), elapsed) = timed(|| cmd_tube(&cfg, &mut start("tube", &cfg)).unwrap());
    let p = tube.rank_sum.as_ref().map_or(f64::NAN, |r| r.p_value);
    ledger.record(
        12,
        status == Status::Ok
            && tube.d == 3
            && cfg.tube.n == 10_000
            && tube.acceptance.rate >= 1e-4
            && tube.acceptance.accepted >= 30
            && p < 0.05
            && elapsed < Duration::from_secs(30 * 60),
        format!(
            "n = {} (rounded to a multiple of ell), b = {:.4}, acceptance {:.2e} ({} of {}), mean D {:.4} vs {:.4}, rank-sum p = {p:.2e} (< 0.05), {elapsed:.1?}",
            tube.n, tube.b, tube.acceptance.rate, tube.acceptance.accepted, tube.acceptance.attempts, tube.conditioned_mean, tube.unconditioned_mean
        ),
    );

    // 13: byte-identical CSVs across worker counts and reruns.
    let mut small = ExperimentConfig::default();
    small.walk_stats.ns = vec![1_000, 10_000];
    small.walk_stats.walks = 40;
    small.walk_stats.mc_walks = 5_000;
    small.walk_stats.mc_cutoff = 500;
    small.mv_demo.samples = 300;
    small.mv_demo.replicates = 3;
    small.tube.n = 2_000;
    small.tube.b = Some(0.72);
    small.tube.profile_b = Some(0.5);
    small.tube.target_accepted = 10;
    small.tube.budget = 5_000;
    small.tube.unconditioned = 10;
    small.tube.minimizer_samples = 300;
    small.tube.chunk = 256;
    let mut mismatched = Vec::new();
    let mut compared = 0;
    for (name, f) in [
        (
            "rate-curve",
            (|c: &ExperimentConfig, r: &mut Run| cmd_rate_curve(c, r).map(|_| ()))
                as fn(&ExperimentConfig, &mut Run) -> anyhow::Result<()>,
        ),
        ("walk-stats", |c, r| cmd_walk_stats(c, r).map(|_| ())),
        ("tube", |c, r| cmd_tube(c, r).map(|_| ())),
        ("mv-demo", |c, r| cmd_mv_demo(c, r).map(|_| ())),
    ] {
        let outputs: Vec<Vec<(String, Vec<u8>)>> = [(1, "a"), (4, "b"), (4, "c")]
            .iter()
            .map(|&(workers, tag)| {
                let cfg =
                    ExperimentConfig { out: tmp.path().join(format!("det-{name}-{tag}")), workers, ..small.clone() };
                with_workers(workers, || f(&cfg, &mut start(name, &cfg))).unwrap();
                csv_files(&cfg.out)
            })
            .collect();
        compared += outputs[0].len();
        if outputs[0].is_empty() || outputs.iter().any(|o| *o != outputs[0]) {
            mismatched.push(name);
        }
    }
    ledger.record(
        13,
        mismatched.is_empty(),
        format!("{compared} CSV files identical across workers 1, 4 and a rerun; mismatched commands: {mismatched:?}"),
    );

    let failed: Vec<usize> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!("{} of {} criteria pass", ledger.lines.len() - failed.len(), ledger.lines.len());
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
