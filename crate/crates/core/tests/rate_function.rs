use swiss_cheese::rate_function::*;
use swiss_cheese::Exec;

const KAPPA3: f64 = 0.659_462_670_2;

/// Fixed-step RK4 of the radial equation, classified the same way as a shot.
fn rk4_classify(
    lambda: f64,
    mu: f64,
    kappa: f64,
    d: usize,
    y0: f64,
    h: f64,
    r_end: f64,
) -> (i32, Vec<(f64, f64, f64)>) {
    let f = |y: f64| y * (lambda + mu * kappa * (-kappa * y * y).exp());
    let rhs = |r: f64, y: f64, p: f64| -((d - 1) as f64) / r * p - f(y);
    let mut r = 1e-6;
    let (mut y, mut p) = (y0, -f(y0) * r / d as f64);
    let mut path = vec![(r, y, p)];
    while r < r_end {
        let k1 = (p, rhs(r, y, p));
        let k2 = (p + 0.5 * h * k1.1, rhs(r + 0.5 * h, y + 0.5 * h * k1.0, p + 0.5 * h * k1.1));
        let k3 = (p + 0.5 * h * k2.1, rhs(r + 0.5 * h, y + 0.5 * h * k2.0, p + 0.5 * h * k2.1));
        let k4 = (p + h * k3.1, rhs(r + h, y + h * k3.0, p + h * k3.1));
        y += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        p += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        r += h;
        if y < 0.0 {
            return (1, path);
        }
        if p > 0.0 {
            return (-1, path);
        }
        path.push((r, y, p));
    }
    (0, path)
}

/// Bisection on `y(0)` with the RK4 classifier; returns the threshold and the last undershooting path.
fn rk4_ground_state(lambda: f64, mu: f64, kappa: f64, d: usize, h: f64, r_end: f64) -> (f64, Vec<(f64, f64, f64)>) {
    let alpha = ((-kappa * mu / lambda).ln() / kappa).sqrt();
    let (mut lo, mut hi) = (alpha, alpha);
    while rk4_classify(lambda, mu, kappa, d, hi, h, r_end).0 != 1 {
        hi *= 2.0;
    }
    let mut best = Vec::new();
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let (c, path) = rk4_classify(lambda, mu, kappa, d, mid, h, r_end);
        if c == 1 {
            hi = mid;
        } else {
            lo = mid;
            best = path;
        }
    }
    (lo, best)
}

/// Mass, energy and `Γ` of an RK4 path by the trapezoid rule, cut where `y` stops decreasing.
fn trapezoid_functionals(path: &[(f64, f64, f64)], kappa: f64, d: usize) -> (f64, f64, f64) {
    let omega = sphere_area(d);
    let (mut m, mut e, mut g) = (0.0, 0.0, 0.0);
    for w in path.windows(2) {
        let h = w[1].0 - w[0].0;
        let term = |s: &(f64, f64, f64)| {
            let rp = s.0.powi(d as i32 - 1);
            (s.1 * s.1 * rp, 0.5 * s.2 * s.2 * rp, -(-kappa * s.1 * s.1).exp_m1() * rp)
        };
        let (a, b) = (term(&w[0]), term(&w[1]));
        m += 0.5 * h * (a.0 + b.0);
        e += 0.5 * h * (a.1 + b.1);
        g += 0.5 * h * (a.2 + b.2);
    }
    (omega * m, omega * e, omega * g)
}

fn solve(d: usize, kappa: f64, b: f64) -> RatePoint {
    solve_rate_point(&ProblemParams::new(d, kappa, b).unwrap(), &SearchConfig::default()).unwrap()
}

// Frozen after cross-checking against the RK4 implementation below.
const GOLDEN_B_HALF: (f64, f64, f64) = (7.803_395_368_629, 28.839_121_460_477, -47.273_715_764_236);

#[test]
fn golden_point_b_half() {
    let p = solve(3, 1.0, 0.5);

    let (i, l, m) = GOLDEN_B_HALF;
    assert!((p.energy - i).abs() <= 1e-6 * i);
    assert!((p.mult.lambda - l).abs() <= 1e-6 * l);
    assert!((p.mult.mu - m).abs() <= 1e-6 * m.abs());
}

#[test]
fn golden_point_satisfies_constraints_under_rk4() {
    let (i, l, m) = GOLDEN_B_HALF;
    let (_, path) = rk4_ground_state(l, m, 1.0, 3, 2e-4, 8.0);
    let (mass, energy, gamma) = trapezoid_functionals(&path, 1.0, 3);
    assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    assert!((gamma - 0.5).abs() < 1e-3, "gamma {gamma}");
    assert!((energy - i).abs() < 1e-3 * i, "energy {energy} vs {i}");
}

#[test]
fn ground_state_height_matches_rk4_bisection() {
    let params = ProblemParams::new(3, 1.0, 0.5).unwrap();
    let mult = Multipliers::new(1.0, -3.0);
    let profile = ground_state(&mult, &params, &ShootingConfig::default()).unwrap();
    let (y_star, _) = rk4_ground_state(1.0, -3.0, 1.0, 3, 1e-3, 40.0);
    assert!((profile.y0() - y_star).abs() < 1e-6 * y_star, "{} vs {y_star}", profile.y0());
    assert!(!profile.brackets.is_empty());
    let cfg = ShootingConfig::default();
    for k in 0..20 {
        let y0 = y_star * (0.5 + 0.05 * k as f64);
        if (y0 / y_star - 1.0).abs() < 1e-3 {
            continue;
        }
        let shot = shoot(&mult, &params, y0, &cfg).unwrap();
        let expect = if y0 > y_star { ShotOutcome::CrossesZero } else { ShotOutcome::BlowsUp };
        assert_eq!(shot.outcome, expect, "y0 = {y0}");
    }
}

#[test]
fn step_halving_is_stable() {
    let params = ProblemParams::new(3, 1.0, 0.5).unwrap();
    let coarse = solve_rate_point(&params, &SearchConfig::default()).unwrap();
    let cfg = SearchConfig { shooting: ShootingConfig::default().refined(0.5), ..SearchConfig::default() };
    let fine = solve_rate_point(&params, &cfg).unwrap();
    assert!((coarse.energy - fine.energy).abs() < 1e-6 * fine.energy);
    assert!((coarse.mult.mu - fine.mult.mu).abs() < 1e-6 * fine.mult.mu.abs());
}

#[test]
fn serrin_tang_at_b_half() {
    let p = solve(3, 1.0, 0.5);
    let params = ProblemParams::new(3, 1.0, 0.5).unwrap();
    let r = serrin_tang_report(&p.mult, &params).unwrap();
    assert!(r.failures().is_empty(), "{:?}", r.failures());
    assert!(p.pohozaev_residual(3).abs() < 1e-6);
}

#[test]
fn kappa_scaling_collapse() {
    for u in [0.3, 0.5, 0.7] {
        let a = solve(3, 1.0, u).energy;
        let b = KAPPA3.powf(2.0 / 3.0) * solve(3, KAPPA3, KAPPA3 * u).energy;
        assert!((a - b).abs() <= 0.01 * a, "u = {u}: {a} vs {b}");
    }
}

#[test]
fn curve_decreases_to_zero_at_kappa() {
    let bs = [0.2, 0.4, 0.6, 0.8, 0.95, 0.99, 1.0, 1.2];
    let curve = rate_curve(3, 1.0, &bs, &CurveConfig::default(), Exec::Parallel);
    let e: Vec<f64> = curve.iter().map(|p| p.as_ref().unwrap().energy).collect();
    for w in e.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert!(e[5] < 0.1 * e[0]);
    assert_eq!(e[6], 0.0);
    assert_eq!(e[7], 0.0);
}

#[test]
fn higher_dimensions_satisfy_pohozaev() {
    for d in [4, 5] {
        let p = solve(d, 1.0, 0.3);
        assert!(p.pohozaev_residual(d).abs() < 1e-3, "d = {d}: {}", p.pohozaev_residual(d));
        assert!(p.mass_residual.abs() < 1e-6 && p.gamma_residual.abs() < 1e-6);
    }
}

#[test]
fn invalid_parameters_rejected() {
    assert!(ProblemParams::new(3, -1.0, 0.5).is_err());
    assert!(ProblemParams::new(3, 1.0, 0.0).is_err());
    assert!(ProblemParams::new(2, 1.0, 0.5).is_err());
}
