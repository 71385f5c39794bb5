//! Identity checks shared by `verify` and the experiment reports.

use std::f64::consts::PI;

use serde::Serialize;
use swiss_cheese::functionals::{bridge_weight_3d, gamma_of, heat_kernel, DensityField, QuadConfig};
use swiss_cheese::numerics::adaptive_simpson;
use swiss_cheese::rate_function::{
    derivative_identity, serrin_tang_report, sphere_area, ProblemParams, RateError, RatePoint,
};
use swiss_cheese::walk_sim::{binomial_ld_check, llt_error, BinomialCheck, LltReport, WalkError};

use crate::stats::{slope_fit, SlopeFit};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    /// Hard checks decide the exit code.
    pub hard: bool,
    pub pass: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

/// `∫ p_s(x) dx` in `d` dimensions by radial quadrature.
pub fn heat_kernel_mass(d: usize, s: f64) -> f64 {
    let f = |r: f64| {
        let mut e = vec![0.0; d];
        e[0] = r;
        sphere_area(d) * r.powi(d as i32 - 1) * heat_kernel(s, &e).unwrap_or(0.0)
    };
    let r_max = 40.0 * s.sqrt();
    (0..16)
        .map(|k| adaptive_simpson(&f, r_max * k as f64 / 16.0, r_max * (k + 1) as f64 / 16.0, 1e-14, 1 << 16).0)
        .sum()
}

/// `(1/ε) ∫ φ_ε(x − z, y − z) dz` in `d = 3`.
///
/// The weight `|y − z|/(|x − z| + |y − z|)` splits the integrand into a part
/// singular only at `x` and a part singular only at `y`; each is integrated
/// in spherical coordinates about its singular point, using the symmetry
/// about the line through `x` and `y`.
pub fn bridge_normalization(x: [f64; 3], y: [f64; 3], eps: f64) -> f64 {
    (half_integral(x, y, eps) + half_integral(y, x, eps)) / eps
}

fn half_integral(x: [f64; 3], y: [f64; 3], eps: f64) -> f64 {
    let v = [y[0] - x[0], y[1] - x[1], y[2] - x[2]];
    let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let (axis, perp) = frame(v, len);
    // With c = 1 − cos θ the volume element is 2π r² dr dc.
    let integrand = |r: f64, c: f64| {
        let (cos, sin) = (1.0 - c, (c * (2.0 - c)).max(0.0).sqrt());
        let z: Vec<f64> = (0..3).map(|k| x[k] + r * (cos * axis[k] + sin * perp[k])).collect();
        let a: Vec<f64> = (0..3).map(|k| x[k] - z[k]).collect();
        let b: Vec<f64> = (0..3).map(|k| y[k] - z[k]).collect();
        let (na, nb) = (norm(&a), norm(&b));
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        2.0 * PI * r * r * bridge_weight_3d(&a, &b, eps) * nb / (na + nb)
    };
    let inner = |r: f64| {
        if r == 0.0 {
            return 0.0;
        }
        // Geometric pieces resolve the ridge along the segment at c = 0.
        let mut total = 0.0;
        let mut hi = 2.0;
        for _ in 0..60 {
            let lo = hi / 2.0;
            total += adaptive_simpson(|c| integrand(r, c), lo, hi, 1e-13, 1 << 12).0;
            hi = lo;
        }
        total
    };
    let r_max = len + 12.0 * eps.sqrt();
    let mut breaks = vec![0.0];
    for k in 1..=32 {
        breaks.push(r_max * k as f64 / 32.0);
    }
    if len > 0.0 && len < r_max {
        breaks.push(len);
        breaks.sort_by(f64::total_cmp);
    }
    breaks.windows(2).map(|w| adaptive_simpson(inner, w[0], w[1], 1e-11, 1 << 12).0).sum()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn frame(v: [f64; 3], len: f64) -> ([f64; 3], [f64; 3]) {
    if len == 0.0 {
        return ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    }
    let e = [v[0] / len, v[1] / len, v[2] / len];
    let seed = if e[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let dot = seed[0] * e[0] + seed[1] * e[1] + seed[2] * e[2];
    let p = [seed[0] - dot * e[0], seed[1] - dot * e[1], seed[2] - dot * e[2]];
    let n = norm(&p);
    (e, [p[0] / n, p[1] / n, p[2] / n])
}

/// Triples used by the bridge normalization check.
pub const BRIDGE_TRIPLES: [([f64; 3], [f64; 3], f64); 5] = [
    ([0.0, 0.0, 0.0], [0.3, 0.0, 0.0], 0.5),
    ([0.1, -0.2, 0.3], [0.5, 0.1, -0.1], 1.0),
    ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.25),
    ([-0.5, 0.5, 0.0], [0.7, 0.2, 0.4], 2.0),
    ([0.2, 0.2, 0.2], [0.21, 0.2, 0.2], 0.1),
];

/// `Γ(φ_[a]²)` for the unit Gaussian `φ² = N(0, I)`, where `φ_[a]²` is the
/// density of `N(0, a^{−2} I)`, over `a = 2^{−6}, …, 2^6`.
pub fn scaling_sweep(d: usize, kappa: f64) -> Vec<(f64, f64)> {
    let q = QuadConfig::default();
    (-6..=6)
        .map(|k| {
            let a = 2f64.powi(k);
            let field = DensityField::gaussian(d, 1.0, 1.0 / (a * a)).expect("positive variance");
            (a, gamma_of(&field, kappa, &q))
        })
        .collect()
}

/// 3×3×3 grid of `(M, ε₀, C)` with `C ≥ 1`.
pub fn binomial_grid() -> Result<Vec<BinomialCheck>, WalkError> {
    let mut out = Vec::new();
    for m in [10, 50, 200] {
        for eps0 in [0.05, 0.2, 0.5] {
            for c in [1.5, 4.0, 20.0] {
                out.push(binomial_ld_check(m, eps0, c)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LltTrend {
    pub reports: Vec<LltReport>,
    pub fit: SlopeFit,
}

/// Scaled local CLT errors and a least-squares trend against `n`.
pub fn llt_trend(d: usize, ns: &[usize]) -> Result<LltTrend, WalkError> {
    let reports = ns.iter().map(|&n| llt_error(n, d)).collect::<Result<Vec<_>, _>>()?;
    let x: Vec<f64> = reports.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = reports.iter().map(|r| r.scaled_error).collect();
    Ok(LltTrend { fit: slope_fit(&x, &y, 0.95), reports })
}

/// Identities at one point of a rate curve.
#[derive(Debug, Clone, Serialize)]
pub struct PointIdentities {
    pub b: f64,
    pub converged: bool,
    pub error: Option<String>,
    pub energy: f64,
    pub lambda: f64,
    pub mu: f64,
    pub pohozaev_residual: f64,
    pub pohozaev_pass: bool,
    /// `|μ − 2ΔI/Δb|/|μ|` at interior points.
    pub derivative_deviation: Option<f64>,
    pub derivative_pass: bool,
    pub serrin_tang_pass: bool,
    pub serrin_tang_failures: Vec<String>,
    pub g_max_increase: f64,
    pub xi_min: f64,
    pub outside_uniqueness_regime: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct IdentityTolerances {
    pub pohozaev: f64,
    pub derivative: f64,
    pub g_monotone: f64,
    pub xi_floor: f64,
}

pub fn rate_identities(
    d: usize,
    kappa: f64,
    bs: &[f64],
    curve: &[Result<RatePoint, RateError>],
    tol: IdentityTolerances,
) -> Vec<PointIdentities> {
    let deriv = derivative_identity(curve);
    curve
        .iter()
        .zip(deriv)
        .zip(bs)
        .map(|((res, dev), &b)| match res {
            Err(e) => PointIdentities {
                b,
                converged: false,
                error: Some(e.to_string()),
                energy: f64::NAN,
                lambda: f64::NAN,
                mu: f64::NAN,
                pohozaev_residual: f64::NAN,
                pohozaev_pass: false,
                derivative_deviation: None,
                derivative_pass: false,
                serrin_tang_pass: false,
                serrin_tang_failures: vec![],
                g_max_increase: f64::NAN,
                xi_min: f64::NAN,
                outside_uniqueness_regime: false,
            },
            Ok(p) => {
                let poh = p.pohozaev_residual(d);
                let mut failures = Vec::new();
                let (mut g_inc, mut xi_min) = (f64::NAN, f64::NAN);
                if !p.trivial {
                    match ProblemParams::new(d, kappa, p.b).and_then(|params| serrin_tang_report(&p.mult, &params)) {
                        Ok(r) => {
                            g_inc = r.g_max_increase;
                            xi_min = r.xi_min;
                            if !(r.psi0 < 0.0) {
                                failures.push(format!("psi(0) = {} is not negative", r.psi0));
                            }
                            if !(r.psi_inf > 0.0) {
                                failures.push(format!("lambda = {} is not positive", r.psi_inf));
                            }
                            if !(r.g_max_increase <= tol.g_monotone) {
                                failures.push(format!("g increases by {:.3e}", r.g_max_increase));
                            }
                            if !(r.xi_min >= -tol.xi_floor) {
                                failures.push(format!("min Xi = {:.3e}", r.xi_min));
                            }
                        }
                        Err(e) => failures.push(e.to_string()),
                    }
                }
                PointIdentities {
                    b: p.b,
                    converged: true,
                    error: None,
                    energy: p.energy,
                    lambda: p.mult.lambda,
                    mu: p.mult.mu,
                    pohozaev_residual: poh,
                    pohozaev_pass: poh.abs() <= tol.pohozaev,
                    derivative_deviation: dev,
                    derivative_pass: dev.is_none_or(|v| v <= tol.derivative),
                    serrin_tang_pass: failures.is_empty(),
                    serrin_tang_failures: failures,
                    g_max_increase: g_inc,
                    xi_min,
                    outside_uniqueness_regime: p.outside_uniqueness_regime,
                }
            }
        })
        .collect()
}
