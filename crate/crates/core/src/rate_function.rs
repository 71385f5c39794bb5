//! The variational rate function
//!
//! `I_κ(b) = inf { ½‖∇φ‖² : ‖φ‖₂ = 1, ∫(1 − e^{−κφ²}) ≤ b }`
//!
//! solved through the radial Euler–Lagrange equation
//! `y'' + (d−1)/r y' + λy + μκ y e^{−κy²} = 0` by shooting on `y(0)`.
//!
//! The multiplier search uses the spatial scaling of the equation: if `φ`
//! solves it for `(λ, μ)`, then `φ(·/s)` solves it for `(λ/s², μ/s²)`, with
//! mass and `Γ` both multiplied by `s^d`. The constraint ratio `Γ/mass`
//! therefore depends on `(λ, μ)` only through `t = −κμ/λ`, and the 2-D
//! problem reduces to a bracketed root in `t` followed by an exact rescale.

use std::sync::Arc;

use log::warn;
use thiserror::Error;

use crate::exec::Exec;
use crate::numerics::{
    fd_weights, find_root, integrate_ode_at, integrate_ode_monitored, Grid1D, NumericsError, OdeConfig, OdeState,
    OdeStatus,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no bracket found for lambda = {lambda}, mu = {mu}")]
    NoBracket { lambda: f64, mu: f64 },
    #[error("shooting unresolved: {0}")]
    Unresolved(String),
    #[error("search failed: {reason} (mass residual {mass_residual:.3e}, gamma residual {gamma_residual:.3e})")]
    SearchFailed { reason: String, mass_residual: f64, gamma_residual: f64 },
    #[error("hypothesis violated: {}", failed.join("; "))]
    HypothesisViolated { failed: Vec<String> },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Dimension, `κ` and the range budget `b`.
///
/// `b ≥ κ` is accepted: the rate vanishes there and no profile is solved.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProblemParams {
    pub d: usize,
    pub kappa: f64,
    pub b: f64,
}

impl ProblemParams {
    pub fn new(d: usize, kappa: f64, b: f64) -> Result<Self, RateError> {
        if d < 3 {
            return Err(RateError::InvalidParams(format!("dimension must be at least 3, got {d}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(RateError::InvalidParams(format!("kappa must be positive, got {kappa}")));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(RateError::InvalidParams(format!("b must be positive, got {b}")));
        }
        Ok(Self { d, kappa, b })
    }

    /// `b ≥ κ`: the constraint is inactive.
    pub fn is_trivial(&self) -> bool {
        self.b >= self.kappa
    }

    /// Regime in which the multipliers are known to determine a unique profile.
    pub fn in_uniqueness_regime(&self) -> bool {
        if self.d == 3 {
            self.b < self.kappa
        } else {
            self.b < 2.0 * self.kappa / self.d as f64
        }
    }

    fn dim(&self) -> f64 {
        self.d as f64
    }
}

/// Lagrange multipliers `(λ, μ)` of the mass and `Γ` constraints.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Multipliers {
    pub lambda: f64,
    pub mu: f64,
}

impl Multipliers {
    pub fn new(lambda: f64, mu: f64) -> Self {
        Self { lambda, mu }
    }

    /// `f(y) = λy + μκ y e^{−κy²}`.
    pub fn nonlinearity(&self, y: f64, kappa: f64) -> f64 {
        y * (self.lambda + self.mu * kappa * (-kappa * y * y).exp())
    }

    /// `ψ(0) = λ + κμ`, the small-amplitude coefficient of the nonlinearity.
    pub fn psi0(&self, kappa: f64) -> f64 {
        self.lambda + kappa * self.mu
    }

    /// Positive zero `α` of `f`, when `ψ(0) < 0 < λ`.
    pub fn alpha(&self, kappa: f64) -> Option<f64> {
        let ratio = -kappa * self.mu / self.lambda;
        (self.lambda > 0.0 && ratio > 1.0).then(|| (ratio.ln() / kappa).sqrt())
    }

    /// Exponential decay rate of the far field, `√(−(λ + κμ))`.
    pub fn decay_rate(&self, kappa: f64) -> Option<f64> {
        let p = self.psi0(kappa);
        (p < 0.0).then(|| (-p).sqrt())
    }
}

/// Surface area of the unit sphere in `R^d`, `2π^{d/2}/Γ(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    // Γ(d/2) by recurrence from Γ(1) = 1 or Γ(1/2) = √π.
    let mut g = if d % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if d % 2 == 0 { 1.0 } else { 0.5 };
    while x < d as f64 / 2.0 - 1e-12 {
        g *= x;
        x += 1.0;
    }
    2.0 * PI.powf(d as f64 / 2.0) / g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ShotOutcome {
    /// Entered the far-field band while still decreasing.
    Decays,
    /// `y` went negative: the initial height was too large.
    CrossesZero,
    /// `y'` turned positive above the band, or the state diverged.
    BlowsUp,
}

#[derive(Debug, Clone)]
pub struct Shot {
    pub outcome: ShotOutcome,
    pub trajectory: Vec<OdeState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingConfig {
    pub ode: OdeConfig,
    /// Start radius of the Taylor-regularized integration (in units of `1/√λ`).
    pub r0: f64,
    /// Far-field band, relative to `y(0)`.
    pub band_rel: f64,
    /// Bracketing trajectories are trusted until they differ by this much, relative to `y`.
    pub divergence_rel: f64,
    /// Grid ends where the matched tail falls below this, relative to `y(0)`.
    pub far_field_rel: f64,
    /// Number of doublings in the initial-height scan.
    pub scan_octaves: u32,
    pub grid_h0: f64,
    pub grid_stretch: f64,
    pub grid_h_max: f64,
}

impl Default for ShootingConfig {
    fn default() -> Self {
        Self {
            ode: OdeConfig { rtol: 1e-11, atol: 1e-13, h_init: 1e-4, h_max: 0.1, ..OdeConfig::default() },
            r0: 1e-4,
            band_rel: 1e-8,
            divergence_rel: 1e-6,
            far_field_rel: 1e-12,
            scan_octaves: 20,
            grid_h0: 2e-3,
            grid_stretch: 1.002,
            grid_h_max: 0.01,
        }
    }
}

impl ShootingConfig {
    /// Grid spacings multiplied by `factor` (e.g. 0.5 for a step-halving check).
    pub fn refined(mut self, factor: f64) -> Self {
        self.grid_h0 *= factor;
        self.grid_h_max *= factor;
        self
    }
}

fn taylor_start(mult: &Multipliers, d: f64, kappa: f64, y0: f64, r0: f64) -> OdeState {
    let f0 = mult.nonlinearity(y0, kappa);
    OdeState::new(r0, y0 - f0 * r0 * r0 / (2.0 * d), -f0 * r0 / d)
}

fn radial_rhs(mult: Multipliers, d: f64, kappa: f64) -> impl Fn(f64, f64, f64) -> f64 {
    move |r, y, yp| -(d - 1.0) / r * yp - mult.nonlinearity(y, kappa)
}

/// Integrates the radial equation from `y(0) = y0` and classifies the first
/// event: zero crossing, turn-around above the far-field band, or decay into it.
pub fn shoot(mult: &Multipliers, params: &ProblemParams, y0: f64, cfg: &ShootingConfig) -> Result<Shot, RateError> {
    if !(y0 > 0.0 && y0.is_finite()) {
        return Err(RateError::InvalidParams(format!("initial height must be positive, got {y0}")));
    }
    if !(mult.lambda > 0.0) || mult.mu > 0.0 {
        return Err(RateError::InvalidParams(format!(
            "shooting needs lambda > 0 and mu <= 0, got ({}, {})",
            mult.lambda, mult.mu
        )));
    }
    let unit = 1.0 / mult.lambda.sqrt();
    let r_end = unit * shot_horizon(mult, params.kappa);
    shoot_to(mult, params, y0, unit * cfg.r0, r_end, cfg)
}

/// Integration horizon in units of `1/√λ`.
fn shot_horizon(mult: &Multipliers, kappa: f64) -> f64 {
    match mult.decay_rate(kappa) {
        Some(k) => 20.0 + 60.0 * mult.lambda.sqrt() / k,
        None => 200.0,
    }
}

fn shoot_to(
    mult: &Multipliers,
    params: &ProblemParams,
    y0: f64,
    r0: f64,
    r_end: f64,
    cfg: &ShootingConfig,
) -> Result<Shot, RateError> {
    let d = params.dim();
    let kappa = params.kappa;
    let band = cfg.band_rel * y0;
    let start = taylor_start(mult, d, kappa, y0, r0);
    let mut outcome = None;
    let sol = integrate_ode_monitored(radial_rhs(*mult, d, kappa), start, r_end, &cfg.ode, |s| {
        if s.y < 0.0 {
            outcome = Some(ShotOutcome::CrossesZero);
        } else if s.yp > 0.0 && s.y > band {
            outcome = Some(ShotOutcome::BlowsUp);
        } else if s.y < band {
            outcome = Some(ShotOutcome::Decays);
        }
        outcome.is_none()
    })?;
    let outcome = match (outcome, sol.status) {
        (Some(o), _) => o,
        (None, OdeStatus::BlowUp) => ShotOutcome::BlowsUp,
        // Reached the horizon without an event: a non-decaying solution.
        (None, _) => ShotOutcome::BlowsUp,
    };
    Ok(Shot { outcome, trajectory: sol.states })
}

/// Matched far field `C r^{−(d−1)/2} e^{−k r}` beyond the trusted region.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FarField {
    pub r_match: f64,
    pub amplitude: f64,
    pub decay: f64,
}

impl FarField {
    pub fn value(&self, r: f64, d: usize) -> f64 {
        self.amplitude * r.powf(-(d as f64 - 1.0) / 2.0) * (-self.decay * r).exp()
    }

    pub fn derivative(&self, r: f64, d: usize) -> f64 {
        -(self.decay + (d as f64 - 1.0) / (2.0 * r)) * self.value(r, d)
    }

    /// `∫_R^∞ y² r^{d−1} dr` to leading order.
    fn square_moment(&self, r: f64, d: usize) -> f64 {
        let y = self.value(r, d);
        y * y * r.powi(d as i32 - 1) / (2.0 * self.decay)
    }
}

/// A radial profile `y(r)` on a graded grid, with derivative samples.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    pub grid: Grid1D,
    pub y: Vec<f64>,
    pub yp: Vec<f64>,
    pub d: usize,
    pub kappa: f64,
    pub mult: Multipliers,
    /// `None` for synthetic profiles, which are taken to vanish past the grid.
    pub tail: Option<FarField>,
    /// Every `y(0)` bracket seen during the scan; the first one is used.
    pub brackets: Vec<(f64, f64)>,
}

impl RadialProfile {
    /// Profile from tabulated samples, e.g. an analytic test function.
    pub fn from_samples(grid: Grid1D, y: Vec<f64>, yp: Vec<f64>, d: usize, kappa: f64) -> Self {
        assert_eq!(grid.len(), y.len());
        assert_eq!(grid.len(), yp.len());
        Self { grid, y, yp, d, kappa, mult: Multipliers::new(f64::NAN, f64::NAN), tail: None, brackets: Vec::new() }
    }

    pub fn y0(&self) -> f64 {
        self.y[0]
    }

    pub fn r_max(&self) -> f64 {
        self.grid.last()
    }

    /// `y(r)` by cubic Hermite interpolation; the far field beyond the grid.
    pub fn value_at(&self, r: f64) -> f64 {
        let nodes = self.grid.nodes();
        if r <= 0.0 {
            return self.y[0];
        }
        if r >= self.r_max() {
            return self.tail.map_or(0.0, |t| t.value(r, self.d));
        }
        let i = nodes.partition_point(|&x| x <= r).saturating_sub(1).min(nodes.len() - 2);
        let (x0, x1) = (nodes[i], nodes[i + 1]);
        let h = x1 - x0;
        let s = (r - x0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.yp[i] + h01 * self.y[i + 1] + h11 * h * self.yp[i + 1]
    }

    /// Sup norm of `y'' + (d−1)/r y' + f(y)` at interior nodes inside the
    /// integrated region, with `y''` from a five-point stencil on `y'`.
    pub fn ode_residual(&self) -> f64 {
        let nodes = self.grid.nodes();
        let end = self.tail.map_or(nodes.len(), |t| nodes.partition_point(|&x| x <= t.r_match));
        let d = self.d as f64;
        let mut worst: f64 = 0.0;
        for i in 3..end.saturating_sub(2) {
            let w = fd_weights(nodes[i], &nodes[i - 2..=i + 2], 1);
            let ypp: f64 = w[1].iter().zip(&self.yp[i - 2..=i + 2]).map(|(c, v)| c * v).sum();
            let res = ypp + (d - 1.0) / nodes[i] * self.yp[i] + self.mult.nonlinearity(self.y[i], self.kappa);
            worst = worst.max(res.abs());
        }
        worst
    }

    /// Same profile with the radius scaled: `y_new(r) = y(r / factor)`.
    fn stretched(&self, factor: f64) -> Self {
        let f2 = factor * factor;
        Self {
            grid: self.grid.scaled(factor),
            y: self.y.clone(),
            yp: self.yp.iter().map(|v| v / factor).collect(),
            d: self.d,
            kappa: self.kappa,
            mult: Multipliers::new(self.mult.lambda / f2, self.mult.mu / f2),
            tail: self.tail.map(|t| FarField {
                r_match: t.r_match * factor,
                amplitude: t.amplitude * factor.powf((self.d as f64 - 1.0) / 2.0),
                decay: t.decay / factor,
            }),
            brackets: self.brackets.clone(),
        }
    }

    /// Cumulative radial mass `ω_{d−1}∫_0^r y² s^{d−1} ds` at the nodes
    /// (trapezoid on the fine grid), normalised to end at 1.
    pub fn radial_cdf(&self) -> Vec<f64> {
        let nodes = self.grid.nodes();
        let dens: Vec<f64> = nodes.iter().zip(&self.y).map(|(r, y)| y * y * r.powi(self.d as i32 - 1)).collect();
        let mut cdf = vec![0.0; nodes.len()];
        for i in 1..nodes.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (nodes[i] - nodes[i - 1]) * (dens[i] + dens[i - 1]);
        }
        let total = cdf[nodes.len() - 1];
        if total > 0.0 {
            cdf.iter_mut().for_each(|c| *c /= total);
        }
        cdf
    }
}

/// Mass `‖φ‖₂²`, energy `½‖∇φ‖₂²` and `Γ = ∫(1 − e^{−κφ²})` of a radial profile.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ProfileFunctionals {
    pub mass: f64,
    pub energy: f64,
    pub gamma: f64,
}

pub fn profile_functionals(profile: &RadialProfile) -> ProfileFunctionals {
    let d = profile.d;
    let omega = sphere_area(d);
    let grid = &profile.grid;
    let rp: Vec<f64> = grid.nodes().iter().map(|r| r.powi(d as i32 - 1)).collect();
    let k = profile.kappa;
    let sum = |g: &dyn Fn(usize) -> f64| -> f64 { grid.weights().iter().enumerate().map(|(i, w)| w * g(i)).sum() };
    let mut mass = sum(&|i| profile.y[i] * profile.y[i] * rp[i]);
    let mut energy = 0.5 * sum(&|i| profile.yp[i] * profile.yp[i] * rp[i]);
    let mut gamma = sum(&|i| -(-k * profile.y[i] * profile.y[i]).exp_m1() * rp[i]);
    if let Some(tail) = profile.tail {
        let m = tail.square_moment(profile.r_max(), d);
        mass += m;
        energy += 0.5 * tail.decay * tail.decay * m;
        gamma += k * m;
    }
    ProfileFunctionals { mass: omega * mass, energy: omega * energy, gamma: omega * gamma }
}

/// Positive decaying solution for the given multipliers, located by
/// bisection on `y(0)` between zero-crossing and turn-around shots.
pub fn ground_state(
    mult: &Multipliers,
    params: &ProblemParams,
    cfg: &ShootingConfig,
) -> Result<RadialProfile, RateError> {
    if !(mult.lambda > 0.0) || !(mult.mu < 0.0) {
        return Err(RateError::InvalidParams(format!(
            "ground state needs lambda > 0 > mu, got ({}, {})",
            mult.lambda, mult.mu
        )));
    }
    let unit = 1.0 / mult.lambda.sqrt();
    let normalized = Multipliers::new(1.0, mult.mu / mult.lambda);
    let profile = normalized_ground_state(&normalized, params, cfg).map_err(|e| match e {
        RateError::NoBracket { .. } => RateError::NoBracket { lambda: mult.lambda, mu: mult.mu },
        other => other,
    })?;
    Ok(profile.stretched(unit))
}

fn normalized_ground_state(
    mult: &Multipliers,
    params: &ProblemParams,
    cfg: &ShootingConfig,
) -> Result<RadialProfile, RateError> {
    let kappa = params.kappa;
    let (Some(alpha), Some(decay)) = (mult.alpha(kappa), mult.decay_rate(kappa)) else {
        return Err(RateError::NoBracket { lambda: mult.lambda, mu: mult.mu });
    };
    let horizon = shot_horizon(mult, kappa);
    let classify = |y0: f64| shoot_to(mult, params, y0, cfg.r0, horizon, cfg).map(|s| s.outcome);

    // Geometric scan for sign changes of the classification.
    let seed = alpha * (1.0 + 1e-6);
    let mut scan = Vec::new();
    for k in 0..=cfg.scan_octaves {
        let y0 = seed * 2f64.powi(k as i32);
        if y0 > 0.1 * cfg.ode.blowup {
            break;
        }
        scan.push((y0, classify(y0)?));
    }
    let mut brackets = Vec::new();
    for w in scan.windows(2) {
        let ((a, oa), (b, ob)) = (w[0], w[1]);
        if oa != ob && oa != ShotOutcome::Decays && ob != ShotOutcome::Decays {
            brackets.push((a, b));
        }
    }
    if let Some(&(y0, _)) = scan.iter().find(|(_, o)| *o == ShotOutcome::Decays) {
        if brackets.is_empty() {
            brackets.push((y0, y0));
        }
    }
    let Some(&(a, b)) = brackets.first() else {
        return Err(RateError::NoBracket { lambda: mult.lambda, mu: mult.mu });
    };

    // Bisection until the bracket collapses to adjacent floats.
    let oa = classify(a)?;
    let (mut under, mut over) = if oa == ShotOutcome::CrossesZero { (b, a) } else { (a, b) };
    let under_class = classify(under)?;
    for _ in 0..200 {
        let mid = 0.5 * (under + over);
        if mid == under || mid == over {
            break;
        }
        match classify(mid)? {
            ShotOutcome::Decays => {
                under = mid;
                over = mid;
                break;
            }
            o if o == under_class => under = mid,
            _ => over = mid,
        }
    }

    // Both bracket ends on the output grid; trust them while they agree.
    let spacing = if decay < 1.0 { 1.0 / decay } else { 1.0 };
    let h_max = (cfg.grid_h_max * spacing).min(0.1).max(cfg.grid_h0);
    let grid_full = Grid1D::graded(horizon, cfg.grid_h0, cfg.grid_stretch, h_max)?;
    let nodes = grid_full.nodes();
    let rhs = radial_rhs(*mult, params.dim(), kappa);
    let run = |y0: f64| {
        let start = taylor_start(mult, params.dim(), kappa, y0, cfg.r0);
        integrate_ode_at(&rhs, start, &nodes[1..], &cfg.ode)
    };
    let lo = run(under)?;
    let hi = if over == under { lo.clone() } else { run(over)? };
    let y0 = under;
    let band = cfg.band_rel * y0;
    let usable = lo.states.len().min(hi.states.len());
    let mut last_good = 0;
    for i in 0..usable {
        let (s, t) = (lo.states[i], hi.states[i]);
        let ok = s.y > band && t.y > 0.0 && s.yp < 0.0 && (s.y - t.y).abs() <= cfg.divergence_rel * s.y;
        if !ok {
            break;
        }
        last_good = i;
    }
    let match_state = lo.states[last_good];
    if match_state.y > 1e-3 * y0 {
        return Err(RateError::Unresolved(format!(
            "trajectory trusted only to r = {:.4} where y/y0 = {:.3e}",
            match_state.r,
            match_state.y / y0
        )));
    }
    let d = params.d;
    let r_m = match_state.r;
    let tail = FarField {
        r_match: r_m,
        amplitude: match_state.y * r_m.powf((d as f64 - 1.0) / 2.0) * (decay * r_m).exp(),
        decay,
    };
    // Nodes up to the matching radius from the ODE, then the far field until it is negligible.
    let far_tol = cfg.far_field_rel * y0;
    let mut r_nodes = vec![0.0];
    let mut y = vec![y0];
    let mut yp = vec![0.0];
    for s in &lo.states[..=last_good] {
        r_nodes.push(s.r);
        y.push(s.y);
        yp.push(s.yp);
    }
    for &r in &nodes[last_good + 2..] {
        let v = tail.value(r, d);
        r_nodes.push(r);
        y.push(v);
        yp.push(tail.derivative(r, d));
        if v < far_tol {
            break;
        }
    }
    let grid = Grid1D::new(r_nodes)?;
    Ok(RadialProfile { grid, y, yp, d, kappa, mult: *mult, tail: Some(tail), brackets })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub shooting: ShootingConfig,
    /// Root tolerance on `ln(t − 1)`, `t = −κμ/λ`.
    pub ratio_tol: f64,
    /// Stop once `|Γ/mass − b|` is below this.
    pub gamma_tol: f64,
    /// Converged points must have both residuals below this.
    pub residual_tol: f64,
    /// Initial `t` for continuation.
    pub warm_start: Option<f64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            shooting: ShootingConfig::default(),
            ratio_tol: 1e-12,
            gamma_tol: 1e-11,
            residual_tol: 1e-6,
            warm_start: None,
        }
    }
}

/// A solved point of the rate curve.
#[derive(Debug, Clone)]
pub struct RatePoint {
    pub b: f64,
    /// `I(b)`.
    pub energy: f64,
    pub mult: Multipliers,
    pub mass_residual: f64,
    pub gamma_residual: f64,
    /// `t = −κμ/λ` of the solution (continuation state).
    pub ratio: f64,
    pub profile: Option<Arc<RadialProfile>>,
    /// `b ≥ κ`: returned without solving.
    pub trivial: bool,
    pub outside_uniqueness_regime: bool,
}

impl RatePoint {
    /// `(λ + μb − 2(1 − 2/d)I) / max(1, I)`.
    pub fn pohozaev_residual(&self, d: usize) -> f64 {
        if self.trivial {
            return 0.0;
        }
        let lhs = self.mult.lambda + self.mult.mu * self.b;
        let rhs = 2.0 * (1.0 - 2.0 / d as f64) * self.energy;
        (lhs - rhs) / self.energy.max(1.0)
    }
}

struct RatioEval {
    ratio: f64,
    functionals: ProfileFunctionals,
    profile: RadialProfile,
}

fn eval_ratio(t: f64, params: &ProblemParams, cfg: &ShootingConfig) -> Result<RatioEval, RateError> {
    let mult = Multipliers::new(1.0, -t / params.kappa);
    let profile = normalized_ground_state(&mult, params, cfg)?;
    let functionals = profile_functionals(&profile);
    Ok(RatioEval { ratio: t, functionals, profile })
}

/// Solves `I_κ(b)`: finds `(λ, μ)` whose ground state has unit mass and `Γ = b`.
pub fn solve_rate_point(params: &ProblemParams, cfg: &SearchConfig) -> Result<RatePoint, RateError> {
    if params.is_trivial() {
        return Ok(RatePoint {
            b: params.b,
            energy: 0.0,
            mult: Multipliers::new(0.0, 0.0),
            mass_residual: 0.0,
            gamma_residual: 0.0,
            ratio: f64::NAN,
            profile: None,
            trivial: true,
            outside_uniqueness_regime: false,
        });
    }
    let outside = !params.in_uniqueness_regime();
    if outside {
        warn!(
            "b = {} is at or above 2κ/d = {} in d = {}; the minimizer need not be unique",
            params.b,
            2.0 * params.kappa / params.d as f64,
            params.d
        );
    }
    let b = params.b;
    let scfg = &cfg.shooting;
    let failed = |reason: String| RateError::SearchFailed { reason, mass_residual: f64::NAN, gamma_residual: f64::NAN };
    // Work in u = ln(t − 1); the constraint ratio Γ/mass decreases in t.
    let excess = |u: f64| -> Result<(f64, RatioEval), RateError> {
        let e = eval_ratio(1.0 + u.exp(), params, scfg)?;
        Ok((e.functionals.gamma / e.functionals.mass - b, e))
    };
    let u0 = cfg.warm_start.filter(|t| *t > 1.0).map_or(0.0, |t| (t - 1.0).ln());
    let (u_min, u_max) = ((1e-8f64).ln(), (1e8f64).ln());
    let (g0, mut best) = excess(u0)?;
    let mut best_g = g0;
    let (mut lo, mut hi) = (u0, u0);
    let step = 4f64.ln();
    if g0 > 0.0 {
        loop {
            hi += step;
            if hi > u_max {
                return Err(failed(format!("no t with Γ/mass below b = {b}")));
            }
            let (g, e) = excess(hi)?;
            if g.abs() < best_g.abs() {
                (best, best_g) = (e, g);
            }
            if g <= 0.0 {
                break;
            }
            lo = hi;
        }
    } else {
        loop {
            lo -= step;
            if lo < u_min {
                return Err(failed(format!("no t with Γ/mass above b = {b}")));
            }
            let (g, e) = excess(lo)?;
            if g.abs() < best_g.abs() {
                (best, best_g) = (e, g);
            }
            if g >= 0.0 {
                break;
            }
            hi = lo;
        }
    }
    let mut last_err = None;
    let root = find_root(
        |u| match excess(u) {
            Ok((g, e)) => {
                if g.abs() < best_g.abs() {
                    (best, best_g) = (e, g);
                }
                // Stop Brent once the constraint is met to gamma_tol.
                if g.abs() <= cfg.gamma_tol {
                    0.0
                } else {
                    g
                }
            }
            Err(err) => {
                last_err = Some(err);
                f64::NAN
            }
        },
        lo,
        hi,
        cfg.ratio_tol,
    );
    if let Some(err) = last_err {
        return Err(err);
    }
    let root = root?;
    let t = 1.0 + root.exp();
    if (best.ratio - t).abs() > 1e-9 * t {
        best = eval_ratio(t, params, scfg)?;
    }
    // Rescale to unit mass: φ(x) = φ̂(x/s) with s^d · mass = 1.
    let s = best.functionals.mass.powf(-1.0 / params.dim());
    let mut profile = best.profile.stretched(s);
    profile.mult = Multipliers::new(1.0 / (s * s), -best.ratio / (params.kappa * s * s));
    let fun = profile_functionals(&profile);
    let point = RatePoint {
        b,
        energy: fun.energy,
        mult: profile.mult,
        mass_residual: fun.mass - 1.0,
        gamma_residual: fun.gamma - b,
        ratio: best.ratio,
        profile: Some(Arc::new(profile)),
        trivial: false,
        outside_uniqueness_regime: outside,
    };
    if point.mass_residual.abs() > cfg.residual_tol || point.gamma_residual.abs() > cfg.residual_tol {
        return Err(RateError::SearchFailed {
            reason: "residuals above tolerance".into(),
            mass_residual: point.mass_residual,
            gamma_residual: point.gamma_residual,
        });
    }
    Ok(point)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveConfig {
    pub search: SearchConfig,
    /// Points solved serially (with continuation) before the parallel sweep.
    pub serial_prefix: usize,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { search: SearchConfig::default(), serial_prefix: 1 }
    }
}

/// `I(b)` over a grid of `b`. The first `serial_prefix` points are solved in
/// order, each warm-started from the previous; the rest run in parallel,
/// warm-started from the last prefix solution. Failures stay per point.
pub fn rate_curve(
    d: usize,
    kappa: f64,
    bs: &[f64],
    cfg: &CurveConfig,
    exec: Exec,
) -> Vec<Result<RatePoint, RateError>> {
    let solve = |b: f64, warm: Option<f64>| {
        let params = ProblemParams::new(d, kappa, b)?;
        solve_rate_point(&params, &SearchConfig { warm_start: warm.or(cfg.search.warm_start), ..cfg.search })
    };
    let prefix = cfg.serial_prefix.min(bs.len());
    let mut out = Vec::with_capacity(bs.len());
    let mut warm = None;
    for &b in &bs[..prefix] {
        let res = solve(b, warm);
        if let Ok(p) = &res {
            if p.ratio.is_finite() {
                warm = Some(p.ratio);
            }
        }
        out.push(res);
    }
    out.extend(exec.map_slice(&bs[prefix..], |&b| solve(b, warm)));
    out
}

/// Relative deviation `|μ − 2ΔI/Δb| / |μ|` at interior points of a solved
/// curve. `ΔI/Δb` is the three-point derivative on the (possibly uneven)
/// grid. `None` where a neighbour failed.
pub fn derivative_identity(curve: &[Result<RatePoint, RateError>]) -> Vec<Option<f64>> {
    let mut out = vec![None; curve.len()];
    for i in 1..curve.len().saturating_sub(1) {
        if let (Ok(a), Ok(p), Ok(c)) = (&curve[i - 1], &curve[i], &curve[i + 1]) {
            if a.trivial || p.trivial || c.trivial {
                continue;
            }
            let (h1, h2) = (p.b - a.b, c.b - p.b);
            let slope = (-h2 / (h1 * (h1 + h2))) * a.energy
                + ((h2 - h1) / (h1 * h2)) * p.energy
                + (h1 / (h2 * (h1 + h2))) * c.energy;
            out[i] = Some((p.mult.mu - 2.0 * slope).abs() / p.mult.mu.abs());
        }
    }
    out
}

/// Serrin–Tang hypotheses for `f(r) = rψ(r)`, `ψ(r) = λ + μκe^{−κr²}`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SerrinTangReport {
    pub psi0: f64,
    pub psi_inf: f64,
    pub alpha: f64,
    /// Largest increase between consecutive samples of `g = rf'/f` on `(α + δ, R)`.
    pub g_max_increase: f64,
    pub g_monotone: bool,
    /// `g(R_check)`, which tends to 1.
    pub g_far: f64,
    pub r_check: f64,
    pub xi_min: f64,
}

impl SerrinTangReport {
    pub fn failures(&self) -> Vec<String> {
        let mut failed = Vec::new();
        if !(self.psi0 < 0.0) {
            failed.push(format!("psi(0) = {} is not negative", self.psi0));
        }
        if !(self.psi_inf > 0.0) {
            failed.push(format!("psi(inf) = {} is not positive", self.psi_inf));
        }
        if !self.g_monotone {
            failed.push(format!("g increases by {:.3e} on (alpha, inf)", self.g_max_increase));
        }
        if !(self.xi_min >= -1e-12) {
            failed.push(format!("Xi reaches {:.3e} < 0", self.xi_min));
        }
        failed
    }
}

/// Tolerance on sampled increases of `g`.
pub const G_MONOTONE_TOL: f64 = 1e-8;

/// `Ξ(u) = −ln u − (1 − e^{κα²}u)`.
pub fn xi(u: f64, kappa: f64, alpha: f64) -> f64 {
    -u.ln() - (1.0 - (kappa * alpha * alpha).exp() * u)
}

/// `g(r) = r f'(r) / f(r) = 1 + rψ'(r)/ψ(r)`.
pub fn g_ratio(r: f64, mult: &Multipliers, kappa: f64) -> f64 {
    let e = (-kappa * r * r).exp();
    let psi = mult.lambda + mult.mu * kappa * e;
    let dpsi = -2.0 * kappa * r * mult.mu * kappa * e;
    1.0 + r * dpsi / psi
}

pub fn serrin_tang_report(mult: &Multipliers, params: &ProblemParams) -> Result<SerrinTangReport, RateError> {
    let kappa = params.kappa;
    let psi0 = mult.psi0(kappa);
    let psi_inf = mult.lambda;
    let Some(alpha) = mult.alpha(kappa) else {
        return Err(RateError::HypothesisViolated {
            failed: vec![format!("psi has no positive zero (psi(0) = {psi0}, psi(inf) = {psi_inf})")],
        });
    };
    let r_lo = alpha * (1.0 + 1e-3);
    let r_check = (alpha * alpha + 30.0 / kappa).sqrt();
    let samples = 4000;
    let mut g_max_increase = f64::NEG_INFINITY;
    let mut prev = g_ratio(r_lo, mult, kappa);
    for i in 1..=samples {
        let r = r_lo + (r_check - r_lo) * i as f64 / samples as f64;
        let g = g_ratio(r, mult, kappa);
        g_max_increase = g_max_increase.max(g - prev);
        prev = g;
    }
    let u_max = (-kappa * alpha * alpha).exp();
    let mut xi_min = f64::INFINITY;
    // Geometric samples toward 0 plus uniform samples up to the endpoint.
    for i in 0..=400 {
        let u = u_max * 10f64.powf(-(i as f64) * 0.05);
        xi_min = xi_min.min(xi(u, kappa, alpha));
    }
    for i in 1..2000 {
        let u = u_max * i as f64 / 2000.0;
        xi_min = xi_min.min(xi(u, kappa, alpha));
    }
    let report = SerrinTangReport {
        psi0,
        psi_inf,
        alpha,
        g_max_increase,
        g_monotone: g_max_increase <= G_MONOTONE_TOL,
        g_far: prev,
        r_check,
        xi_min,
    };
    let failed = report.failures();
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(RateError::HypothesisViolated { failed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p3() -> ProblemParams {
        ProblemParams::new(3, 1.0, 0.5).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ProblemParams::new(2, 1.0, 0.5).is_err());
        assert!(ProblemParams::new(3, -1.0, 0.5).is_err());
        assert!(ProblemParams::new(3, 1.0, 0.0).is_err());
        assert!(ProblemParams::new(3, 1.0, 1.5).unwrap().is_trivial());
        assert!(!ProblemParams::new(4, 1.0, 0.6).unwrap().in_uniqueness_regime());
    }

    #[test]
    fn sphere_areas() {
        use std::f64::consts::PI;
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((sphere_area(5) - 8.0 * PI * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_case_oscillates() {
        let cfg = ShootingConfig::default();
        for y0 in [0.1, 1.0, 7.0] {
            let shot = shoot(&Multipliers::new(1.0, 0.0), &p3(), y0, &cfg).unwrap();
            assert_eq!(shot.outcome, ShotOutcome::CrossesZero);
            // y = y0 sin(r)/r crosses at π.
            let r_cross = shot.trajectory.last().unwrap().r;
            assert!((r_cross - std::f64::consts::PI).abs() < 0.2);
        }
    }

    #[test]
    fn below_alpha_turns_up() {
        let shot = shoot(&Multipliers::new(1.0, -3.0), &p3(), 0.5, &ShootingConfig::default()).unwrap();
        assert_eq!(shot.outcome, ShotOutcome::BlowsUp);
        assert!(shot.trajectory.len() < 5);
    }

    #[test]
    fn ground_state_invariants() {
        let prof = ground_state(&Multipliers::new(1.0, -3.0), &p3(), &ShootingConfig::default()).unwrap();
        assert!(prof.y0() > 0.0);
        assert_eq!(prof.yp[0], 0.0);
        assert!(prof.y.iter().all(|&v| v > 0.0));
        assert!(prof.y.windows(2).all(|w| w[1] < w[0]));
        assert!(*prof.y.last().unwrap() < 1e-10 * prof.y0());
        assert!(prof.ode_residual() < 1e-6, "{}", prof.ode_residual());
        assert_eq!(prof.brackets.len(), 1);
    }

    #[test]
    fn ground_state_needs_negative_psi0() {
        let err = ground_state(&Multipliers::new(1.0, -0.5), &p3(), &ShootingConfig::default()).unwrap_err();
        assert!(matches!(err, RateError::NoBracket { .. }));
    }

    #[test]
    fn zero_profile_functionals() {
        let grid = Grid1D::uniform(0.0, 5.0, 11).unwrap();
        let p = RadialProfile::from_samples(grid, vec![0.0; 11], vec![0.0; 11], 3, 1.0);
        let f = profile_functionals(&p);
        assert_eq!((f.mass, f.energy, f.gamma), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gaussian_profile_functionals() {
        use std::f64::consts::PI;
        let grid = Grid1D::graded(12.0, 1e-3, 1.002, 0.01).unwrap();
        let c = PI.powf(-0.75);
        let y: Vec<f64> = grid.nodes().iter().map(|r| c * (-r * r / 2.0).exp()).collect();
        let yp: Vec<f64> = grid.nodes().iter().zip(&y).map(|(r, v)| -r * v).collect();
        let f = profile_functionals(&RadialProfile::from_samples(grid, y, yp, 3, 1.0));
        assert!((f.mass - 1.0).abs() < 1e-9);
        assert!((f.energy - 0.75).abs() < 1e-9);
        assert!(f.gamma < f.mass);
    }

    #[test]
    fn trivial_point_above_kappa() {
        let p = solve_rate_point(&ProblemParams::new(3, 1.0, 1.2).unwrap(), &SearchConfig::default()).unwrap();
        assert!(p.trivial);
        assert_eq!(p.energy, 0.0);
        assert!(p.profile.is_none());
    }

    #[test]
    fn xi_at_endpoint() {
        let (kappa, alpha): (f64, f64) = (0.7, 1.3);
        let u = (-kappa * alpha * alpha).exp();
        assert!((xi(u, kappa, alpha) - kappa * alpha * alpha).abs() < 1e-12);
    }

    #[test]
    fn serrin_tang_rejects_positive_psi0() {
        let err = serrin_tang_report(&Multipliers::new(2.0, -1.0), &p3()).unwrap_err();
        assert!(matches!(err, RateError::HypothesisViolated { .. }));
    }

    #[test]
    fn serrin_tang_g_tends_to_one() {
        let rep = serrin_tang_report(&Multipliers::new(1.0, -3.0), &p3()).unwrap();
        assert!((rep.g_far - 1.0).abs() < 1e-3);
        assert!(rep.g_monotone);
        assert!(rep.xi_min >= 0.0);
    }
}
