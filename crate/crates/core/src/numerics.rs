//! Numeric kernels shared by the solver, the functionals and the walk engine:
//! an embedded Dormand–Prince 5(4) integrator for scalar second-order ODEs,
//! bracketed root finding, and composite quadrature on graded grids.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("no sign change on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("non-finite integrand at x = {x}")]
    NonFiniteIntegrand { x: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Nodes and quadrature weights of a one-dimensional grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid1D {
    /// Builds composite Simpson weights over arbitrary strictly increasing nodes.
    ///
    /// Pairs of intervals get the three-point interpolatory rule; an odd
    /// trailing interval is absorbed by a four-point rule over the last three
    /// intervals. Grids whose spacing varies too abruptly for positive weights
    /// are rejected.
    pub fn new(nodes: Vec<f64>) -> Result<Self, NumericsError> {
        if nodes.len() < 2 {
            return Err(NumericsError::InvalidInput("grid needs at least 2 nodes".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::InvalidInput("grid nodes must be finite".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NumericsError::InvalidInput("grid nodes must be strictly increasing".into()));
        }
        let n = nodes.len();
        let intervals = n - 1;
        let mut weights = vec![0.0; n];
        match intervals {
            1 => {
                let h = nodes[1] - nodes[0];
                weights[0] = 0.5 * h;
                weights[1] = 0.5 * h;
            }
            2 => add_rule(&mut weights, &nodes, 0, 3),
            3 => add_rule(&mut weights, &nodes, 0, 4),
            _ => {
                let paired = if intervals % 2 == 0 { intervals } else { intervals - 3 };
                let mut i = 0;
                while i < paired {
                    add_rule(&mut weights, &nodes, i, 3);
                    i += 2;
                }
                if intervals % 2 == 1 {
                    add_rule(&mut weights, &nodes, paired, 4);
                }
            }
        }
        if let Some(i) = weights.iter().position(|&w| w < 0.0) {
            return Err(NumericsError::InvalidInput(format!(
                "negative quadrature weight at node {i}; grid spacing varies too quickly"
            )));
        }
        Ok(Self { nodes, weights })
    }

    /// `n` equally spaced nodes on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Self, NumericsError> {
        if n < 2 || b.partial_cmp(&a) != Some(std::cmp::Ordering::Greater) {
            return Err(NumericsError::InvalidInput(format!(
                "uniform grid needs n >= 2 and b > a (got n={n}, [{a}, {b}])"
            )));
        }
        let h = (b - a) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
        nodes[n - 1] = b;
        Self::new(nodes)
    }

    /// Radial grid on `[0, r_max]`: uniform spacing `h0` up to `r = 1`, then
    /// geometric stretching by `stretch` per node, capped at `h_max`.
    pub fn graded(r_max: f64, h0: f64, stretch: f64, h_max: f64) -> Result<Self, NumericsError> {
        if !(r_max > 0.0 && h0 > 0.0 && stretch >= 1.0 && h_max >= h0) {
            return Err(NumericsError::InvalidInput(format!(
                "graded grid parameters out of range: r_max={r_max}, h0={h0}, stretch={stretch}, h_max={h_max}"
            )));
        }
        let mut nodes = vec![0.0];
        let mut h = h0;
        let mut r = 0.0;
        loop {
            if r >= 1.0 {
                h = (h * stretch).min(h_max);
            }
            let next = r + h;
            if next >= r_max - 0.5 * h {
                break;
            }
            nodes.push(next);
            r = next;
        }
        nodes.push(r_max);
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Same nodes scaled by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            nodes: self.nodes.iter().map(|x| x * factor).collect(),
            weights: self.weights.iter().map(|w| w * factor).collect(),
        }
    }

    /// Quadrature of precomputed node values.
    pub fn integrate_values(&self, values: &[f64]) -> Result<f64, NumericsError> {
        debug_assert_eq!(values.len(), self.nodes.len());
        let mut acc = 0.0;
        for ((&x, &w), &v) in self.nodes.iter().zip(&self.weights).zip(values) {
            if !v.is_finite() {
                return Err(NumericsError::NonFiniteIntegrand { x });
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

fn add_rule(weights: &mut [f64], nodes: &[f64], start: usize, count: usize) {
    let local = &nodes[start..start + count];
    let w = interpolatory_weights(local, local[0], local[count - 1]);
    for (k, wk) in w.into_iter().enumerate() {
        weights[start + k] += wk;
    }
}

/// Weights of the interpolatory rule on `nodes` integrating over `[a, b]`.
pub fn interpolatory_weights(nodes: &[f64], a: f64, b: f64) -> Vec<f64> {
    // Local coordinates keep the monomial moments well conditioned.
    let c = nodes[0];
    let scale = nodes[nodes.len() - 1] - c;
    let t: Vec<f64> = nodes.iter().map(|x| (x - c) / scale).collect();
    let (ta, tb) = ((a - c) / scale, (b - c) / scale);
    let k = t.len();
    let mut out = Vec::with_capacity(k);
    for j in 0..k {
        // Coefficients of the Lagrange basis polynomial L_j, lowest degree first.
        let mut poly = vec![1.0];
        let mut denom = 1.0;
        for (m, &tm) in t.iter().enumerate() {
            if m == j {
                continue;
            }
            let mut next = vec![0.0; poly.len() + 1];
            for (p, &cp) in poly.iter().enumerate() {
                next[p + 1] += cp;
                next[p] -= cp * tm;
            }
            poly = next;
            denom *= t[j] - tm;
        }
        let integral: f64 = poly
            .iter()
            .enumerate()
            .map(|(p, &cp)| cp * (tb.powi(p as i32 + 1) - ta.powi(p as i32 + 1)) / (p as f64 + 1.0))
            .sum();
        out.push(integral / denom * scale);
    }
    out
}

/// Composite Simpson quadrature of `f` over `grid`.
pub fn quadrature<F: Fn(f64) -> f64>(f: F, grid: &Grid1D) -> Result<f64, NumericsError> {
    let mut acc = 0.0;
    for (&x, &w) in grid.nodes.iter().zip(&grid.weights) {
        let v = f(x);
        if !v.is_finite() {
            return Err(NumericsError::NonFiniteIntegrand { x });
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Adaptive Simpson quadrature on `[a, b]` with at most `max_intervals`
/// leaf intervals. Returns the estimate and whether the tolerance was met.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_intervals: usize) -> (f64, bool) {
    if b <= a {
        return (0.0, true);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut budget = max_intervals.max(1) as isize - 1;
    let mut converged = true;
    let value = simpson_rec(&f, a, b, fa, fm, fb, whole, tol, 48, &mut budget, &mut converged);
    (value, converged)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut isize,
    converged: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 || *budget <= 0 {
        *converged = false;
        return left + right + delta / 15.0;
    }
    *budget -= 1;
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, budget, converged)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, budget, converged)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Finite-difference weights (Fornberg) for derivatives `0..=order` at `x0`.
/// Returns `weights[k][j]`: the weight of `nodes[j]` in the `k`-th derivative.
pub fn fd_weights(x0: f64, nodes: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; order + 1];
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Brent's method on a sign-changing bracket. Stops once `|f(x)| <= tol` or
/// the bracket is narrower than `tol`; the bracket may be given in either order.
pub fn find_root<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64, NumericsError> {
    if !(tol > 0.0) {
        return Err(NumericsError::InvalidInput(format!("tolerance must be positive, got {tol}")));
    }
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut fa = f(a);
    let mut fb = f(b);
    if !fa.is_finite() || !fb.is_finite() || fa * fb > 0.0 {
        return Err(NumericsError::NoSignChange { lo: a, hi: b });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..500 {
        if fb.abs() <= tol || (b - a).abs() <= tol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo_bound = (3.0 * a + b) / 4.0;
        let outside = !((s > lo_bound.min(b)) && (s < lo_bound.max(b)));
        let slow = if bisected { (s - b).abs() >= 0.5 * (b - c).abs() } else { (s - b).abs() >= 0.5 * (c - d).abs() };
        let tiny = if bisected { (b - c).abs() < tol } else { (c - d).abs() < tol };
        if outside || slow || tiny || !s.is_finite() {
            s = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s);
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
        if !fb.is_finite() {
            return Err(NumericsError::InvalidInput(format!("non-finite function value at {b}")));
        }
    }
    Ok(b)
}

/// Radius, value and first derivative of a scalar second-order ODE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeState {
    pub r: f64,
    pub y: f64,
    pub yp: f64,
}

impl OdeState {
    pub fn new(r: f64, y: f64, yp: f64) -> Self {
        Self { r, y, yp }
    }

    fn is_finite(&self) -> bool {
        self.r.is_finite() && self.y.is_finite() && self.yp.is_finite()
    }
}

/// Step control for [`integrate_ode`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
    /// `|y|` above this is reported as divergence.
    pub blowup: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, h_init: 1e-3, h_max: 0.25, h_min: 1e-14, max_steps: 2_000_000, blowup: 1e6 }
    }
}

impl OdeConfig {
    fn validate(&self) -> Result<(), NumericsError> {
        if !(self.rtol > 0.0 && self.atol > 0.0 && self.h_init > 0.0 && self.h_max > 0.0 && self.h_min > 0.0) {
            return Err(NumericsError::InvalidInput("step control needs positive tolerances and step sizes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OdeStatus {
    /// Reached the requested end radius.
    Completed,
    /// Non-finite state, `|y|` past the blow-up threshold, or step underflow.
    BlowUp,
    /// The monitor asked to stop.
    Stopped,
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub states: Vec<OdeState>,
    pub status: OdeStatus,
}

impl OdeSolution {
    pub fn last(&self) -> OdeState {
        *self.states.last().expect("trajectory holds at least the start state")
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<F> {
    rhs: F,
    cfg: OdeConfig,
    h: f64,
    steps: usize,
}

enum StepOutcome {
    Accepted(OdeState),
    Failed,
}

impl<F: Fn(f64, f64, f64) -> f64> Stepper<F> {
    fn deriv(&self, r: f64, y: f64, yp: f64) -> (f64, f64) {
        (yp, (self.rhs)(r, y, yp))
    }

    /// One accepted step from `s`, never past `r_stop`.
    fn step(&mut self, s: OdeState, r_stop: f64) -> StepOutcome {
        loop {
            self.steps += 1;
            if self.steps > self.cfg.max_steps {
                return StepOutcome::Failed;
            }
            let mut h = self.h.min(self.cfg.h_max);
            let last = s.r + h >= r_stop;
            if last {
                h = r_stop - s.r;
            }
            let (r, y, v) = (s.r, s.y, s.yp);
            let k1 = self.deriv(r, y, v);
            let k2 = self.deriv(r + C2 * h, y + h * A21 * k1.0, v + h * A21 * k1.1);
            let k3 = self.deriv(r + C3 * h, y + h * (A31 * k1.0 + A32 * k2.0), v + h * (A31 * k1.1 + A32 * k2.1));
            let k4 = self.deriv(
                r + C4 * h,
                y + h * (A41 * k1.0 + A42 * k2.0 + A43 * k3.0),
                v + h * (A41 * k1.1 + A42 * k2.1 + A43 * k3.1),
            );
            let k5 = self.deriv(
                r + C5 * h,
                y + h * (A51 * k1.0 + A52 * k2.0 + A53 * k3.0 + A54 * k4.0),
                v + h * (A51 * k1.1 + A52 * k2.1 + A53 * k3.1 + A54 * k4.1),
            );
            let k6 = self.deriv(
                r + h,
                y + h * (A61 * k1.0 + A62 * k2.0 + A63 * k3.0 + A64 * k4.0 + A65 * k5.0),
                v + h * (A61 * k1.1 + A62 * k2.1 + A63 * k3.1 + A64 * k4.1 + A65 * k5.1),
            );
            let y_new = y + h * (B1 * k1.0 + B3 * k3.0 + B4 * k4.0 + B5 * k5.0 + B6 * k6.0);
            let v_new = v + h * (B1 * k1.1 + B3 * k3.1 + B4 * k4.1 + B5 * k5.1 + B6 * k6.1);
            let r_new = if last { r_stop } else { r + h };
            let k7 = self.deriv(r_new, y_new, v_new);
            let ey = h * (E1 * k1.0 + E3 * k3.0 + E4 * k4.0 + E5 * k5.0 + E6 * k6.0 + E7 * k7.0);
            let ev = h * (E1 * k1.1 + E3 * k3.1 + E4 * k4.1 + E5 * k5.1 + E6 * k6.1 + E7 * k7.1);
            let sy = self.cfg.atol + self.cfg.rtol * y.abs().max(y_new.abs());
            let sv = self.cfg.atol + self.cfg.rtol * v.abs().max(v_new.abs());
            let err = (ey / sy).abs().max((ev / sv).abs());
            if !err.is_finite() {
                self.h = 0.25 * h;
                if self.h < self.cfg.h_min {
                    return StepOutcome::Failed;
                }
                continue;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                // A clipped final step says nothing about the natural step size.
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
                return StepOutcome::Accepted(OdeState::new(r_new, y_new, v_new));
            }
            self.h = h * factor.min(1.0);
            if self.h < self.cfg.h_min {
                return StepOutcome::Failed;
            }
        }
    }
}

fn validate_start(start: &OdeState, r_end: f64) -> Result<(), NumericsError> {
    if !start.is_finite() || start.r < 0.0 {
        return Err(NumericsError::InvalidInput("start state must be finite with r >= 0".into()));
    }
    if !(r_end > start.r) {
        return Err(NumericsError::InvalidInput(format!("r_end = {r_end} must exceed start radius {}", start.r)));
    }
    Ok(())
}

/// Integrates `y'' = rhs(r, y, y')` from `start` to `r_end`, recording every
/// accepted step (both endpoints included).
pub fn integrate_ode<F>(rhs: F, start: OdeState, r_end: f64, cfg: &OdeConfig) -> Result<OdeSolution, NumericsError>
where
    F: Fn(f64, f64, f64) -> f64,
{
    integrate_ode_monitored(rhs, start, r_end, cfg, |_| true)
}

/// Like [`integrate_ode`], calling `monitor` after each accepted step; the
/// integration stops (status [`OdeStatus::Stopped`]) when it returns `false`.
pub fn integrate_ode_monitored<F, M>(
    rhs: F,
    start: OdeState,
    r_end: f64,
    cfg: &OdeConfig,
    mut monitor: M,
) -> Result<OdeSolution, NumericsError>
where
    F: Fn(f64, f64, f64) -> f64,
    M: FnMut(&OdeState) -> bool,
{
    validate_start(&start, r_end)?;
    cfg.validate()?;
    let mut stepper = Stepper { rhs, cfg: *cfg, h: cfg.h_init, steps: 0 };
    let mut states = vec![start];
    let mut s = start;
    while s.r < r_end {
        match stepper.step(s, r_end) {
            StepOutcome::Accepted(next) => {
                if !next.is_finite() || next.y.abs() > cfg.blowup {
                    return Ok(OdeSolution { states, status: OdeStatus::BlowUp });
                }
                states.push(next);
                s = next;
                if !monitor(&next) {
                    return Ok(OdeSolution { states, status: OdeStatus::Stopped });
                }
            }
            StepOutcome::Failed => return Ok(OdeSolution { states, status: OdeStatus::BlowUp }),
        }
    }
    Ok(OdeSolution { states, status: OdeStatus::Completed })
}

/// Integrates through the increasing radii `outputs` (all beyond `start.r`)
/// and records the state exactly at each of them. Stops early on divergence.
pub fn integrate_ode_at<F>(
    rhs: F,
    start: OdeState,
    outputs: &[f64],
    cfg: &OdeConfig,
) -> Result<OdeSolution, NumericsError>
where
    F: Fn(f64, f64, f64) -> f64,
{
    let Some(&r_end) = outputs.last() else {
        return Err(NumericsError::InvalidInput("no output radii".into()));
    };
    validate_start(&start, r_end)?;
    cfg.validate()?;
    if outputs.windows(2).any(|w| w[1] <= w[0]) || outputs[0] <= start.r {
        return Err(NumericsError::InvalidInput("output radii must increase past the start".into()));
    }
    let mut stepper = Stepper { rhs, cfg: *cfg, h: cfg.h_init, steps: 0 };
    let mut states = Vec::with_capacity(outputs.len());
    let mut s = start;
    for &target in outputs {
        while s.r < target {
            match stepper.step(s, target) {
                StepOutcome::Accepted(next) => {
                    if !next.is_finite() || next.y.abs() > cfg.blowup {
                        return Ok(OdeSolution { states, status: OdeStatus::BlowUp });
                    }
                    s = next;
                }
                StepOutcome::Failed => return Ok(OdeSolution { states, status: OdeStatus::BlowUp }),
            }
        }
        states.push(s);
    }
    Ok(OdeSolution { states, status: OdeStatus::Completed })
}
