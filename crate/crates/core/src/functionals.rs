//! Heat kernels, bridge weights and the functionals `Γ`, `Γ_δ`, `Ψ_ε`,
//! `φ_{∞,ε}` on measures, plus relative-entropy diagnostics on pair clouds.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustc_hash::FxHashMap;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, gamma_ur};
use thiserror::Error;

use crate::exec::Exec;
use crate::measures::{dist2, norm2, MeasureError, PairEmpiricalMeasure};
use crate::numerics::{adaptive_simpson, gauss_legendre};
use crate::rate_function::sphere_area;
use crate::rng::stream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("time parameter must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// `p_s(x) = (2πs)^{−d/2} e^{−|x|²/(2s)}`, `d = x.len()`.
pub fn heat_kernel(s: f64, x: &[f64]) -> Result<f64, FunctionalError> {
    if !(s > 0.0) {
        return Err(FunctionalError::NonPositiveTime(s));
    }
    Ok(gauss_density(s, norm2(x), x.len()))
}

fn gauss_density(var: f64, r2: f64, d: usize) -> f64 {
    (2.0 * PI * var).powf(-(d as f64) / 2.0) * (-r2 / (2.0 * var)).exp()
}

/// Log of `p_{s/d}(−x) p_{(ε−s)/d}(y) / p_{ε/d}(y − x)`.
fn bridge_log_integrand(s: f64, eps: f64, d: f64, x2: f64, y2: f64, xy2: f64) -> f64 {
    0.5 * d * (d / (2.0 * PI)).ln() + 0.5 * d * (eps / (s * (eps - s))).ln()
        - d * x2 / (2.0 * s)
        - d * y2 / (2.0 * (eps - s))
        + d * xy2 / (2.0 * eps)
}

/// `φ_ε(x, y) = ∫_0^ε p_{s/d}(−x) p_{(ε−s)/d}(y) / p_{ε/d}(y − x) ds`, by
/// adaptive quadrature in `s`. Infinite when `x = 0` or `y = 0`.
pub fn bridge_weight(x: &[f64], y: &[f64], eps: f64) -> Result<f64, FunctionalError> {
    bridge_weight_on(x, y, eps, 0.0)
}

/// The same integral restricted to `s ∈ [η, ε − η]`.
pub fn bridge_weight_truncated(x: &[f64], y: &[f64], eps: f64, eta: f64) -> Result<f64, FunctionalError> {
    if !(eta > 0.0 && eta < eps / 2.0) {
        return Err(FunctionalError::InvalidInput(format!("truncation must lie in (0, eps/2), got {eta}")));
    }
    bridge_weight_on(x, y, eps, eta)
}

fn bridge_weight_on(x: &[f64], y: &[f64], eps: f64, eta: f64) -> Result<f64, FunctionalError> {
    if !(eps > 0.0) {
        return Err(FunctionalError::NonPositiveTime(eps));
    }
    if x.len() != y.len() {
        return Err(FunctionalError::InvalidInput("points of different dimension".into()));
    }
    let (x2, y2) = (norm2(x), norm2(y));
    if eta == 0.0 && (x2 == 0.0 || y2 == 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok(bridge_integral(eps, eta, x.len() as f64, x2, y2, dist2(x, y)))
}

fn bridge_integral(eps: f64, eta: f64, d: f64, x2: f64, y2: f64, xy2: f64) -> f64 {
    let (lo, hi) = (eta, eps - eta);
    let f = |s: f64| {
        if s <= 0.0 || s >= eps {
            0.0
        } else {
            bridge_log_integrand(s, eps, d, x2, y2, xy2).exp()
        }
    };
    // The exponent is maximal near s* = ε|x|/(|x|+|y|); split there.
    let (nx, ny) = (x2.sqrt(), y2.sqrt());
    let s_star = (eps * nx / (nx + ny)).clamp(lo, hi);
    let peak = [s_star, 0.5 * (lo + hi)].iter().map(|&s| f(s)).fold(0.0, f64::max);
    if peak == 0.0 {
        return 0.0;
    }
    let pieces = 16;
    let tol = 1e-12 * peak * eps / (2 * pieces) as f64;
    let mut total = 0.0;
    for (a, b) in [(lo, s_star), (s_star, hi)] {
        if b <= a {
            continue;
        }
        for k in 0..pieces {
            let (u0, u1) = (k as f64 / pieces as f64, (k + 1) as f64 / pieces as f64);
            let (p, q) = (a + (b - a) * u0, a + (b - a) * u1);
            total += adaptive_simpson(f, p, q, tol, 1 << 14).0;
        }
    }
    total
}

/// Closed form of the bridge weight in `d = 3`:
/// `φ_ε(x, y) = (3/2π)(1/|x| + 1/|y|) exp(−(3/ε)(|x||y| + ⟨x, y⟩))`.
pub fn bridge_weight_3d(x: &[f64], y: &[f64], eps: f64) -> f64 {
    let (nx, ny) = (norm2(x).sqrt(), norm2(y).sqrt());
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    3.0 / (2.0 * PI) * (1.0 / nx + 1.0 / ny) * (-(3.0 / eps) * (nx * ny + dot)).exp()
}

/// Monte Carlo settings. Samples are drawn in chunks; chunk `j` uses random
/// stream `j` of `seed`, so results do not depend on the worker count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    pub chunk: usize,
    pub exec: Exec,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { samples: 100_000, seed: 0, chunk: 4096, exec: Exec::Parallel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    /// `|a − b| ≤ k·√(σ_a² + σ_b²)`.
    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * (self.stderr.powi(2) + other.stderr.powi(2)).sqrt()
    }
}

/// Runs `draw` over chunked streams and reduces `(Σv, Σv²)` in chunk order.
pub(crate) fn chunked_mc<F>(cfg: &McConfig, draw: F) -> McEstimate
where
    F: Fn(&mut crate::rng::StreamRng) -> f64 + Sync + Send,
{
    let chunk = cfg.chunk.max(1);
    let chunks = cfg.samples.div_ceil(chunk);
    let parts = cfg.exec.map_range(chunks, |j| {
        let mut rng = stream(cfg.seed, j as u64);
        let count = chunk.min(cfg.samples - j * chunk);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..count {
            let v = draw(&mut rng);
            s += v;
            s2 += v * v;
        }
        (s, s2)
    });
    let (s, s2) = parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let n = cfg.samples as f64;
    let mean = s / n;
    let var = if cfg.samples > 1 { ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0) } else { 0.0 };
    McEstimate { value: mean, stderr: (var / n).sqrt(), samples: cfg.samples }
}

/// `T(z) = Σ_i w_i φ_ε(x_i − z, y_i − z)`.
pub fn pair_weight_field(mu: &PairEmpiricalMeasure, z: &[f64], eps: f64) -> f64 {
    let d = mu.dim();
    let mut u = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..mu.len() {
        for k in 0..d {
            u[k] = mu.x(i)[k] - z[k];
            v[k] = mu.y(i)[k] - z[k];
        }
        let w = mu.weights()[i];
        if d == 3 {
            total += w * bridge_weight_3d(&u, &v, eps);
        } else {
            let (u2, v2) = (norm2(&u), norm2(&v));
            if u2 == 0.0 || v2 == 0.0 {
                return f64::INFINITY;
            }
            let envelope = d as f64 / (2.0 * eps) * (dist2(&u, &v) - (u2.sqrt() + v2.sqrt()).powi(2));
            if envelope < -60.0 {
                continue;
            }
            total += w * bridge_integral(eps, 0.0, d as f64, u2, v2, dist2(&u, &v));
        }
    }
    total
}

/// `φ_{∞,ε}(μ) = ∫ (1 − exp(−(κ/ε) T(z))) dz` by importance sampling.
///
/// `z` is drawn from `T/(εW)`, the bridge law: an atom with probability
/// `∝ w`, a uniform time `s ∈ (0, ε)`, then the Brownian-bridge position
/// from `x` to `y` at time `s`. Each draw contributes
/// `εW (1 − e^{−κT/ε}) / T ≤ κW`.
pub fn phi_infty(
    mu: &PairEmpiricalMeasure,
    eps: f64,
    kappa: f64,
    mc: &McConfig,
) -> Result<McEstimate, FunctionalError> {
    if !(eps > 0.0) {
        return Err(FunctionalError::NonPositiveTime(eps));
    }
    if mu.is_empty() {
        return Err(FunctionalError::InvalidInput("empty pair measure".into()));
    }
    let d = mu.dim();
    let total = mu.total_mass();
    let mut cumulative = Vec::with_capacity(mu.len());
    let mut acc = 0.0;
    for w in mu.weights() {
        acc += w;
        cumulative.push(acc);
    }
    Ok(chunked_mc(mc, |rng| {
        let u: f64 = rng.random::<f64>() * total;
        let i = cumulative.partition_point(|&c| c <= u).min(mu.len() - 1);
        let s = eps * rng.random::<f64>();
        let sd = (s * (eps - s) / (d as f64 * eps)).sqrt();
        let (x, y) = (mu.x(i), mu.y(i));
        let z: Vec<f64> = (0..d)
            .map(|k| {
                let g: f64 = rng.sample(StandardNormal);
                x[k] + s / eps * (y[k] - x[k]) + sd * g
            })
            .collect();
        let t = pair_weight_field(mu, &z, eps);
        if t > 0.0 {
            eps * total * -(-kappa * t / eps).exp_m1() / t
        } else {
            kappa * total
        }
    }))
}

/// Radially symmetric piece of a density: mass `m` times the uniform mixture
/// of centred Gaussians with variance in `[var_lo, var_hi]`. A Gaussian has
/// `var_lo = var_hi`; an atom has both zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RadialPiece {
    pub center: Vec<f64>,
    pub mass: f64,
    pub var_lo: f64,
    pub var_hi: f64,
}

impl RadialPiece {
    pub fn gaussian(center: Vec<f64>, mass: f64, var: f64) -> Self {
        Self { center, mass, var_lo: var, var_hi: var }
    }

    pub fn atom(center: Vec<f64>, mass: f64) -> Self {
        Self { center, mass, var_lo: 0.0, var_hi: 0.0 }
    }

    pub fn is_atom(&self) -> bool {
        self.var_hi == 0.0
    }

    /// Density at distance `r` from the centre; zero for atoms.
    pub fn density_at_radius(&self, r: f64, d: usize) -> f64 {
        let (v0, v1) = (self.var_lo, self.var_hi);
        if self.is_atom() {
            return 0.0;
        }
        let r2 = r * r;
        if v0 == 0.0 && r == 0.0 {
            return f64::INFINITY;
        }
        if v1 - v0 <= 1e-14 * v1 {
            return self.mass * gauss_density(v1, r2, d);
        }
        let df = d as f64;
        let w0 = if v0 > 0.0 { r2 / (2.0 * v0) } else { f64::INFINITY };
        if w0 < 1e-3 {
            // Small radius: expand e^{−r²/2v} to second order.
            let moment = |p: f64| {
                let e = 1.0 - df / 2.0 - p;
                (v1.powf(e) - v0.powf(e)) / e
            };
            let val = moment(0.0) - r2 / 2.0 * moment(1.0) + r2 * r2 / 8.0 * moment(2.0);
            return self.mass * (2.0 * PI).powf(-df / 2.0) * val / (v1 - v0);
        }
        // ∫_{v0}^{v1} (2πv)^{−d/2} e^{−r²/2v} dv through the upper incomplete gamma function.
        let a = df / 2.0 - 1.0;
        let w1 = r2 / (2.0 * v1);
        let q0 = if w0.is_finite() { gamma_ur(a, w0) } else { 0.0 };
        let q1 = gamma_ur(a, w1);
        let integral = 0.5 * PI.powf(-df / 2.0) * r.powf(2.0 - df) * gamma(a) * (q1 - q0);
        self.mass * integral / (v1 - v0)
    }

    fn smoothed(&self, t: f64) -> Self {
        Self { center: self.center.clone(), mass: self.mass, var_lo: self.var_lo + t, var_hi: self.var_hi + t }
    }
}

/// Density of a sub-probability measure on `R^d` as a sum of radial pieces.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DensityField {
    pub d: usize,
    pub pieces: Vec<RadialPiece>,
}

impl DensityField {
    pub fn new(d: usize, pieces: Vec<RadialPiece>) -> Result<Self, FunctionalError> {
        for p in &pieces {
            if p.center.len() != d {
                return Err(FunctionalError::InvalidInput(format!("piece centre has dimension {}", p.center.len())));
            }
            if !(p.mass >= 0.0) || !(p.var_lo >= 0.0) || p.var_hi < p.var_lo {
                return Err(FunctionalError::InvalidInput(format!("bad piece {p:?}")));
            }
        }
        let field = Self { d, pieces };
        if field.mass() > 1.0 + 1e-12 {
            return Err(FunctionalError::InvalidInput(format!("total mass {} exceeds 1", field.mass())));
        }
        Ok(field)
    }

    /// Standard Gaussian `N(0, var·I)` of the given mass.
    pub fn gaussian(d: usize, mass: f64, var: f64) -> Result<Self, FunctionalError> {
        Self::new(d, vec![RadialPiece::gaussian(vec![0.0; d], mass, var)])
    }

    pub fn empty(d: usize) -> Self {
        Self { d, pieces: Vec::new() }
    }

    pub fn mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass).sum()
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.pieces.iter().map(|p| p.density_at_radius(dist2(x, &p.center).sqrt(), self.d)).sum()
    }

    pub fn translated(&self, v: &[f64]) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| RadialPiece { center: p.center.iter().zip(v).map(|(c, s)| c + s).collect(), ..p.clone() })
            .collect();
        Self { d: self.d, pieces }
    }

    /// `p_t * α`.
    pub fn smoothed(&self, t: f64) -> Result<Self, FunctionalError> {
        if !(t > 0.0) {
            return Err(FunctionalError::NonPositiveTime(t));
        }
        Ok(Self { d: self.d, pieces: self.pieces.iter().map(|p| p.smoothed(t)).collect() })
    }

    /// `(1/t) ∫_0^t p_u * α du`; only for Gaussian and atomic pieces.
    pub fn time_averaged(&self, t: f64) -> Result<Self, FunctionalError> {
        if !(t > 0.0) {
            return Err(FunctionalError::NonPositiveTime(t));
        }
        let mut pieces = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            if p.var_hi != p.var_lo {
                return Err(FunctionalError::InvalidInput("time average of an already averaged piece".into()));
            }
            pieces.push(RadialPiece { center: p.center.clone(), mass: p.mass, var_lo: p.var_lo, var_hi: p.var_lo + t });
        }
        Ok(Self { d: self.d, pieces })
    }
}

/// Resolution of the spatial integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    /// Absolute tolerance of radial integrals.
    pub radial_tol: f64,
    /// Approximate number of nodes of the tensor-product rule for multi-centre fields.
    pub tensor_budget: usize,
    /// Box padding in standard deviations of the widest piece.
    pub pad_sd: f64,
    pub exec: Exec,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { radial_tol: 1e-12, tensor_budget: 2_000_000, pad_sd: 10.0, exec: Exec::Parallel }
    }
}

/// `∫ (1 − e^{−κ ρ(x)}) dx` for the field density `ρ`.
pub fn saturation_integral(field: &DensityField, kappa: f64, cfg: &QuadConfig) -> f64 {
    let smooth: Vec<&RadialPiece> = field.pieces.iter().filter(|p| !p.is_atom() && p.mass > 0.0).collect();
    match smooth.len() {
        0 => 0.0,
        1 => radial_saturation(smooth[0], field.d, kappa, cfg),
        _ => tensor_saturation(&smooth, field.d, kappa, cfg),
    }
}

fn radial_saturation(piece: &RadialPiece, d: usize, kappa: f64, cfg: &QuadConfig) -> f64 {
    let r_max = cfg.pad_sd * piece.var_hi.sqrt();
    let f = |r: f64| r.powi(d as i32 - 1) * -(-kappa * piece.density_at_radius(r, d)).exp_m1();
    let pieces = 64;
    let mut total = 0.0;
    for k in 0..pieces {
        let (a, b) = (r_max * k as f64 / pieces as f64, r_max * (k + 1) as f64 / pieces as f64);
        total += adaptive_simpson(f, a, b, cfg.radial_tol / pieces as f64, 1 << 12).0;
    }
    sphere_area(d) * total
}

fn tensor_saturation(pieces: &[&RadialPiece], d: usize, kappa: f64, cfg: &QuadConfig) -> f64 {
    let order = 8;
    let per_axis = ((cfg.tensor_budget as f64).powf(1.0 / d as f64) / order as f64).floor().max(2.0) as usize;
    let pad = cfg.pad_sd * pieces.iter().map(|p| p.var_hi.sqrt()).fold(0.0, f64::max);
    let (gx, gw) = gauss_legendre(order);
    let mut axes = Vec::with_capacity(d);
    for k in 0..d {
        let lo = pieces.iter().map(|p| p.center[k]).fold(f64::INFINITY, f64::min) - pad;
        let hi = pieces.iter().map(|p| p.center[k]).fold(f64::NEG_INFINITY, f64::max) + pad;
        let h = (hi - lo) / per_axis as f64;
        let mut nodes = Vec::with_capacity(per_axis * order);
        for j in 0..per_axis {
            let mid = lo + (j as f64 + 0.5) * h;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push((mid + 0.5 * h * x, 0.5 * h * w));
            }
        }
        axes.push(nodes);
    }
    let n0 = axes[0].len();
    let slabs = cfg.exec.map_range(n0, |i| {
        let mut idx = vec![0usize; d];
        idx[0] = i;
        let mut x = vec![0.0; d];
        let mut sum = 0.0;
        loop {
            let mut w = 1.0;
            for k in 0..d {
                x[k] = axes[k][idx[k]].0;
                w *= axes[k][idx[k]].1;
            }
            let rho: f64 = pieces.iter().map(|p| p.density_at_radius(dist2(&x, &p.center).sqrt(), d)).sum();
            sum += w * -(-kappa * rho).exp_m1();
            // Odometer over axes 1..d.
            let mut k = d - 1;
            loop {
                if k == 0 {
                    return sum;
                }
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
                k -= 1;
            }
        }
    });
    slabs.iter().sum()
}

/// `Γ(α) = ∫ (1 − e^{−κ α(x)}) dx`.
pub fn gamma_of(field: &DensityField, kappa: f64, cfg: &QuadConfig) -> f64 {
    saturation_integral(field, kappa, cfg)
}

/// `Γ̃(ξ) = Σ_i Γ(α_i) + κ(1 − Σ_i α_i(R^d))`.
pub fn gamma_tilde(components: &[DensityField], kappa: f64, cfg: &QuadConfig) -> f64 {
    let mass: f64 = components.iter().map(|c| c.mass()).sum();
    components.iter().map(|c| gamma_of(c, kappa, cfg)).sum::<f64>() + kappa * (1.0 - mass)
}

/// `Ψ_ε(α) = ∫ (1 − exp(−(κ/ε) ∫_0^ε (p_{s/d} * α)(x) ds)) dx`.
pub fn psi_eps(field: &DensityField, eps: f64, kappa: f64, cfg: &QuadConfig) -> Result<f64, FunctionalError> {
    let averaged = field.time_averaged(eps / field.d as f64)?;
    Ok(saturation_integral(&averaged, kappa, cfg))
}

/// `Γ̃_δ(ξ) = Σ_i ∫ (1 − e^{−κ (p_{δ/d} * α_i)(x)}) dx + κ(1 − Σ_i α_i(R^d))`.
pub fn gamma_delta(
    components: &[DensityField],
    delta: f64,
    kappa: f64,
    cfg: &QuadConfig,
) -> Result<f64, FunctionalError> {
    let mut total = 0.0;
    let mut mass = 0.0;
    for c in components {
        total += saturation_integral(&c.smoothed(delta / c.d as f64)?, kappa, cfg);
        mass += c.mass();
    }
    Ok(total + kappa * (1.0 - mass))
}

/// `h(μ|ν) = Σ μ_c ln(μ_c/ν_c)` over matching cells; `+∞` if some cell has
/// `μ_c > 0 = ν_c`.
pub fn relative_entropy(mu: &[f64], nu: &[f64]) -> Result<f64, FunctionalError> {
    if mu.len() != nu.len() {
        return Err(FunctionalError::InvalidInput(format!("histograms of length {} and {}", mu.len(), nu.len())));
    }
    let mut h = 0.0;
    for (&m, &n) in mu.iter().zip(nu) {
        if m < 0.0 || n < 0.0 {
            return Err(FunctionalError::InvalidInput("negative histogram entry".into()));
        }
        if m > 0.0 {
            if n == 0.0 {
                return Ok(f64::INFINITY);
            }
            h += m * (m / n).ln();
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinConfig {
    /// Edge length of the cubic cells, anchored at the origin.
    pub width: f64,
    /// Marginals farther apart than this (total variation) are flagged.
    pub marginal_tol: f64,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self { width: 1.0, marginal_tol: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PairDiagnostic {
    /// Binned `h(μ | μ₁ ⊗ π_t)`.
    pub entropy: f64,
    /// Total-variation distance between the binned first and second marginals.
    pub marginal_gap: f64,
    pub flagged: bool,
    pub occupied_cells: usize,
}

impl PairDiagnostic {
    /// The pair rate: `+∞` when the marginals disagree.
    pub fn rate(&self) -> f64 {
        if self.flagged {
            f64::INFINITY
        } else {
            self.entropy
        }
    }
}

fn normal_cell_prob(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    let s = sd * std::f64::consts::SQRT_2;
    let (a, b) = ((lo - mean) / s, (hi - mean) / s);
    // Difference of tails on the side away from the mean for accuracy.
    if a >= 0.0 {
        0.5 * (erfc(a) - erfc(b))
    } else if b <= 0.0 {
        0.5 * (erfc(-b) - erfc(-a))
    } else {
        1.0 - 0.5 * (erfc(-a) + erfc(b))
    }
}

/// Binned relative entropy of `μ` with respect to `μ₁ ⊗ π_t`, where `π_t`
/// is the Brownian transition kernel with variance `t` per coordinate.
/// The reference mass of a cell is computed exactly from the atoms of `μ₁`.
pub fn pair_rate_diagnostic(
    mu: &PairEmpiricalMeasure,
    t: f64,
    bins: &BinConfig,
) -> Result<PairDiagnostic, FunctionalError> {
    if !(t > 0.0) {
        return Err(FunctionalError::NonPositiveTime(t));
    }
    if !(bins.width > 0.0) {
        return Err(FunctionalError::InvalidInput(format!("bin width must be positive, got {}", bins.width)));
    }
    let d = mu.dim();
    let cell = |p: &[f64]| -> Vec<i64> { p.iter().map(|c| (c / bins.width).floor() as i64).collect() };
    // Atoms grouped by first-coordinate cell; target mass per (x-cell, y-cell).
    let mut by_x: FxHashMap<Vec<i64>, Vec<usize>> = FxHashMap::default();
    let mut target: FxHashMap<(Vec<i64>, Vec<i64>), f64> = FxHashMap::default();
    let mut m1: FxHashMap<Vec<i64>, f64> = FxHashMap::default();
    let mut m2: FxHashMap<Vec<i64>, f64> = FxHashMap::default();
    for i in 0..mu.len() {
        let (cx, cy) = (cell(mu.x(i)), cell(mu.y(i)));
        let w = mu.weights()[i];
        by_x.entry(cx.clone()).or_default().push(i);
        *m1.entry(cx.clone()).or_default() += w;
        *m2.entry(cy.clone()).or_default() += w;
        *target.entry((cx, cy)).or_default() += w;
    }
    let sd = t.sqrt();
    let mut keys: Vec<&(Vec<i64>, Vec<i64>)> = target.keys().collect();
    keys.sort();
    let mut entropy = 0.0;
    for key in keys {
        let m = target[key];
        let (cx, cy) = key;
        let mut reference = 0.0;
        for &i in &by_x[cx] {
            let x = mu.x(i);
            let mut p = mu.weights()[i];
            for k in 0..d {
                let lo = cy[k] as f64 * bins.width;
                p *= normal_cell_prob(lo, lo + bins.width, x[k], sd);
            }
            reference += p;
        }
        if reference == 0.0 {
            entropy = f64::INFINITY;
            break;
        }
        entropy += m * (m / reference).ln();
    }
    let mut gap = 0.0;
    for (c, a) in &m1 {
        gap += (a - m2.get(c).copied().unwrap_or(0.0)).abs();
    }
    for (c, b) in &m2 {
        if !m1.contains_key(c) {
            gap += b;
        }
    }
    gap *= 0.5;
    Ok(PairDiagnostic { entropy, marginal_gap: gap, flagged: gap > bins.marginal_tol, occupied_cells: target.len() })
}
