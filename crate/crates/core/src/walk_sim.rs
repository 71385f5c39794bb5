//! Simple random walk on `Z^d`: range, skeletons, escape probability,
//! rejection sampling of the lower-deviation event, and exact small-scale
//! distributions by dynamic programming.

use std::f64::consts::PI;

use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::exec::Exec;
use crate::functionals::{phi_infty, FunctionalError, McConfig, McEstimate};
use crate::measures::{EmpiricalMeasure, PairEmpiricalMeasure};
use crate::rng::stream;

pub const MAX_DIM: usize = 8;

/// Largest dynamic-programming table, in sites times steps.
const DP_CELL_CAP: usize = 60_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WalkError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("conditioning event null: P_x(S_l = y) = 0")]
    NullConditioning,
    #[error("out of exact range: {0}")]
    OutOfRange(String),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
}

/// Walk length, skeleton scale and seed. `ell = ⌊ε n^{2/d}⌋`, and `n` is
/// rounded down to a multiple of `ell`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WalkParams {
    pub d: usize,
    pub n: u64,
    pub eps: f64,
    pub seed: u64,
    pub ell: u64,
    pub m: u64,
}

impl WalkParams {
    pub fn new(d: usize, n: u64, eps: f64, seed: u64) -> Result<Self, WalkError> {
        if !(3..=MAX_DIM).contains(&d) {
            return Err(WalkError::InvalidParams(format!("dimension must be in 3..={MAX_DIM}, got {d}")));
        }
        if n == 0 {
            return Err(WalkError::InvalidParams("n must be at least 1".into()));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(WalkError::InvalidParams(format!("eps must be positive, got {eps}")));
        }
        // Guard the floor against n^{2/d} landing just below an integer.
        let ell = (eps * (n as f64).powf(2.0 / d as f64) * (1.0 + 1e-12)).floor() as u64;
        if ell == 0 {
            return Err(WalkError::InvalidParams(format!("eps n^(2/d) < 1 for n = {n}, eps = {eps}")));
        }
        let m = n / ell;
        Ok(Self { d, n: m * ell, eps, seed, ell, m })
    }

    /// `n^{1/d}`, the skeleton length scale.
    pub fn scale(&self) -> f64 {
        (self.n as f64).powf(1.0 / self.d as f64)
    }
}

/// Summary of one walk.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkRecord {
    pub params: WalkParams,
    /// Stream index of the walk under `params.seed`.
    pub index: u64,
    /// `R_n = #{S_1, …, S_n}`.
    pub range: u64,
    /// `S_{iℓ}` for `i = 0..=M`, flattened.
    pub skeleton: Vec<i64>,
    pub accepted: bool,
}

impl WalkRecord {
    pub fn skeleton_point(&self, i: usize) -> &[i64] {
        let d = self.params.d;
        &self.skeleton[i * d..(i + 1) * d]
    }

    pub fn skeleton_len(&self) -> usize {
        self.skeleton.len() / self.params.d
    }

    /// `Ŝ_i = S_{iℓ} / n^{1/d}`.
    pub fn scaled_skeleton(&self) -> Vec<Vec<f64>> {
        let s = self.params.scale();
        (0..self.skeleton_len()).map(|i| self.skeleton_point(i).iter().map(|&c| c as f64 / s).collect()).collect()
    }

    pub fn range_fraction(&self) -> f64 {
        self.range as f64 / self.params.n as f64
    }
}

enum Visited {
    Packed { set: FxHashSet<u128>, bits: u32 },
    Wide(FxHashSet<[i32; MAX_DIM]>),
}

impl Visited {
    fn new(d: usize, n: u64) -> Self {
        let bits = (128 / d) as u32;
        let cap = (n as usize).min(1 << 26);
        if n < (1u64 << (bits - 1).min(63)) {
            let mut set = FxHashSet::default();
            set.reserve(cap);
            Visited::Packed { set, bits }
        } else {
            let mut set = FxHashSet::default();
            set.reserve(cap);
            Visited::Wide(set)
        }
    }

    fn insert(&mut self, pos: &[i64; MAX_DIM], d: usize) {
        match self {
            Visited::Packed { set, bits } => {
                let offset = 1i64 << (*bits - 1);
                let mut key = 0u128;
                for &c in &pos[..d] {
                    key = (key << *bits) | (c + offset) as u128;
                }
                set.insert(key);
            }
            Visited::Wide(set) => {
                let mut key = [0i32; MAX_DIM];
                for k in 0..d {
                    key[k] = pos[k] as i32;
                }
                set.insert(key);
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Visited::Packed { set, .. } => set.len(),
            Visited::Wide(set) => set.len(),
        }
    }
}

/// Runs a walk whose step `k` moves along direction `next()`, where
/// direction `2j` is `+e_j` and `2j + 1` is `−e_j`.
pub fn simulate_steps(params: &WalkParams, index: u64, mut next: impl FnMut() -> usize) -> WalkRecord {
    let d = params.d;
    let mut pos = [0i64; MAX_DIM];
    let mut visited = Visited::new(d, params.n);
    let mut skeleton = Vec::with_capacity((params.m as usize + 1) * d);
    skeleton.extend_from_slice(&pos[..d]);
    for step in 1..=params.n {
        let dir = next();
        debug_assert!(dir < 2 * d);
        pos[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
        visited.insert(&pos, d);
        if step % params.ell == 0 {
            skeleton.extend_from_slice(&pos[..d]);
        }
    }
    WalkRecord { params: *params, index, range: visited.len() as u64, skeleton, accepted: false }
}

/// Walk number `index` of the experiment, drawn from stream `index` of the seed.
pub fn simulate(params: &WalkParams, index: u64) -> WalkRecord {
    let mut rng = stream(params.seed, index);
    let dirs = 2 * params.d;
    simulate_steps(params, index, || rng.random_range(0..dirs))
}

/// Walks `0..count`, in index order.
pub fn simulate_batch(params: &WalkParams, count: usize, exec: Exec) -> Vec<WalkRecord> {
    exec.map_range(count, |i| simulate(params, i as u64))
}

/// Mean of `R_n/n` and its standard error, summed in record order.
pub fn range_summary(records: &[WalkRecord]) -> (f64, f64) {
    let k = records.len() as f64;
    let mean = records.iter().map(|r| r.range_fraction()).sum::<f64>() / k;
    if records.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = records.iter().map(|r| (r.range_fraction() - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// `L_{M,ε} = (1/M) Σ_{0≤i<M} δ_{Ŝ_i}` and `L^{(2)}_{M,ε} = (1/M) Σ_{0<i≤M} δ_{(Ŝ_{i−1}, Ŝ_i)}`.
pub fn skeleton_measures(record: &WalkRecord) -> (EmpiricalMeasure, PairEmpiricalMeasure) {
    let d = record.params.d;
    let pts = record.scaled_skeleton();
    let m = pts.len() - 1;
    let w = 1.0 / m as f64;
    let sites = EmpiricalMeasure::from_flat(d, pts[..m].concat(), vec![w; m]);
    let pairs = PairEmpiricalMeasure::from_flat(d, pts[..m].concat(), pts[1..].concat(), vec![w; m]);
    (sites, pairs)
}

/// `μ({(x, y) : |x − y| ≥ a})`.
pub fn pair_displacement_tail(mu: &PairEmpiricalMeasure, a: f64) -> f64 {
    mu.displacement_tail(a)
}

/// Outcome of rejection sampling `{R_n ≤ bn}`.
#[derive(Debug, Clone)]
pub struct ConditionedRun {
    pub accepted: Vec<WalkRecord>,
    pub attempts: u64,
    pub rate: f64,
    /// 95% Wilson score interval for the acceptance probability.
    pub wilson: (f64, f64),
}

impl ConditionedRun {
    /// Budget spent without a single acceptance.
    pub fn exhausted(&self) -> bool {
        self.accepted.is_empty()
    }
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Plain rejection sampling of walks with `R_n ≤ b n`, at most `budget`
/// attempts. Attempts run in fixed chunks of `chunk` walks; with a `target`
/// the run stops after the first chunk that reaches it, so the outcome does
/// not depend on the worker count.
pub fn conditioned_sample(
    params: &WalkParams,
    b: f64,
    budget: u64,
    target: Option<usize>,
    chunk: usize,
    exec: Exec,
) -> Result<ConditionedRun, WalkError> {
    if !(b > 0.0) {
        return Err(WalkError::InvalidParams(format!("b must be positive, got {b}")));
    }
    let threshold = b * params.n as f64;
    let chunk = chunk.max(1) as u64;
    let mut accepted = Vec::new();
    let mut attempts = 0;
    while attempts < budget {
        let size = chunk.min(budget - attempts);
        let start = attempts;
        let batch = exec.map_range(size as usize, |i| {
            let mut r = simulate(params, start + i as u64);
            r.accepted = r.range as f64 <= threshold;
            r.accepted.then_some(r)
        });
        accepted.extend(batch.into_iter().flatten());
        attempts += size;
        if target.is_some_and(|t| accepted.len() >= t) {
            break;
        }
    }
    let k = accepted.len() as u64;
    Ok(ConditionedRun {
        rate: k as f64 / attempts.max(1) as f64,
        wilson: wilson_interval(k, attempts),
        accepted,
        attempts,
    })
}

// ---------------------------------------------------------------------------
// Escape probability

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EscapeMethod {
    /// Exact `P(S_{2m} = 0)` for `2m ≤ n_max`, plus a local-CLT tail.
    GreenSeries { n_max: usize },
    /// Fraction of walks not back at the origin by `cutoff`, bias-corrected.
    MonteCarlo { walks: usize, cutoff: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EscapeEstimate {
    /// `κ_d`.
    pub value: f64,
    /// Error bar: standard error (Monte Carlo) or tail-model bound (series).
    pub error: f64,
    /// `G(0) = Σ_n P(S_n = 0)` (series only; `NaN` otherwise).
    pub green: f64,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0; n + 1];
    for k in 1..=n {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    lf
}

/// `P(S_{2h} = 0)` for `h = 0..=n_max/2` in `Z^d`, exact up to rounding.
///
/// With `Q_j(m)` the return probability of a walk that picks one of `j`
/// coordinates per step, `Q_j(m) = Σ_k C(m,k) j^{−k} (1 − 1/j)^{m−k} P₁(k) Q_{j−1}(m−k)`
/// and `P₁(2a) = C(2a, a) 2^{−2a}`.
pub fn return_probabilities(d: usize, n_max: usize, exec: Exec) -> Vec<f64> {
    let h_max = n_max / 2;
    let lf = ln_factorials(2 * h_max);
    let ln2 = 2f64.ln();
    let ln_p1: Vec<f64> = (0..=h_max).map(|a| lf[2 * a] - 2.0 * lf[a] - 2.0 * a as f64 * ln2).collect();
    let mut q: Vec<f64> = ln_p1.iter().map(|v| v.exp()).collect();
    for j in 2..=d {
        let (lp, lq) = ((1.0 / j as f64).ln(), ((j - 1) as f64 / j as f64).ln());
        let prev = q;
        q = exec.map_range(h_max + 1, |h| {
            let m = 2 * h;
            (0..=h)
                .map(|a| {
                    let k = 2 * a;
                    let ln_b = lf[m] - lf[k] - lf[m - k] + k as f64 * lp + (m - k) as f64 * lq;
                    (ln_b + ln_p1[a]).exp() * prev[h - a]
                })
                .sum()
        });
    }
    q
}

/// Hurwitz zeta `ζ(s, a) = Σ_{k≥0} (a + k)^{−s}` by Euler–Maclaurin.
fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    // Shift until the asymptotic series is accurate.
    let mut sum = 0.0;
    let mut a = a;
    while a < 50.0 {
        sum += a.powf(-s);
        a += 1.0;
    }
    sum + a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s) + s * a.powf(-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * a.powf(-s - 3.0) / 720.0
        + s * (s + 1.0) * (s + 2.0) * (s + 3.0) * (s + 4.0) * a.powf(-s - 5.0) / 30240.0
}

/// `Σ_{m ≥ m0} 2 (d/(4πm))^{d/2}`: local-CLT mass of `P(S_{2m} = 0)` beyond `m0`.
pub fn lclt_return_tail(d: usize, m0: usize) -> f64 {
    let df = d as f64;
    2.0 * (df / (4.0 * PI)).powf(df / 2.0) * hurwitz_zeta(df / 2.0, m0 as f64)
}

pub fn escape_probability(d: usize, method: EscapeMethod, exec: Exec) -> Result<EscapeEstimate, WalkError> {
    if !(3..=MAX_DIM).contains(&d) {
        return Err(WalkError::InvalidParams(format!("dimension must be in 3..={MAX_DIM}, got {d}")));
    }
    match method {
        EscapeMethod::GreenSeries { n_max } => {
            if n_max < 100 {
                return Err(WalkError::InvalidParams("green series needs n_max >= 100".into()));
            }
            let p = return_probabilities(d, n_max, exec);
            let h = p.len() - 1;
            let head: f64 = p.iter().sum();
            // P(S_{2m}=0) ≈ LCLT(m)(1 + c/m): fit c at the last exact term.
            let df = d as f64;
            let lclt = |m: f64| 2.0 * (df / (4.0 * PI * m)).powf(df / 2.0);
            let c = h as f64 * (p[h] / lclt(h as f64) - 1.0);
            let base = lclt_return_tail(d, h + 1);
            let correction = c * 2.0 * (df / (4.0 * PI)).powf(df / 2.0) * hurwitz_zeta(df / 2.0 + 1.0, (h + 1) as f64);
            let green = head + base + correction;
            let value = 1.0 / green;
            Ok(EscapeEstimate { value, error: correction.abs().max(f64::EPSILON * green) / (green * green), green })
        }
        EscapeMethod::MonteCarlo { walks, cutoff, seed } => {
            if walks < 2 || cutoff < 2 {
                return Err(WalkError::InvalidParams("monte carlo needs at least 2 walks and cutoff 2".into()));
            }
            let escaped = exec.map_range(walks, |i| {
                let mut rng = stream(seed, i as u64);
                let mut pos = [0i64; MAX_DIM];
                let mut away = 0usize;
                for _ in 0..cutoff {
                    let dir = rng.random_range(0..2 * d);
                    let step = if dir % 2 == 0 { 1 } else { -1 };
                    let old = pos[dir / 2];
                    pos[dir / 2] = old + step;
                    // Track the number of non-zero coordinates.
                    if old == 0 {
                        away += 1;
                    } else if old + step == 0 {
                        away -= 1;
                        if away == 0 {
                            return 0u64;
                        }
                    }
                }
                1u64
            });
            let k: u64 = escaped.iter().sum();
            let p = k as f64 / walks as f64;
            // P(first return > T) ≈ κ² Σ_{n > T} P(S_n = 0).
            let value = p - p * p * lclt_return_tail(d, cutoff / 2 + 1);
            let error = (p * (1.0 - p) / walks as f64).sqrt();
            Ok(EscapeEstimate { value, error, green: f64::NAN })
        }
    }
}

// ---------------------------------------------------------------------------
// Exact distributions on lattice boxes

/// The cube `[−R, R]^d` of `Z^d`, flattened with coordinate 0 fastest.
#[derive(Debug, Clone)]
pub struct LatticeBox {
    pub d: usize,
    pub radius: i64,
    side: usize,
    strides: [usize; MAX_DIM],
}

impl LatticeBox {
    pub fn new(d: usize, radius: i64) -> Self {
        let side = (2 * radius + 1) as usize;
        let mut strides = [0usize; MAX_DIM];
        let mut s = 1;
        for st in strides.iter_mut().take(d) {
            *st = s;
            s *= side;
        }
        Self { d, radius, side, strides }
    }

    pub fn len(&self) -> usize {
        self.side.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let mut idx = 0;
        for k in 0..self.d {
            if x[k].abs() > self.radius {
                return None;
            }
            idx += (x[k] + self.radius) as usize * self.strides[k];
        }
        Some(idx)
    }

    pub fn coords(&self, mut idx: usize) -> [i64; MAX_DIM] {
        let mut c = [0i64; MAX_DIM];
        for ck in c.iter_mut().take(self.d) {
            *ck = (idx % self.side) as i64 - self.radius;
            idx /= self.side;
        }
        c
    }

    /// One step of the walk: `dst(x) = (1/2d) Σ_{y∼x} src(y)`, zero outside the box.
    pub fn step(&self, src: &[f64], dst: &mut [f64]) {
        let w = 1.0 / (2 * self.d) as f64;
        let last = (self.side - 1) as i64;
        for (i, out) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut rest = i;
            for k in 0..self.d {
                let c = (rest % self.side) as i64;
                rest /= self.side;
                let s = self.strides[k];
                if c > 0 {
                    acc += src[i - s];
                }
                if c < last {
                    acc += src[i + s];
                }
            }
            let v = w * acc;
            *out = if v < 1e-300 { 0.0 } else { v };
        }
    }

    fn check_size(&self, steps: usize) -> Result<(), WalkError> {
        let cells = self.len().saturating_mul(steps.max(1));
        if cells > DP_CELL_CAP {
            return Err(WalkError::OutOfRange(format!("{} sites x {} steps exceeds the table cap", self.len(), steps)));
        }
        Ok(())
    }
}

/// `P(S_k = ·)` for `k = 0..=n` on the box of radius `n`.
fn distributions(d: usize, n: usize) -> Result<(LatticeBox, Vec<Vec<f64>>), WalkError> {
    let bx = LatticeBox::new(d, n as i64);
    bx.check_size(n + 1)?;
    let mut p = vec![0.0; bx.len()];
    p[bx.index(&[0; MAX_DIM]).expect("origin in box")] = 1.0;
    let mut out = vec![p];
    for _ in 0..n {
        let mut next = vec![0.0; bx.len()];
        bx.step(out.last().expect("non-empty"), &mut next);
        out.push(next);
    }
    Ok((bx, out))
}

/// `P(S_n = ·)` on the box of radius `n`.
pub fn exact_distribution(d: usize, n: usize) -> Result<(LatticeBox, Vec<f64>), WalkError> {
    let bx = LatticeBox::new(d, n as i64);
    bx.check_size(2)?;
    let mut p = vec![0.0; bx.len()];
    p[bx.index(&[0; MAX_DIM]).expect("origin in box")] = 1.0;
    let mut next = vec![0.0; bx.len()];
    for _ in 0..n {
        bx.step(&p, &mut next);
        std::mem::swap(&mut p, &mut next);
    }
    Ok((bx, p))
}

fn sub(a: &[i64], b: &[i64]) -> [i64; MAX_DIM] {
    let mut c = [0i64; MAX_DIM];
    for k in 0..a.len() {
        c[k] = a[k] - b[k];
    }
    c
}

/// `q_{ℓ,{z}}(x, y) = P_x(S_k = z for some k ∈ (0, ℓ] | S_ℓ = y)`.
pub fn bridge_hit_probability(x: &[i64], y: &[i64], ell: usize, z: &[i64]) -> Result<f64, WalkError> {
    let d = x.len();
    if y.len() != d || z.len() != d || !(1..=MAX_DIM).contains(&d) {
        return Err(WalkError::InvalidParams("points must share a dimension of at most 8".into()));
    }
    if ell == 0 {
        return Err(WalkError::InvalidParams("ell must be at least 1".into()));
    }
    let bx = LatticeBox::new(d, ell as i64);
    bx.check_size(2)?;
    let Some(target) = bx.index(&sub(y, x)) else {
        return Err(WalkError::NullConditioning);
    };
    let kill = bx.index(&sub(z, x));
    let origin = bx.index(&[0; MAX_DIM]).expect("origin in box");
    let mut free = vec![0.0; bx.len()];
    let mut avoid = vec![0.0; bx.len()];
    free[origin] = 1.0;
    avoid[origin] = 1.0;
    let mut tmp = vec![0.0; bx.len()];
    for _ in 0..ell {
        bx.step(&free, &mut tmp);
        std::mem::swap(&mut free, &mut tmp);
        bx.step(&avoid, &mut tmp);
        std::mem::swap(&mut avoid, &mut tmp);
        if let Some(k) = kill {
            avoid[k] = 0.0;
        }
    }
    let total = free[target];
    if total == 0.0 {
        return Err(WalkError::NullConditioning);
    }
    Ok((1.0 - avoid[target] / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionalMode {
    /// Exact product formula over lattice sites (small `ℓ` only).
    ExactTiny,
    /// `φ_{∞,ε}(L^{(2)}_{M,ε})` with the given `κ`.
    Continuum { kappa: f64, mc: McConfig },
}

/// Largest `ℓ` accepted by [`ConditionalMode::ExactTiny`].
pub const EXACT_TINY_MAX_ELL: u64 = 32;

/// `E(R_n | Ŝ)/n` for the skeleton of `record`.
///
/// Exact mode sums `1 − Π_i (1 − q_{ℓ,{z}}(S_{(i−1)ℓ}, S_{iℓ}))` over every
/// site `z` reachable by some segment. Hitting probabilities come from the
/// first-passage decomposition `P_x(hit z, S_ℓ = y) = Σ_k f_k(z − x) p_{ℓ−k}(y − z)`
/// with `f_k(u) = p_k(u) − Σ_{j<k} f_j(u) p_{k−j}(0)`.
pub fn conditional_range(record: &WalkRecord, mode: ConditionalMode) -> Result<McEstimate, WalkError> {
    match mode {
        ConditionalMode::Continuum { kappa, mc } => {
            let (_, pairs) = skeleton_measures(record);
            Ok(phi_infty(&pairs, record.params.eps, kappa, &mc)?)
        }
        ConditionalMode::ExactTiny => {
            let params = &record.params;
            if params.ell > EXACT_TINY_MAX_ELL {
                return Err(WalkError::OutOfRange(format!("ell = {} exceeds {EXACT_TINY_MAX_ELL}", params.ell)));
            }
            let (d, ell) = (params.d, params.ell as usize);
            let (bx, p) = distributions(d, ell)?;
            let origin = bx.index(&[0; MAX_DIM]).expect("origin in box");
            // First-passage probabilities f[k][u], k = 1..=ℓ.
            let mut f = vec![vec![0.0; bx.len()]; ell + 1];
            for k in 1..=ell {
                for u in 0..bx.len() {
                    let mut v = p[k][u];
                    for j in 1..k {
                        v -= f[j][u] * p[k - j][origin];
                    }
                    f[k][u] = v.max(0.0);
                }
            }
            let mut log_survival: FxHashMap<[i64; MAX_DIM], f64> = FxHashMap::default();
            for i in 1..record.skeleton_len() {
                let (x, y) = (record.skeleton_point(i - 1), record.skeleton_point(i));
                let v = sub(y, x);
                let total = bx.index(&v).map_or(0.0, |t| p[ell][t]);
                if total == 0.0 {
                    return Err(WalkError::NullConditioning);
                }
                for u in 0..bx.len() {
                    let cu = bx.coords(u);
                    let mut num = 0.0;
                    let rest = sub(&v[..d], &cu[..d]);
                    if let Some(r) = bx.index(&rest) {
                        for k in 1..=ell {
                            num += f[k][u] * p[ell - k][r];
                        }
                    }
                    if num == 0.0 {
                        continue;
                    }
                    let q = (num / total).min(1.0);
                    let mut z = [0i64; MAX_DIM];
                    for k in 0..d {
                        z[k] = x[k] + cu[k];
                    }
                    *log_survival.entry(z).or_insert(0.0) += (-q).ln_1p();
                }
            }
            let expected: f64 = log_survival.values().map(|ls| -ls.exp_m1()).sum();
            Ok(McEstimate { value: expected / params.n as f64, stderr: 0.0, samples: 0 })
        }
    }
}

/// Local CLT error for `P(S_n = ·)` in `Z^d`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LltReport {
    pub n: usize,
    pub d: usize,
    /// `sup_x |P(S_n = x) − 2 p_{n/d}(x)|` over sites with the parity of `n`.
    pub sup_error: f64,
    /// `n^{(d+2)/2} · sup_error`.
    pub scaled_error: f64,
    /// Largest probability found at a site of the wrong parity (must be 0).
    pub wrong_parity_mass: f64,
}

pub fn llt_error(n: usize, d: usize) -> Result<LltReport, WalkError> {
    if n == 0 || !(1..=MAX_DIM).contains(&d) {
        return Err(WalkError::InvalidParams(format!("need n >= 1 and d in 1..=8, got n = {n}, d = {d}")));
    }
    let (bx, p) = exact_distribution(d, n)?;
    let df = d as f64;
    let t = n as f64 / df;
    let mut sup: f64 = 0.0;
    let mut wrong: f64 = 0.0;
    for (i, &prob) in p.iter().enumerate() {
        let c = bx.coords(i);
        let l1: i64 = c[..d].iter().map(|v| v.abs()).sum();
        if (l1 - n as i64).rem_euclid(2) != 0 {
            wrong = wrong.max(prob);
            continue;
        }
        let r2: f64 = c[..d].iter().map(|&v| (v * v) as f64).sum();
        let gauss = 2.0 * (2.0 * PI * t).powf(-df / 2.0) * (-r2 / (2.0 * t)).exp();
        sup = sup.max((prob - gauss).abs());
    }
    Ok(LltReport {
        n,
        d,
        sup_error: sup,
        scaled_error: (n as f64).powf((df + 2.0) / 2.0) * sup,
        wrong_parity_mass: wrong,
    })
}

/// `Ξ(C) = ln C + 1/C − 1`.
pub fn binomial_xi(c: f64) -> f64 {
    c.ln() + 1.0 / c - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BinomialCheck {
    pub m: u64,
    pub eps0: f64,
    pub c: f64,
    /// `P(Bin(M, ε₀/C) ≥ ε₀M)`.
    pub exact: f64,
    /// `exp(−M ε₀ Ξ(C))`.
    pub bound: f64,
}

impl BinomialCheck {
    pub fn holds(&self) -> bool {
        self.exact <= self.bound
    }
}

/// Exact binomial upper tail against the Chernoff bound. The bound is a
/// Chernoff estimate with tilt `ln C`, so it needs `C ≥ 1` as well as `C > ε₀`.
pub fn binomial_ld_check(m: u64, eps0: f64, c: f64) -> Result<BinomialCheck, WalkError> {
    if m == 0 || !(eps0 > 0.0 && eps0 <= 1.0) || !(c >= 1.0 && c > eps0) {
        return Err(WalkError::InvalidParams(format!(
            "need M >= 1, 0 < eps0 <= 1, C >= 1 and C > eps0; got ({m}, {eps0}, {c})"
        )));
    }
    let p = eps0 / c;
    let k_min = (eps0 * m as f64 - 1e-9).ceil().max(0.0) as u64;
    let mf = m as usize;
    let lf = ln_factorials(mf);
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let terms: Vec<f64> = (k_min..=m)
        .map(|k| {
            let k = k as usize;
            lf[mf] - lf[k] - lf[mf - k] + k as f64 * lp + if mf > k { (mf - k) as f64 * lq } else { 0.0 }
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exact = if top.is_finite() { top.exp() * terms.iter().map(|t| (t - top).exp()).sum::<f64>() } else { 0.0 };
    let bound = (-(m as f64) * eps0 * binomial_xi(c)).exp();
    Ok(BinomialCheck { m, eps0, c, exact: exact.min(1.0), bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_rounding() {
        let p = WalkParams::new(3, 1_000_000, 0.5, 0).unwrap();
        assert_eq!(p.ell, 5000);
        assert_eq!(p.m, 200);
        let p = WalkParams::new(3, 1001, 1.0, 0).unwrap();
        assert_eq!(p.ell, 100);
        assert_eq!(p.n, 1000);
        assert!(WalkParams::new(2, 10, 1.0, 0).is_err());
        assert!(WalkParams::new(3, 1, 0.1, 0).is_err());
    }

    #[test]
    fn one_step_range() {
        let p = WalkParams::new(3, 1, 1.0, 5).unwrap();
        let r = simulate(&p, 0);
        assert_eq!(r.range, 1);
        assert_eq!(r.skeleton_len(), 2);
    }

    #[test]
    fn straight_line_is_self_avoiding() {
        let p = WalkParams::new(4, 500, 1.0, 0).unwrap();
        let r = simulate_steps(&p, 0, || 2);
        assert_eq!(r.range, p.n);
        let last = r.skeleton_point(r.skeleton_len() - 1);
        assert_eq!(last, &[0, p.n as i64, 0, 0]);
    }

    #[test]
    fn back_and_forth_range_two() {
        let p = WalkParams::new(3, 100, 1.0, 0).unwrap();
        let mut k = 0;
        let r = simulate_steps(&p, 0, || {
            k += 1;
            k % 2
        });
        assert_eq!(r.range, 2);
    }

    #[test]
    fn wide_keys_agree_with_packed() {
        // d = 8 packs 16 bits per coordinate; larger n falls back to wide keys.
        let p = WalkParams::new(8, 40_000, 1.0, 3).unwrap();
        let r = simulate(&p, 0);
        let mut rng = stream(3, 0);
        let mut pos = [0i64; MAX_DIM];
        let mut seen = std::collections::HashSet::new();
        for _ in 0..p.n {
            let dir: usize = rng.random_range(0..16);
            pos[dir / 2] += if dir % 2 == 0 { 1 } else { -1 };
            seen.insert(pos);
        }
        assert_eq!(r.range, seen.len() as u64);
    }

    #[test]
    fn deterministic_skeleton_measures() {
        let p = WalkParams::new(3, 2, 1.0, 0).unwrap();
        assert_eq!(p.ell, 1);
        let r = simulate_steps(&p, 0, || 0);
        let (sites, pairs) = skeleton_measures(&r);
        let s = p.scale();
        assert_eq!(sites.len(), 2);
        assert_eq!(pairs.x(0), &[0.0, 0.0, 0.0]);
        assert_eq!(pairs.y(0), &[1.0 / s, 0.0, 0.0]);
        assert_eq!(pairs.x(1), &[1.0 / s, 0.0, 0.0]);
        assert_eq!(pairs.y(1), &[2.0 / s, 0.0, 0.0]);
        assert_eq!(pairs.weights(), &[0.5, 0.5]);
        assert_eq!(pairs.first_marginal(), sites);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 1000);
        assert!(lo < 0.03 && 0.03 < hi);
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo < 1e-15);
        assert!(hi > 0.0 && hi < 0.05);
    }

    #[test]
    fn bridge_hit_trivial_cases() {
        let x = [0i64, 0, 0];
        let y = [1i64, 0, 0];
        assert_eq!(bridge_hit_probability(&x, &y, 1, &y).unwrap(), 1.0);
        assert_eq!(bridge_hit_probability(&x, &y, 1, &[0, 1, 0]).unwrap(), 0.0);
        assert_eq!(bridge_hit_probability(&x, &[2, 0, 0], 1, &y), Err(WalkError::NullConditioning));
        assert_eq!(bridge_hit_probability(&x, &x, 3, &x), Err(WalkError::NullConditioning));
    }

    #[test]
    fn one_step_distribution() {
        let (bx, p) = exact_distribution(3, 1).unwrap();
        assert_eq!(p[bx.index(&[1, 0, 0]).unwrap()], 1.0 / 6.0);
        assert_eq!(p[bx.index(&[0, 0, 0]).unwrap()], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn return_probabilities_small_cases() {
        // d = 3: P(S_2 = 0) = 1/6, P(S_4 = 0) = 15/216.
        let q = return_probabilities(3, 4, Exec::Sequential);
        assert!((q[0] - 1.0).abs() < 1e-15);
        assert!((q[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!((q[2] - 15.0 / 216.0).abs() < 1e-15);
    }

    #[test]
    fn binomial_basics() {
        assert_eq!(binomial_xi(1.0), 0.0);
        let c = binomial_ld_check(50, 0.2, 1.0).unwrap();
        assert_eq!(c.bound, 1.0);
        let c = binomial_ld_check(50, 0.2, 4.0).unwrap();
        assert!(c.holds());
        assert!(binomial_ld_check(50, 0.2, 0.5).is_err());
    }

    #[test]
    fn hurwitz_matches_direct_sum() {
        // ζ(5/2) and ζ(3/2).
        assert!((hurwitz_zeta(2.5, 1.0) - 1.341_487_257_250_917_2).abs() < 1e-13);
        assert!((hurwitz_zeta(1.5, 1.0) - 2.612_375_348_685_488_3).abs() < 1e-12);
        let shifted = hurwitz_zeta(2.5, 1.0) - (1..12).map(|k| (k as f64).powf(-2.5)).sum::<f64>();
        assert!((hurwitz_zeta(2.5, 12.0) - shifted).abs() < 1e-14);
    }
}
