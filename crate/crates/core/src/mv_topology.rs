//! A finite truncation of the Mukherjee–Varadhan metric **D** on collections
//! of orbits (measures modulo translation), with pair test functions
//! `f(u₁, u₂) = A e^{−|u₁−u₂|²/(2σ²)}`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::exec::Exec;
use crate::functionals::{chunked_mc, McConfig, McEstimate};
use crate::measures::{dist2, EmpiricalMeasure};
use crate::rate_function::RadialProfile;
use crate::rng::{stream, substream, StreamRng};

/// Translation-invariant pair kernel `A e^{−|u₁−u₂|²/(2σ²)}`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TestFunctionSpec {
    pub bandwidth: f64,
    pub amplitude: f64,
}

impl TestFunctionSpec {
    pub fn new(bandwidth: f64, amplitude: f64) -> Self {
        assert!(bandwidth > 0.0, "bandwidth must be positive");
        Self { bandwidth, amplitude }
    }

    pub fn eval_dist2(&self, r2: f64) -> f64 {
        self.amplitude * (-r2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    pub fn sup_norm(&self) -> f64 {
        self.amplitude.abs()
    }
}

/// Bandwidths 0.25, 0.5, 1, 2, 4 with unit amplitude, in that order.
pub fn default_family() -> Vec<TestFunctionSpec> {
    [0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|&s| TestFunctionSpec::new(s, 1.0)).collect()
}

/// Law of `|X|` for a radially symmetric component.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialLaw {
    /// Centred Gaussian with the given variance per coordinate.
    Gaussian { var: f64 },
    /// Piecewise-linear radial CDF on increasing radii.
    Tabulated { radii: Vec<f64>, cdf: Vec<f64> },
}

impl RadialLaw {
    fn sample_point(&self, d: usize, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            RadialLaw::Gaussian { var } => (0..d).map(|_| var.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect(),
            RadialLaw::Tabulated { radii, cdf } => {
                let r = inverse_cdf(radii, cdf, rng.random::<f64>());
                let dir = uniform_direction(d, rng);
                dir.iter().map(|u| r * u).collect()
            }
        }
    }
}

fn inverse_cdf(radii: &[f64], cdf: &[f64], u: f64) -> f64 {
    let i = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
    let (c0, c1) = (cdf[i - 1], cdf[i]);
    let s = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
    radii[i - 1] + s * (radii[i] - radii[i - 1])
}

fn uniform_direction(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return g.iter().map(|x| x / n).collect();
        }
    }
}

/// One orbit: a weighted cloud, or a radial law with a mass.
#[derive(Debug, Clone, PartialEq)]
pub enum OrbitComponent {
    Cloud(EmpiricalMeasure),
    Radial { d: usize, mass: f64, law: RadialLaw },
}

impl OrbitComponent {
    pub fn mass(&self) -> f64 {
        match self {
            OrbitComponent::Cloud(c) => c.total_mass(),
            OrbitComponent::Radial { mass, .. } => *mass,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OrbitComponent::Cloud(c) => c.dim(),
            OrbitComponent::Radial { d, .. } => *d,
        }
    }
}

/// Finite list of orbits with total mass at most 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OrbitCollection {
    pub components: Vec<OrbitComponent>,
}

impl OrbitCollection {
    pub fn new(components: Vec<OrbitComponent>) -> Result<Self, String> {
        let total: f64 = components.iter().map(|c| c.mass()).sum();
        if total > 1.0 + 1e-12 {
            return Err(format!("total mass {total} exceeds 1"));
        }
        if components.iter().any(|c| !(c.mass() > 0.0)) {
            return Err("component masses must be positive".into());
        }
        Ok(Self { components })
    }

    pub fn single(component: OrbitComponent) -> Self {
        Self { components: vec![component] }
    }

    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.mass()).sum()
    }
}

const BLOCK: usize = 256;

/// `Σ_{i,j} w_i w_j f(x_i − x_j)` for every kernel of the family, diagonal
/// included. Rows are summed in fixed blocks, in order.
fn cloud_lambdas(family: &[TestFunctionSpec], cloud: &EmpiricalMeasure, exec: Exec) -> Vec<f64> {
    let n = cloud.len();
    let blocks = n.div_ceil(BLOCK);
    let inv: Vec<f64> = family.iter().map(|f| -1.0 / (2.0 * f.bandwidth * f.bandwidth)).collect();
    let w = cloud.weights();
    let parts = exec.map_range(blocks, |b| {
        let mut acc = vec![0.0; family.len()];
        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
            let xi = cloud.point(i);
            let mut row = vec![0.0; family.len()];
            for j in 0..n {
                let r2 = dist2(xi, cloud.point(j));
                for (k, c) in inv.iter().enumerate() {
                    row[k] += w[j] * (c * r2).exp();
                }
            }
            for k in 0..family.len() {
                acc[k] += w[i] * row[k];
            }
        }
        acc
    });
    let mut total = vec![0.0; family.len()];
    for p in parts {
        for k in 0..family.len() {
            total[k] += p[k];
        }
    }
    total.iter().zip(family).map(|(t, f)| t * f.amplitude).collect()
}

/// `Λ(f, α) = ∫∫ f(u₁, u₂) α(du₁) α(du₂)` for each kernel of the family.
/// Exact on clouds (zero standard error); Monte Carlo on radial laws.
pub fn lambda_family(family: &[TestFunctionSpec], alpha: &OrbitComponent, mc: &McConfig) -> Vec<McEstimate> {
    match alpha {
        OrbitComponent::Cloud(c) => cloud_lambdas(family, c, mc.exec)
            .into_iter()
            .map(|value| McEstimate { value, stderr: 0.0, samples: c.len() })
            .collect(),
        OrbitComponent::Radial { d, mass, law } => family
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let cfg = McConfig { seed: mc.seed ^ (k as u64).wrapping_mul(0x5851_F42D_4C95_7F2D), ..*mc };
                let e = chunked_mc(&cfg, |rng| {
                    let a = law.sample_point(*d, rng);
                    let b = law.sample_point(*d, rng);
                    f.eval_dist2(dist2(&a, &b))
                });
                McEstimate { value: mass * mass * e.value, stderr: mass * mass * e.stderr, samples: e.samples }
            })
            .collect(),
    }
}

/// `Λ(f, α)` for a single kernel.
pub fn lambda_of(f: &TestFunctionSpec, alpha: &OrbitComponent, mc: &McConfig) -> McEstimate {
    lambda_family(std::slice::from_ref(f), alpha, mc)[0]
}

/// Truncated **D** with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DistanceReport {
    pub family: Vec<TestFunctionSpec>,
    pub value: f64,
    pub mc_stderr: f64,
}

/// Per-kernel sums `Σ_{α∈ξ} Λ(f_r, α)`.
pub fn collection_lambdas(family: &[TestFunctionSpec], xi: &OrbitCollection, mc: &McConfig) -> Vec<McEstimate> {
    let mut sums = vec![McEstimate { value: 0.0, stderr: 0.0, samples: 0 }; family.len()];
    for (c, comp) in xi.components.iter().enumerate() {
        let cfg = McConfig { seed: mc.seed.wrapping_add(c as u64), ..*mc };
        for (k, e) in lambda_family(family, comp, &cfg).into_iter().enumerate() {
            sums[k].value += e.value;
            sums[k].stderr = sums[k].stderr.hypot(e.stderr);
            sums[k].samples += e.samples;
        }
    }
    sums
}

/// `Σ_r 2^{−r} (1 + ‖f_r‖_∞)^{−1} |Σ_{ξ₁} Λ(f_r, ·) − Σ_{ξ₂} Λ(f_r, ·)|`, `r = 1, 2, …`.
pub fn metric_d(
    xi1: &OrbitCollection,
    xi2: &OrbitCollection,
    family: &[TestFunctionSpec],
    mc: &McConfig,
) -> DistanceReport {
    assert!(!family.is_empty(), "test-function family must be non-empty");
    let a = collection_lambdas(family, xi1, mc);
    let b = collection_lambdas(family, xi2, &McConfig { seed: mc.seed.wrapping_add(1 << 32), ..*mc });
    distance_from_lambdas(family, &a, &b)
}

pub fn distance_from_lambdas(family: &[TestFunctionSpec], a: &[McEstimate], b: &[McEstimate]) -> DistanceReport {
    let mut value = 0.0;
    let mut var = 0.0;
    for (r, f) in family.iter().enumerate() {
        let weight = 0.5f64.powi(r as i32 + 1) / (1.0 + f.sup_norm());
        value += weight * (a[r].value - b[r].value).abs();
        var += (weight * a[r].stderr.hypot(b[r].stderr)).powi(2);
    }
    DistanceReport { family: family.to_vec(), value, mc_stderr: var.sqrt() }
}

/// Cloud of `samples` points from the density `φ²` of a unit-mass profile:
/// radius by inverse CDF of `ω∫y²r^{d−1}dr`, direction uniform.
pub fn minimizer_orbit(profile: &RadialProfile, samples: usize, seed: u64) -> OrbitComponent {
    let law = RadialLaw::Tabulated { radii: profile.grid.nodes().to_vec(), cdf: profile.radial_cdf() };
    let d = profile.d;
    let mut rng = stream(seed, 0);
    let points: Vec<Vec<f64>> = (0..samples).map(|_| law.sample_point(d, &mut rng)).collect();
    OrbitComponent::Cloud(EmpiricalMeasure::uniform(d, &points, 1.0).expect("valid cloud"))
}

/// Translates a cloud so that its weighted mean is the origin.
pub fn center_component(alpha: &OrbitComponent) -> OrbitComponent {
    match alpha {
        OrbitComponent::Cloud(c) => {
            let m: Vec<f64> = c.mean().iter().map(|v| -v).collect();
            OrbitComponent::Cloud(c.translated(&m))
        }
        other => other.clone(),
    }
}

/// One row of the Gaussian-mixture example.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MixtureDistance {
    pub n: f64,
    pub value: f64,
    pub mc_stderr: f64,
    pub replicates: usize,
}

/// Truncated **D** in `d = 1` between `μ_n = ½N(n,1) + ⅓N(−n,2) + ⅙N(0,n)`
/// (one orbit) and `ξ = {½N(·,1), ⅓N(·,2)}`, for each `n`.
///
/// Each replicate samples `samples` points per mixture component and reuses
/// the same draws for the matching components of `ξ`, so the common
/// self-interaction terms cancel exactly. The error bar is the standard error
/// over replicates.
pub fn mixture_example(
    ns: &[f64],
    samples: usize,
    replicates: usize,
    seed: u64,
    family: &[TestFunctionSpec],
    exec: Exec,
) -> Vec<MixtureDistance> {
    ns.iter()
        .map(|&n| {
            let values: Vec<f64> = (0..replicates)
                .map(|rep| {
                    let mut rng = substream(seed, 0x4d56, rep as u64);
                    let mut draw = |mean: f64, var: f64| -> Vec<Vec<f64>> {
                        (0..samples).map(|_| vec![mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal)]).collect()
                    };
                    let a = draw(0.0, 1.0);
                    let b = draw(0.0, 2.0);
                    let c = draw(0.0, n);
                    let shift = |pts: &[Vec<f64>], s: f64| pts.iter().map(|p| vec![p[0] + s]).collect::<Vec<_>>();
                    let mut mixture = shift(&a, n);
                    mixture.extend(shift(&b, -n));
                    mixture.extend(c);
                    let k = samples as f64;
                    let mut weights = vec![0.5 / k; samples];
                    weights.extend(vec![1.0 / (3.0 * k); samples]);
                    weights.extend(vec![1.0 / (6.0 * k); samples]);
                    let mu = OrbitCollection::single(OrbitComponent::Cloud(
                        EmpiricalMeasure::new(1, &mixture, weights).expect("valid mixture"),
                    ));
                    let xi = OrbitCollection::new(vec![
                        OrbitComponent::Cloud(EmpiricalMeasure::uniform(1, &a, 0.5).expect("valid")),
                        OrbitComponent::Cloud(EmpiricalMeasure::uniform(1, &b, 1.0 / 3.0).expect("valid")),
                    ])
                    .expect("masses sum below 1");
                    let cfg = McConfig { exec, ..McConfig::default() };
                    metric_d(&mu, &xi, family, &cfg).value
                })
                .collect();
            let r = replicates as f64;
            let mean = values.iter().sum::<f64>() / r;
            let var =
                if replicates > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0) } else { 0.0 };
            MixtureDistance { n, value: mean, mc_stderr: (var / r).sqrt(), replicates }
        })
        .collect()
}
