//! Experiment configuration: a TOML file, then command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Invalid configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Tolerance keys and their defaults. Every key can be changed with
/// `[tolerances]` in the config file or `--tol-override KEY=VAL`.
pub const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    ("pohozaev", 1e-3),
    ("derivative", 0.05),
    ("g_monotone", 1e-8),
    ("xi_floor", 1e-12),
    ("heat_norm", 1e-8),
    ("bridge_norm", 1e-4),
    ("scaling_endpoint", 0.01),
    ("binomial", 0.0),
    ("llt_slope", 0.0),
    ("kappa_sigma", 3.0),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub out: PathBuf,
    pub tolerances: BTreeMap<String, f64>,
    pub rate_curve: RateCurveConfig,
    pub walk_stats: WalkStatsConfig,
    pub tube: TubeConfig,
    pub mv_demo: MvDemoConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240501,
            workers: 0,
            out: PathBuf::from("out"),
            tolerances: DEFAULT_TOLERANCES.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            rate_curve: RateCurveConfig::default(),
            walk_stats: WalkStatsConfig::default(),
            tube: TubeConfig::default(),
            mv_demo: MvDemoConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateCurveConfig {
    pub d: usize,
    pub kappa: f64,
    pub b: Vec<f64>,
    pub profiles: bool,
}

impl Default for RateCurveConfig {
    fn default() -> Self {
        Self {
            d: 3,
            kappa: 1.0,
            b: (0..10).map(|i| 0.1 * 9f64.powf((i as f64 + 0.5) / 10.0)).collect(),
            profiles: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkStatsConfig {
    pub d: usize,
    pub ns: Vec<u64>,
    /// Walks per `n`.
    pub walks: usize,
    pub eps: f64,
    pub green_n_max: usize,
    pub mc_walks: usize,
    pub mc_cutoff: usize,
}

impl Default for WalkStatsConfig {
    fn default() -> Self {
        Self {
            d: 3,
            ns: vec![1_000, 10_000, 100_000, 1_000_000],
            walks: 100,
            eps: 1.0,
            green_n_max: 20_000,
            mc_walks: 100_000,
            mc_cutoff: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TubeConfig {
    pub d: usize,
    pub n: u64,
    pub eps: f64,
    /// Conditioning level; chosen from a pilot run when absent.
    pub b: Option<f64>,
    /// Level of the minimizer; defaults to `b`.
    pub profile_b: Option<f64>,
    pub pilot_walks: usize,
    /// Target acceptance probability for the pilot quantile.
    pub pilot_rate: f64,
    pub target_accepted: usize,
    pub budget: u64,
    pub unconditioned: usize,
    pub minimizer_samples: usize,
    pub chunk: usize,
    pub green_n_max: usize,
}

impl Default for TubeConfig {
    fn default() -> Self {
        Self {
            d: 3,
            n: 10_000,
            eps: 0.1,
            b: None,
            profile_b: None,
            pilot_walks: 20_000,
            pilot_rate: 2e-3,
            target_accepted: 40,
            budget: 400_000,
            unconditioned: 40,
            minimizer_samples: 2000,
            chunk: 4096,
            green_n_max: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvDemoConfig {
    pub ns: Vec<f64>,
    pub samples: usize,
    pub replicates: usize,
}

impl Default for MvDemoConfig {
    fn default() -> Self {
        Self { ns: vec![5.0, 50.0], samples: 2000, replicates: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub d: usize,
    pub kappa: f64,
    /// Rate-curve points for the Pohozaev and Serrin–Tang checks.
    pub b: Vec<f64>,
    pub llt_ns: Vec<usize>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { d: 3, kappa: 1.0, b: vec![0.3, 0.5], llt_ns: (10..=30).collect() }
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub tolerances: Vec<(String, f64)>,
}

pub fn parse_tol_override(s: &str) -> Result<(String, f64), ConfigError> {
    let Some((k, v)) = s.split_once('=') else {
        return bad(format!("tolerance override {s:?} is not KEY=VAL"));
    };
    let v: f64 = v.trim().parse().map_err(|e| ConfigError(format!("tolerance {k}: {e}")))?;
    Ok((k.trim().to_string(), v))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        // A partial [tolerances] table replaces the defaults; merge them back.
        let given = std::mem::take(&mut cfg.tolerances);
        cfg.tolerances = ExperimentConfig::default().tolerances;
        for (k, v) in given {
            cfg.set_tolerance(&k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(overrides)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), ConfigError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        for (k, v) in &o.tolerances {
            self.set_tolerance(k, *v)?;
        }
        Ok(())
    }

    fn set_tolerance(&mut self, key: &str, value: f64) -> Result<(), ConfigError> {
        if !DEFAULT_TOLERANCES.iter().any(|(k, _)| *k == key) {
            let known: Vec<&str> = DEFAULT_TOLERANCES.iter().map(|(k, _)| *k).collect();
            return bad(format!("unknown tolerance {key:?}; known keys: {}", known.join(", ")));
        }
        if !value.is_finite() {
            return bad(format!("tolerance {key} must be finite"));
        }
        self.tolerances.insert(key.to_string(), value);
        Ok(())
    }

    pub fn tol(&self, key: &str) -> f64 {
        self.tolerances[key]
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn check_dim(d: usize) -> Result<(), ConfigError> {
    if !(3..=8).contains(&d) {
        return bad(format!("d must be in 3..=8, got {d}"));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return bad(format!("{name} must be positive and finite, got {v}"));
    }
    Ok(())
}

impl RateCurveConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_dim(self.d)?;
        check_positive("rate_curve.kappa", self.kappa)?;
        if self.b.is_empty() {
            return bad("rate_curve.b is empty");
        }
        for &b in &self.b {
            check_positive("rate_curve.b", b)?;
        }
        if self.b.windows(2).any(|w| w[1] <= w[0]) {
            return bad("rate_curve.b must be strictly increasing");
        }
        Ok(())
    }
}

impl WalkStatsConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_dim(self.d)?;
        check_positive("walk_stats.eps", self.eps)?;
        if self.ns.is_empty() || self.ns.contains(&0) {
            return bad("walk_stats.ns must be non-empty and positive");
        }
        for &n in &self.ns {
            if self.eps * (n as f64).powf(2.0 / self.d as f64) < 1.0 {
                return bad(format!("walk_stats.eps * n^(2/d) < 1 at n = {n}"));
            }
        }
        if self.walks == 0 {
            return bad("walk_stats.walks must be positive");
        }
        if self.green_n_max < 100 || self.mc_walks < 2 || self.mc_cutoff < 2 {
            return bad("walk_stats needs green_n_max >= 100, mc_walks >= 2 and mc_cutoff >= 2");
        }
        Ok(())
    }
}

impl TubeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_dim(self.d)?;
        check_positive("tube.eps", self.eps)?;
        if self.eps * (self.n as f64).powf(2.0 / self.d as f64) < 2.0 {
            return bad("tube: eps * n^(2/d) must be at least 2");
        }
        if let Some(b) = self.b {
            check_positive("tube.b", b)?;
        }
        if let Some(b) = self.profile_b {
            check_positive("tube.profile_b", b)?;
        }
        if self.b.is_none() && (self.pilot_walks == 0 || !(self.pilot_rate > 0.0 && self.pilot_rate < 1.0)) {
            return bad("tube: without b, pilot_walks must be positive and pilot_rate in (0, 1)");
        }
        if self.target_accepted == 0 || self.budget == 0 || self.unconditioned == 0 || self.chunk == 0 {
            return bad("tube: target_accepted, budget, unconditioned and chunk must be positive");
        }
        if self.minimizer_samples < 10 || self.green_n_max < 100 {
            return bad("tube: minimizer_samples >= 10 and green_n_max >= 100 required");
        }
        Ok(())
    }
}

impl MvDemoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ns.is_empty() {
            return bad("mv_demo.ns is empty");
        }
        for &n in &self.ns {
            check_positive("mv_demo.ns", n)?;
        }
        if self.samples == 0 || self.replicates < 2 {
            return bad("mv_demo needs samples >= 1 and replicates >= 2");
        }
        Ok(())
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        check_dim(self.d)?;
        check_positive("verify.kappa", self.kappa)?;
        for &b in &self.b {
            check_positive("verify.b", b)?;
        }
        if self.llt_ns.len() < 3 || self.llt_ns.iter().any(|&n| n == 0 || n > 40) {
            return bad("verify.llt_ns needs at least 3 values in 1..=40");
        }
        Ok(())
    }
}
