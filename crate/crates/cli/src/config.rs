//! Experiment configuration: TOML file schema, command-line overrides,
//! validation, and provenance fingerprints.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use braggsynth::bragg::BraggConfig;
use braggsynth::synth::SolverConfig;
use braggsynth::DomainMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recipe {
    Ladder,
    Robust,
    Compare,
    Verify,
    Filtersweep,
}

impl std::fmt::Display for Recipe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Recipe::Ladder => "ladder",
            Recipe::Robust => "robust",
            Recipe::Compare => "compare",
            Recipe::Verify => "verify",
            Recipe::Filtersweep => "filtersweep",
        };
        f.write_str(s)
    }
}

fn default_horizon() -> f64 {
    2.0 * std::f64::consts::PI
}

fn default_steps() -> usize {
    630
}

fn default_bound() -> f64 {
    30.0
}

fn default_mode() -> String {
    "legendre".to_string()
}

/// `[bragg]` section of the configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BraggSection {
    pub n0: usize,
    #[serde(default)]
    pub truncation: Option<usize>,
    #[serde(default = "BraggSection::default_doppler")]
    pub doppler_interval: [f64; 2],
    #[serde(default = "BraggSection::default_intensity")]
    pub intensity_interval: [f64; 2],
    #[serde(default)]
    pub degrees: [usize; 2],
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_bound")]
    pub amplitude_bound: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

impl BraggSection {
    fn default_doppler() -> [f64; 2] {
        [0.0, 0.0]
    }

    fn default_intensity() -> [f64; 2] {
        [1.0, 1.0]
    }

    pub fn mode(&self) -> Result<DomainMode> {
        match self.mode.as_str() {
            "legendre" => Ok(DomainMode::Legendre),
            "sampling" => Ok(DomainMode::Sampling),
            other => anyhow::bail!("unknown mode '{other}' (expected legendre or sampling)"),
        }
    }

    pub fn to_core(&self) -> Result<BraggConfig> {
        Ok(BraggConfig {
            n0: self.n0,
            truncation: self.truncation,
            doppler_interval: (self.doppler_interval[0], self.doppler_interval[1]),
            intensity_interval: (self.intensity_interval[0], self.intensity_interval[1]),
            degrees: (self.degrees[0], self.degrees[1]),
            mode: self.mode()?,
            amplitude_bound: self.amplitude_bound,
            horizon: self.horizon,
            steps: self.steps,
        })
    }
}

impl Default for BraggSection {
    fn default() -> Self {
        Self {
            n0: 1,
            truncation: None,
            doppler_interval: Self::default_doppler(),
            intensity_interval: Self::default_intensity(),
            degrees: [0, 0],
            mode: default_mode(),
            amplitude_bound: default_bound(),
            horizon: default_horizon(),
            steps: default_steps(),
        }
    }
}

/// `[solver]` section of the configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub lambda_init: Option<f64>,
    pub lambda_decay: f64,
    pub lambda_min: f64,
    pub mu_init: f64,
    pub mu_decay: f64,
    pub mu_min: f64,
    pub stall_threshold: f64,
    pub error_tolerance: f64,
    pub max_iterations_stage1: usize,
    pub max_iterations_stage2: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            lambda_init: d.lambda_init,
            lambda_decay: d.lambda_decay,
            lambda_min: d.lambda_min,
            mu_init: d.mu_init,
            mu_decay: d.mu_decay,
            mu_min: d.mu_min,
            stall_threshold: d.stall_threshold,
            error_tolerance: d.error_tolerance,
            max_iterations_stage1: d.max_iterations_stage1,
            max_iterations_stage2: d.max_iterations_stage2,
        }
    }
}

impl SolverSection {
    pub fn to_core(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            lambda_init: self.lambda_init,
            lambda_decay: self.lambda_decay,
            lambda_min: self.lambda_min,
            mu_init: self.mu_init,
            mu_decay: self.mu_decay,
            mu_min: self.mu_min,
            stall_threshold: self.stall_threshold,
            error_tolerance: self.error_tolerance,
            max_iterations_stage1: self.max_iterations_stage1,
            max_iterations_stage2: self.max_iterations_stage2,
            seed,
        }
    }
}

/// `[compare]` section: representation sizes for the two methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    /// Legendre expansion degrees (applied to both parameters).
    pub degrees: Vec<usize>,
    /// Sample counts per interval for the sampling method.
    pub samples: Vec<usize>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            degrees: vec![1, 2, 3, 4],
            samples: vec![2, 3, 4, 5],
        }
    }
}

/// `[verify]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub grid: [usize; 2],
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { grid: [9, 9] }
    }
}

/// `[filter]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub order: usize,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self { order: 4 }
    }
}

/// Whole experiment configuration (file contents plus flag overrides).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub recipe: Option<Recipe>,
    #[serde(default = "ExperimentConfig::default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "ExperimentConfig::default_seeds")]
    pub seeds: Vec<u64>,
    /// 0 means use all available cores.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub bragg: BraggSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub filter: FilterSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            recipe: None,
            output_dir: Self::default_output_dir(),
            seeds: Self::default_seeds(),
            threads: 0,
            bragg: BraggSection::default(),
            solver: SolverSection::default(),
            compare: CompareSection::default(),
            verify: VerifySection::default(),
            filter: FilterSection::default(),
        }
    }
}

impl ExperimentConfig {
    fn default_output_dir() -> PathBuf {
        PathBuf::from("out")
    }

    fn default_seeds() -> Vec<u64> {
        vec![1]
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }
}

/// All violations of the configuration; an empty list means valid.
/// Never mutates state.
pub fn validate_config(cfg: &ExperimentConfig) -> Vec<String> {
    let mut diags = Vec::new();
    match cfg.bragg.to_core() {
        Ok(core) => diags.extend(core.validate()),
        Err(e) => diags.push(e.to_string()),
    }
    diags.extend(cfg.solver.to_core(0).validate());
    if cfg.seeds.is_empty() {
        diags.push("seeds must not be empty".to_string());
    }
    if cfg.recipe == Some(Recipe::Compare) {
        if cfg.compare.degrees.is_empty() {
            diags.push("compare.degrees must not be empty".to_string());
        }
        if cfg.compare.samples.is_empty() {
            diags.push("compare.samples must not be empty".to_string());
        }
        if cfg.compare.samples.iter().any(|s| *s < 1) {
            diags.push("compare.samples entries must be ≥ 1".to_string());
        }
    }
    if cfg.recipe == Some(Recipe::Verify) && (cfg.verify.grid[0] == 0 || cfg.verify.grid[1] == 0) {
        diags.push("verify.grid entries must be ≥ 1".to_string());
    }
    if cfg.recipe == Some(Recipe::Filtersweep) && cfg.filter.order == 0 {
        diags.push("filter.order must be ≥ 1".to_string());
    }
    diags
}

/// Canonical fingerprint of the model a pulse was designed against.
pub fn model_fingerprint(bragg: &BraggConfig) -> String {
    let canonical = format!(
        "n0={};N={};doppler=[{:e},{:e}];intensity=[{:e},{:e}];degrees=[{},{}];mode={:?};bound={:e};horizon={:e};steps={}",
        bragg.n0,
        bragg.n_trunc(),
        bragg.doppler_interval.0,
        bragg.doppler_interval.1,
        bragg.intensity_interval.0,
        bragg.intensity_interval.1,
        bragg.degrees.0,
        bragg.degrees.1,
        bragg.mode,
        bragg.amplitude_bound,
        bragg.horizon,
        bragg.steps
    );
    hex_digest(&canonical)
}

/// Fingerprint of the whole experiment (identity, not execution details).
pub fn config_fingerprint(cfg: &ExperimentConfig) -> String {
    let identity = serde_json::json!({
        "recipe": cfg.recipe.map(|r| r.to_string()),
        "seeds": cfg.seeds,
        "bragg": &cfg.bragg,
        "solver": &cfg.solver,
        "compare": &cfg.compare,
        "verify": &cfg.verify,
        "filter": &cfg.filter,
    });
    hex_digest(&identity.to_string())
}

fn hex_digest(s: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(s.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ExperimentConfig::default();
        assert!(validate_config(&cfg).is_empty());
    }

    #[test]
    fn zero_target_index_is_flagged() {
        let mut cfg = ExperimentConfig::default();
        cfg.bragg.n0 = 0;
        let diags = validate_config(&cfg);
        assert!(diags.iter().any(|d| d.contains("≥ 1")), "{diags:?}");
    }

    #[test]
    fn bad_decay_is_flagged() {
        let mut cfg = ExperimentConfig::default();
        cfg.solver.lambda_decay = 1.5;
        let diags = validate_config(&cfg);
        assert!(diags.iter().any(|d| d.contains("lambda_decay")), "{diags:?}");
    }

    #[test]
    fn toml_roundtrip_with_defaults() {
        let text = r#"
            recipe = "robust"
            seeds = [3, 4]

            [bragg]
            n0 = 2
            degrees = [3, 3]
            doppler_interval = [-0.4, 0.4]
            intensity_interval = [0.6, 1.4]
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.recipe, Some(Recipe::Robust));
        assert_eq!(cfg.bragg.n0, 2);
        assert_eq!(cfg.bragg.steps, 630);
        assert_eq!(cfg.seeds, vec![3, 4]);
        assert!(validate_config(&cfg).is_empty());
    }

    #[test]
    fn fingerprint_tracks_identity_not_execution() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        b.output_dir = PathBuf::from("elsewhere");
        b.threads = 7;
        assert_eq!(config_fingerprint(&a), config_fingerprint(&b));
        let mut c = ExperimentConfig::default();
        c.bragg.n0 = 5;
        assert_ne!(config_fingerprint(&a), config_fingerprint(&c));
    }
}
