//! Run configuration shared by every pipeline stage.
//!
//! One JSON document drives synthesis, labeling, training, prediction and
//! evaluation. Every field has a default, so an empty object `{}` is a
//! complete configuration. Output artifacts embed [`config_hash`] in their
//! header block, which ties each file to the exact settings and seed that
//! produced it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{Horizon, KPolicy, RoleMap, DEFAULT_HORIZONS};
use crate::gbm::search::WindowConfig;
use crate::labeling::CpConfig;
use crate::metrics::CStatMethod;
use crate::synth::{demo_script, ScenarioScript};

/// Yearly flow thresholds a default run is labeled and trained at.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [2000.0, 5000.0, 10000.0, 25000.0];

/// Artifact locations, resolved against the process working directory when
/// relative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Country-month panel CSV: flows plus covariate columns.
    pub panel: PathBuf,
    /// Truth classes written alongside a synthetic panel.
    pub truth: PathBuf,
    /// Archived copy of the generating script.
    pub script: PathBuf,
    /// Scenario and class labels per country-month and threshold.
    pub labels: PathBuf,
    /// Class-proportion summary accompanying the labels.
    pub label_summary: PathBuf,
    /// Trained model bundle.
    pub bundle: PathBuf,
    /// Risk-index rows written by `predict`.
    pub risk: PathBuf,
    /// Directory receiving evaluation reports.
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            panel: "panel.csv".into(),
            truth: "truth.csv".into(),
            script: "script.json".into(),
            labels: "labels.csv".into(),
            label_summary: "labels_summary.json".into(),
            bundle: "bundle.json".into(),
            risk: "risk.csv".into(),
            reports: "reports".into(),
        }
    }
}

/// Covariate handling: role assignment and dimensionality reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSettings {
    /// Ordered name patterns mapping each covariate to a role.
    pub roles: RoleMap,
    /// How many principal components the slow-moving block keeps.
    pub policy: KPolicy,
    /// Whether the conflict-forecast column enters the design at all.
    pub include_conflict: bool,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            roles: RoleMap::defaults(),
            policy: KPolicy::default(),
            include_conflict: true,
        }
    }
}

/// Hyperparameter search budget and cross-validation layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    /// Grid candidates sampled without replacement.
    pub n_draws: usize,
    /// Stratified folds per evaluation window.
    pub n_folds: usize,
    /// Moving-window layout over training months.
    pub windows: WindowConfig,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings { n_draws: 150, n_folds: 3, windows: WindowConfig::default() }
    }
}

/// Probability calibration options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationSettings {
    /// Beta of the F-score maximized when selecting each pair's decision
    /// threshold; 1 weighs precision and recall equally.
    pub f_beta: f64,
    /// Optional class weights multiplying coupled probabilities before
    /// renormalization, for matching a known deployment class mix.
    pub prior_correction: Option<[f64; 3]>,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings { f_beta: 1.0, prior_correction: None }
    }
}

/// Held-out evaluation options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// Trailing months reserved from training and scored by `evaluate`.
    pub holdout_months: usize,
    /// Reliability-diagram bins for ECE and MCE.
    pub n_bins: usize,
    /// Multiclass discrimination summary.
    pub c_statistic: CStatMethod,
    /// Report predictive entropy in bits instead of nats.
    pub entropy_log2: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            holdout_months: 4,
            n_bins: 10,
            c_statistic: CStatMethod::default(),
            entropy_log2: false,
        }
    }
}

/// Where `synth` gets its scenario: a named built-in or an inline script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptSource {
    /// Name of a built-in scenario; `"demo"` is the only one.
    Named(String),
    /// Full script embedded in the configuration.
    Inline(ScenarioScript),
}

impl Default for ScriptSource {
    fn default() -> Self {
        ScriptSource::Named("demo".into())
    }
}

impl ScriptSource {
    /// Materializes the script, resolving built-in names.
    pub fn resolve(&self) -> Result<ScenarioScript> {
        match self {
            ScriptSource::Named(name) if name == "demo" => Ok(demo_script()),
            ScriptSource::Named(name) => {
                Err(Error::ConfigInvalid(format!("unknown built-in scenario {name:?}")))
            }
            ScriptSource::Inline(script) => Ok(script.clone()),
        }
    }
}

/// Everything a full run needs, from synthesis through evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    /// Yearly flow thresholds; each gets its own label set and models.
    pub thresholds: Vec<f64>,
    /// Prediction horizons in months.
    pub horizons: Vec<u32>,
    /// Change-point detection and scenario settings.
    pub changepoint: CpConfig<f64>,
    pub features: FeatureSettings,
    pub search: SearchSettings,
    pub calibration: CalibrationSettings,
    pub evaluation: EvalSettings,
    /// Scenario used by the `synth` stage.
    pub synth: ScriptSource,
    /// Master seed; every stage derives its own substreams from it.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            changepoint: CpConfig::default(),
            features: FeatureSettings::default(),
            search: SearchSettings::default(),
            calibration: CalibrationSettings::default(),
            evaluation: EvalSettings::default(),
            synth: ScriptSource::default(),
            seed: 42,
        }
    }
}

impl RunConfig {
    /// Checks every cross-field invariant the individual stages rely on.
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::ConfigInvalid("at least one threshold is required".into()));
        }
        for &t in &self.thresholds {
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::NonPositiveThreshold(t));
            }
        }
        if !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::ConfigInvalid("thresholds must be strictly increasing".into()));
        }
        if self.horizons.is_empty() {
            return Err(Error::ConfigInvalid("at least one horizon is required".into()));
        }
        for &h in &self.horizons {
            Horizon::new(h)?;
        }
        if !self.horizons.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::ConfigInvalid("horizons must be strictly increasing".into()));
        }
        if self.changepoint.min_segment < 2 {
            return Err(Error::ConfigInvalid("min_segment must be at least 2".into()));
        }
        if let Some(p) = self.changepoint.penalty {
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::ConfigInvalid(format!("penalty must be positive, got {p}")));
            }
        }
        if self.search.n_draws == 0 {
            return Err(Error::ConfigInvalid("n_draws must be at least 1".into()));
        }
        if self.search.n_folds < 2 {
            return Err(Error::ConfigInvalid("n_folds must be at least 2".into()));
        }
        if !(self.calibration.f_beta.is_finite() && self.calibration.f_beta > 0.0) {
            return Err(Error::ConfigInvalid(format!(
                "f_beta must be positive, got {}",
                self.calibration.f_beta
            )));
        }
        if let Some(w) = self.calibration.prior_correction {
            if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
                return Err(Error::ConfigInvalid(
                    "prior_correction weights must be positive".into(),
                ));
            }
        }
        if self.evaluation.holdout_months == 0 {
            return Err(Error::ConfigInvalid("holdout_months must be at least 1".into()));
        }
        if self.evaluation.n_bins < 2 {
            return Err(Error::ConfigInvalid("n_bins must be at least 2".into()));
        }
        if let ScriptSource::Inline(script) = &self.synth {
            script.validate()?;
        } else {
            self.synth.resolve()?;
        }
        Ok(())
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let config: RunConfig = serde_json::from_str(&text)?;
    config.validate()?;
    Ok(config)
}

/// Hex SHA-256 of the canonical JSON form.
///
/// Serializing before hashing means two files that parse to the same
/// configuration (whitespace, key order, omitted defaults) get the same
/// hash, while any semantic change gets a different one.
pub fn config_hash(config: &RunConfig) -> String {
    let canon = serde_json::to_string(config).expect("config serializes");
    let digest = Sha256::digest(canon.as_bytes());
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
