use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::losses::LossWeights;
use crate::synthbench::{NoiseModel, SynthConfig};

pub const ENV_LLM_ENDPOINT: &str = "GLIS_LLM_ENDPOINT";
pub const ENV_LLM_TIMEOUT_MS: &str = "GLIS_LLM_TIMEOUT_MS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackend {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub backend: LlmBackend,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
    /// The endpoint cannot take concurrent requests.
    pub serial: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            backend: LlmBackend::Mock,
            endpoint: None,
            timeout_ms: 30_000,
            retries: 2,
            serial: false,
        }
    }
}

impl LlmConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerBackend {
    File,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub backend: ScorerBackend,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    pub retries: u32,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            backend: ScorerBackend::File,
            endpoint: None,
            timeout_ms: 30_000,
            retries: 2,
        }
    }
}

/// Input and output locations; relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub scenes: PathBuf,
    pub kb: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            scenes: "scenes.json".into(),
            kb: "kb.json".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub phi_clip: f64,
    pub phi_obj: f64,
    pub phi_low: f64,
    pub phi_high: f64,
    pub phi_keep: f64,
    pub iou_threshold: f64,
    pub trim: f64,
    pub weights: LossWeights,
    pub llm: LlmConfig,
    pub scorer: ScorerConfig,
    pub paths: PathsConfig,
    pub seed: u64,
    /// Scene-level worker threads; 0 means one per core.
    pub workers: usize,
    pub synth: SynthConfig,
    pub noise: NoiseModel,
    pub trials: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: super::SCHEMA_VERSION,
            phi_clip: crate::rplg::DEFAULT_PHI_CLIP,
            phi_obj: crate::baol::DEFAULT_PHI_OBJ,
            phi_low: crate::baol::DEFAULT_PHI_LOW,
            phi_high: crate::baol::DEFAULT_PHI_HIGH,
            phi_keep: crate::glci::DEFAULT_PHI_KEEP,
            iou_threshold: crate::evaluator::DEFAULT_IOU_THRESHOLD,
            trim: crate::geometry::DEFAULT_TRIM,
            weights: LossWeights::default(),
            llm: LlmConfig::default(),
            scorer: ScorerConfig::default(),
            paths: PathsConfig::default(),
            seed: 0,
            workers: 0,
            synth: SynthConfig::default(),
            noise: NoiseModel::default(),
            trials: 50,
        }
    }
}

impl Config {
    /// Field-level range checks; returns every problem found.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let unit = [
            ("phi_clip", self.phi_clip),
            ("phi_obj", self.phi_obj),
            ("phi_low", self.phi_low),
            ("phi_high", self.phi_high),
            ("phi_keep", self.phi_keep),
            ("iou_threshold", self.iou_threshold),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{name}: must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..0.5).contains(&self.trim) {
            out.push(format!("trim: must be in [0, 0.5), got {}", self.trim));
        }
        if let Err(e) = self.weights.validate() {
            out.push(format!("weights: {e}"));
        }
        if self.schema_version != super::SCHEMA_VERSION {
            out.push(format!(
                "schema_version: expected {}, got {}",
                super::SCHEMA_VERSION,
                self.schema_version
            ));
        }
        if let Err(e) = self.noise.validate() {
            out.push(format!("noise: {e}"));
        }
        if self.llm.backend == LlmBackend::Http && self.llm.endpoint.is_none() {
            out.push("llm.endpoint: required for the http backend".into());
        }
        if self.scorer.backend == ScorerBackend::Http && self.scorer.endpoint.is_none() {
            out.push("scorer.endpoint: required for the http backend".into());
        }
        out
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.paths.scenes,
            &mut self.paths.kb,
            &mut self.paths.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    fn apply_env(&mut self) -> Result<(), PipelineError> {
        if let Ok(endpoint) = std::env::var(ENV_LLM_ENDPOINT) {
            self.llm.endpoint = Some(endpoint);
        }
        if let Ok(ms) = std::env::var(ENV_LLM_TIMEOUT_MS) {
            self.llm.timeout_ms = ms.trim().parse().map_err(|_| {
                PipelineError::Schema(format!("{ENV_LLM_TIMEOUT_MS}: not an integer: {ms:?}"))
            })?;
        }
        Ok(())
    }

    /// Parses configuration text; blank text yields all defaults.
    pub fn from_json_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: Config = if text.trim().is_empty() {
            Config::default()
        } else {
            serde_json::from_str(text).map_err(|e| PipelineError::Schema(format!("config: {e}")))?
        };
        let problems = cfg.violations();
        if !problems.is_empty() {
            return Err(PipelineError::Schema(format!("config: {}", problems.join("; "))));
        }
        Ok(cfg)
    }
}

/// Reads, validates and resolves a config file. Environment overrides for
/// the LLM endpoint and timeout are applied before validation.
pub fn load_config(path: &Path) -> Result<Config, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::MissingInput {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut cfg: Config = if text.trim().is_empty() {
        Config::default()
    } else {
        serde_json::from_str(&text).map_err(|e| PipelineError::Schema(format!("config: {e}")))?
    };
    cfg.apply_env()?;
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(PipelineError::Schema(format!("config: {}", problems.join("; "))));
    }
    cfg.resolve(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}
