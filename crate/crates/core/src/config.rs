//! TOML run configuration. Unknown keys are rejected everywhere; secrets
//! only enter through the environment variables named by `api_key_env`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::BackendConfig;
use crate::evaluation::{EvalMode, DEFAULT_REFUSALS};
use crate::pipeline::{MergePromptTemplate, PromptKind, TemplatePreset};
use crate::theory::{
    AlphaSource, ConcaveErrorModel, EtaSource, MergeSpec, MonteCarloConfig, Perturbation, PhiKind,
    SignPolicy, SplitSpec,
};

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backends: BackendsSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub captioner: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merger: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa_answerer: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nli_judge: Option<BackendConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedder: Option<BackendConfig>,
}

fn one() -> u32 {
    1
}
fn yes() -> bool {
    true
}
fn four() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    #[serde(default = "one")]
    pub depth: u32,
    #[serde(default)]
    pub template: TemplatePreset,
    /// Overrides `template` with a file in the exported section format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    #[serde(default)]
    pub prompt_kind: PromptKind,
    #[serde(default = "yes")]
    pub baselines: bool,
    #[serde(default = "four")]
    pub max_concurrent_images: usize,
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            depth: 1,
            template: TemplatePreset::default(),
            template_file: None,
            prompt_kind: PromptKind::default(),
            baselines: true,
            max_concurrent_images: 4,
            record_wall_time: false,
        }
    }
}

impl PipelineSection {
    pub fn merge_template(&self) -> Result<MergePromptTemplate> {
        match &self.template_file {
            None => Ok(self.template.template()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    ConfigError(format!("pipeline.template_file {}: {e}", p.display()))
                })?;
                MergePromptTemplate::parse_file(&text).map_err(|e| {
                    ConfigError(format!("pipeline.template_file {}: {e}", p.display()))
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignChoice {
    AllNegative,
    AllPositive,
    #[default]
    SeededRandom,
    Alternating,
}

/// `"uniform"` or a fixed value in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaChoice {
    Fixed(f64),
    Named(String),
}

/// `"dirichlet"` or explicit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaChoice {
    Fixed(Vec<f64>),
    Named(String),
}

fn n_default() -> usize {
    32
}
fn trials_default() -> u64 {
    10_000
}
fn scale_default() -> f64 {
    1.0
}
fn eta_default() -> EtaChoice {
    EtaChoice::Named("uniform".into())
}
fn alpha_default() -> AlphaChoice {
    AlphaChoice::Named("dirichlet".into())
}
fn phis_default() -> Vec<PhiKind> {
    PhiKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(default = "n_default")]
    pub n: usize,
    #[serde(default = "four")]
    pub m: usize,
    #[serde(default = "trials_default")]
    pub trials: u64,
    #[serde(default = "phis_default")]
    pub phis: Vec<PhiKind>,
    #[serde(default = "scale_default")]
    pub scale: f64,
    #[serde(default)]
    pub sign: SignChoice,
    #[serde(default = "eta_default")]
    pub eta: EtaChoice,
    #[serde(default = "alpha_default")]
    pub alpha: AlphaChoice,
    #[serde(default)]
    pub valid_semantics: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Runs the violation study with this perturbation in addition to the
    /// assumption-satisfying runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<Perturbation>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n: n_default(),
            m: 4,
            trials: trials_default(),
            phis: phis_default(),
            scale: 1.0,
            sign: SignChoice::default(),
            eta: eta_default(),
            alpha: alpha_default(),
            valid_semantics: false,
            threads: None,
            study: None,
        }
    }
}

impl SimulateSection {
    /// One validated config per requested `phi` kind.
    pub fn monte_carlo_configs(&self, seed: u64) -> Result<Vec<MonteCarloConfig>> {
        let err =
            |key: &str, e: &dyn std::fmt::Display| ConfigError(format!("simulate.{key}: {e}"));
        if self.phis.is_empty() {
            return Err(ConfigError(
                "simulate.phis: at least one kind is required".into(),
            ));
        }
        let eta = match &self.eta {
            EtaChoice::Named(s) if s == "uniform" => EtaSource::Uniform,
            EtaChoice::Named(s) => {
                return Err(ConfigError(format!(
                    "simulate.eta: expected \"uniform\" or a number, got {s:?}"
                )))
            }
            EtaChoice::Fixed(v) => EtaSource::Fixed {
                value: MergeSpec::new(*v).map_err(|e| err("eta", &e))?,
            },
        };
        let alpha = match &self.alpha {
            AlphaChoice::Named(s) if s == "dirichlet" => AlphaSource::Dirichlet,
            AlphaChoice::Named(s) => {
                return Err(ConfigError(format!(
                    "simulate.alpha: expected \"dirichlet\" or a list of weights, got {s:?}"
                )))
            }
            AlphaChoice::Fixed(w) => AlphaSource::Fixed {
                weights: SplitSpec::new(w.clone()).map_err(|e| err("alpha", &e))?,
            },
        };
        let sign = match self.sign {
            SignChoice::AllNegative => SignPolicy::AllNegative,
            SignChoice::AllPositive => SignPolicy::AllPositive,
            SignChoice::SeededRandom => SignPolicy::SeededRandom { seed },
            SignChoice::Alternating => SignPolicy::Alternating,
        };
        self.phis
            .iter()
            .map(|&kind| {
                let phi = ConcaveErrorModel::new(kind, self.scale).map_err(|e| err("scale", &e))?;
                let mut cfg = MonteCarloConfig::new(self.n, self.m, self.trials, seed, phi);
                cfg.sign = sign;
                cfg.eta = eta;
                cfg.alpha = alpha.clone();
                cfg.valid_semantics = self.valid_semantics;
                cfg.threads = self.threads;
                cfg.validate()
                    .map_err(|e| ConfigError(format!("simulate: {e}")))?;
                Ok(cfg)
            })
            .collect()
    }
}

fn default_refusals() -> Vec<String> {
    DEFAULT_REFUSALS.iter().map(|s| s.to_string()).collect()
}

fn vqa() -> EvalMode {
    EvalMode::Vqa
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "vqa")]
    pub mode: EvalMode,
    /// JSON-lines `{image_id, question, answers}`; questions embedded in the
    /// pipeline manifest are used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vqa_manifest: Option<PathBuf>,
    #[serde(default = "yes")]
    pub nli: bool,
    #[serde(default)]
    pub no_caption: bool,
    #[serde(default = "yes")]
    pub clip: bool,
    #[serde(default = "default_refusals")]
    pub refusals: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: EvalMode::Vqa,
            vqa_manifest: None,
            nli: true,
            no_caption: false,
            clip: true,
            refusals: default_refusals(),
        }
    }
}

fn out_default() -> PathBuf {
    PathBuf::from("poca-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default = "out_default")]
    pub out: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            manifest: None,
            out: out_default(),
            cache: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Checks everything that can be checked without touching backends.
    pub fn validate(&self) -> Result<()> {
        if self.pipeline.depth == 0 {
            return Err(ConfigError("pipeline.depth: must be at least 1".into()));
        }
        if self.pipeline.max_concurrent_images == 0 {
            return Err(ConfigError(
                "pipeline.max_concurrent_images: must be at least 1".into(),
            ));
        }
        let roles = [
            ("captioner", &self.backends.captioner),
            ("merger", &self.backends.merger),
            ("vqa_answerer", &self.backends.vqa_answerer),
            ("nli_judge", &self.backends.nli_judge),
            ("embedder", &self.backends.embedder),
        ];
        for (role, cfg) in roles {
            if let Some(c) = cfg {
                c.validate()
                    .map_err(|e| ConfigError(format!("backends.{role}: {e}")))?;
            }
        }
        self.simulate.monte_carlo_configs(self.seed)?;
        Ok(())
    }
}
