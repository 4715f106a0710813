//! Run configuration: TOML file, then command-line overrides.

use std::path::PathBuf;

use anyhow::{bail, Result};
use dype_core::dataggen::{reference_mixture, DatasetSpec};
use dype_core::dynamic::{Placement, ScaleSchedule, YarnTarget};
use dype_core::extrapolation::{RampParams, DEFAULT_TRAIN_CONTEXT};
use dype_core::flow::DEFAULT_STEPS;
use dype_core::rope2d::DEFAULT_THETA_BASE;
use dype_core::tinydit::{ModelConfig, TrainConfig};
use dype_core::{AxisContext, PePolicy, PolicyKind};
use serde::{Deserialize, Serialize};

/// Error raised for malformed or inconsistent configuration.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_s: f64,
    pub lambda_t: f64,
    pub placement: Placement,
    pub target: YarnTarget,
    pub attention_scale: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let ramp = RampParams::default();
        let schedule = ScaleSchedule::default();
        Self {
            kind: PolicyKind::Vanilla,
            alpha: ramp.alpha,
            beta: ramp.beta,
            lambda_s: schedule.lambda_s,
            lambda_t: schedule.lambda_t,
            placement: schedule.placement,
            target: schedule.target,
            attention_scale: true,
        }
    }
}

impl PolicyConfig {
    pub fn build(&self, kind: PolicyKind, context: AxisContext) -> Result<PePolicy> {
        let schedule = ScaleSchedule::new(self.lambda_s, self.lambda_t)?
            .with_placement(self.placement)
            .with_target(self.target);
        let policy = PePolicy::new(kind, context)
            .with_ramp(RampParams::new(self.alpha, self.beta)?)
            .with_schedule(schedule)
            .with_attention_scale(self.attention_scale);
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RopeConfig {
    /// Policies listed in the table; empty means all.
    pub policies: Vec<PolicyKind>,
    pub times: Vec<f64>,
    pub pairs: usize,
    pub theta_base: f64,
    pub train_context: usize,
    pub test_context: usize,
}

impl Default for RopeConfig {
    fn default() -> Self {
        Self {
            policies: Vec::new(),
            times: vec![0.2, 0.8],
            pairs: 32,
            theta_base: DEFAULT_THETA_BASE,
            train_context: DEFAULT_TRAIN_CONTEXT,
            test_context: 4 * DEFAULT_TRAIN_CONTEXT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub times: Vec<f64>,
    /// Band for the power-law fit, in cycles per image side.
    pub fit_band: (f64, f64),
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            times: vec![0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0],
            fit_band: (2.0, 16.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub classes: Vec<usize>,
    /// Spectral-distance band; `None` uses 1 to half the test side.
    pub band: Option<(f64, f64)>,
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 8,
            classes: vec![0],
            band: None,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

/// Files a command reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub reference: Option<PathBuf>,
}

/// Everything a command needs; serialized verbatim into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: usize,
    /// Training resolution in pixels.
    pub train_side: usize,
    /// Inference resolution in pixels.
    pub test_side: usize,
    pub policy: PolicyConfig,
    pub rope: RopeConfig,
    pub spectrum: SpectrumConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub data: Vec<DatasetSpec>,
    pub inputs: Inputs,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::reference();
        Self {
            seed: 0,
            steps: DEFAULT_STEPS,
            train_side: model.image_side,
            test_side: 2 * model.image_side,
            policy: PolicyConfig::default(),
            rope: RopeConfig::default(),
            spectrum: SpectrumConfig::default(),
            train: TrainConfig::reference(),
            eval: EvalConfig::default(),
            data: reference_mixture(model.image_side),
            model,
            inputs: Inputs::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("reading {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| -> Result<()> { Err(ConfigError(m).into()) };
        if self.steps == 0 {
            return err("steps must be at least 1".into());
        }
        if self.train_side == 0 || self.test_side == 0 {
            return err("sides must be positive".into());
        }
        if self
            .rope
            .times
            .iter()
            .chain(&self.spectrum.times)
            .any(|t| !(0.0..=1.0).contains(t))
        {
            return err("times must lie in [0, 1]".into());
        }
        self.model.validate().map_err(|e| ConfigError(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError(e.to_string()))?;
        RampParams::new(self.policy.alpha, self.policy.beta).map_err(|e| ConfigError(e.to_string()))?;
        ScaleSchedule::new(self.policy.lambda_s, self.policy.lambda_t).map_err(|e| ConfigError(e.to_string()))?;
        for spec in &self.data {
            spec.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        if self.eval.samples == 0 || self.eval.classes.is_empty() || self.eval.seeds.is_empty() {
            return err("eval needs samples, classes and seeds".into());
        }
        Ok(())
    }

    /// Token-level axis context of the configured sides.
    pub fn token_context(&self) -> Result<AxisContext> {
        let p = self.model.patch_size;
        if !self.train_side.is_multiple_of(p) || !self.test_side.is_multiple_of(p) {
            bail!(dype_core::Error::Shape(format!(
                "sides {}/{} are not divisible by patch size {p}",
                self.train_side, self.test_side
            )));
        }
        Ok(AxisContext::new(self.train_side / p, self.test_side / p)?)
    }
}
