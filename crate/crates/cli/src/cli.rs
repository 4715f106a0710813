//! Command-line front end.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use dype_core::dynamic::{Placement, YarnTarget};
use dype_core::PolicyKind;
use serde::de::DeserializeOwned;

use crate::commands::{dispatch, seeds_of};
use crate::config::{ConfigError, RunConfig};
use crate::manifest::RunManifest;

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "dype", version, about = "Dynamic positional extrapolation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Effective RoPE frequencies and wavelengths per policy and time.
    RopeTable,
    /// Radial spectra of noised data and the progression map.
    Spectrum,
    /// Writes a synthetic dataset as PGM files plus a manifest.
    GenerateData,
    /// Trains the toy DiT and writes a checkpoint.
    Train,
    /// Samples images from a checkpoint under a policy.
    Sample,
    /// Scores a directory of samples against reference data.
    Evaluate,
    /// Runs the scheduler ablation grid.
    Ablate,
    /// Reruns a recorded command and checks its outputs match.
    Replay {
        /// Path to a run.json manifest.
        manifest: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::RopeTable => "rope-table",
            Command::Spectrum => "spectrum",
            Command::GenerateData => "generate-data",
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::Replay { .. } => "replay",
        }
    }
}

fn serde_name<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn placement(s: &str) -> std::result::Result<Placement, String> {
    serde_name(s)
}

fn target(s: &str) -> std::result::Result<YarnTarget, String> {
    serde_name(s)
}

/// Options shared by every command; each replaces the matching config value.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for outputs and run.json.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sampler steps.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub train_side: Option<usize>,
    #[arg(long, global = true)]
    pub test_side: Option<usize>,
    /// Policy kind; also restricts rope-table to that kind.
    #[arg(long, global = true)]
    pub policy: Option<PolicyKind>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_s: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_t: Option<f64>,
    /// exponent | multiplicative
    #[arg(long, global = true, value_parser = placement)]
    pub placement: Option<Placement>,
    /// ntk_term | by_parts_thresholds | both
    #[arg(long, global = true, value_parser = target)]
    pub target: Option<YarnTarget>,
    /// Diffusion times for rope-table and spectrum.
    #[arg(long, global = true, value_delimiter = ',')]
    pub times: Option<Vec<f64>>,
    /// Images per evaluation.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub classes: Option<Vec<usize>>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of sampled images.
    #[arg(long, global = true)]
    pub samples_dir: Option<PathBuf>,
    /// Reference dataset directory.
    #[arg(long, global = true)]
    pub reference: Option<PathBuf>,
}

impl Overrides {
    /// Loads the config file (or defaults) and applies every given flag.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = &$src {
                    $dst = v.clone();
                }
            };
        }
        set!(self.seed => cfg.seed);
        set!(self.steps => cfg.steps);
        set!(self.train_side => cfg.train_side);
        set!(self.test_side => cfg.test_side);
        if let Some(kind) = self.policy {
            cfg.policy.kind = kind;
            cfg.rope.policies = vec![kind];
        }
        set!(self.alpha => cfg.policy.alpha);
        set!(self.beta => cfg.policy.beta);
        set!(self.lambda_s => cfg.policy.lambda_s);
        set!(self.lambda_t => cfg.policy.lambda_t);
        set!(self.placement => cfg.policy.placement);
        set!(self.target => cfg.policy.target);
        set!(self.samples => cfg.eval.samples);
        set!(self.classes => cfg.eval.classes);
        if let Some(times) = &self.times {
            cfg.rope.times = times.clone();
            cfg.spectrum.times = times.clone();
        }
        if self.data.is_some() {
            cfg.inputs.data = self.data.clone();
        }
        if self.checkpoint.is_some() {
            cfg.inputs.checkpoint = self.checkpoint.clone();
        }
        if self.samples_dir.is_some() {
            cfg.inputs.samples = self.samples_dir.clone();
        }
        if self.reference.is_some() {
            cfg.inputs.reference = self.reference.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs one command and writes its manifest into `out`.
pub fn run_command(command: &str, cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    let outputs = dispatch(command, cfg, out)?;
    let manifest = RunManifest::new(
        command,
        cfg,
        seeds_of(command, cfg),
        out,
        &outputs,
        start.elapsed().as_secs_f64(),
    )?;
    manifest.write(out)?;
    Ok(manifest)
}

/// Reruns the command recorded in `manifest` into `out` and fails if any
/// output hash differs.
pub fn replay(manifest: &Path, out: &Path) -> Result<RunManifest> {
    let old = RunManifest::load(manifest)?;
    let new = run_command(&old.command, &old.config, out)?;
    let differing: Vec<&str> = old
        .outputs
        .iter()
        .filter(|f| !new.outputs.contains(f))
        .map(|f| f.path.as_str())
        .collect();
    if !differing.is_empty() || old.outputs.len() != new.outputs.len() {
        bail!("replay produced different outputs: {}", differing.join(", "));
    }
    Ok(new)
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    let out = &cli.overrides.out_dir;
    match &cli.command {
        Command::Replay { manifest } => replay(manifest, out),
        cmd => run_command(cmd.name(), &cli.overrides.resolve()?, out),
    }
}

/// Process exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<dype_core::Error>() {
            return match e {
                dype_core::Error::Shape(_) | dype_core::Error::InvalidExtrapolation { .. } => EXIT_SHAPE,
                _ => EXIT_OTHER,
            };
        }
    }
    EXIT_OTHER
}
