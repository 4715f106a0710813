//! Command implementations. Each takes a resolved [`RunConfig`] and an output
//! directory, writes its files there and returns their paths.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dype_core::dataggen::{generate_mix, load_dataset, save_dataset, save_dataset_in_range, Dataset};
use dype_core::dynamic::{wavelength_csv, wavelength_report};
use dype_core::evalkit::{
    ablation_grid_from, reference_spectrum, reports_csv, score_images, AblationSpec, EvalReport, EvalSettings,
};
use dype_core::flow::{euler_sample, initial_noise, StepGrid};
use dype_core::spectral::{fit_power_law, progression_map, radial_psd};
use dype_core::tinydit::{train_with, Checkpoint, ConditionedModel, TinyDit};
use dype_core::{AxisContext, FrequencyTable, PePolicy, PolicyKind};
use ndarray::Array2;

use crate::config::{ConfigError, RunConfig};

/// Storage range of sampled images.
pub const SAMPLE_RANGE: (f64, f64) = (-4.0, 4.0);

pub const COMMANDS: [&str; 7] = [
    "rope-table",
    "spectrum",
    "generate-data",
    "train",
    "sample",
    "evaluate",
    "ablate",
];

/// Runs `command` by name; used for direct calls and manifest replay.
pub fn dispatch(command: &str, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match command {
        "rope-table" => rope_table(cfg, out),
        "spectrum" => spectrum(cfg, out),
        "generate-data" => generate_data(cfg, out),
        "train" => train(cfg, out),
        "sample" => sample(cfg, out),
        "evaluate" => evaluate(cfg, out),
        "ablate" => ablate(cfg, out),
        other => bail!(ConfigError(format!("unknown command '{other}'"))),
    }
}

/// Seeds a command consumes, for the manifest.
pub fn seeds_of(command: &str, cfg: &RunConfig) -> Vec<u64> {
    match command {
        "train" => vec![cfg.train.seed],
        "generate-data" => cfg.data.iter().map(|d| d.seed).collect(),
        "ablate" => cfg.eval.seeds.clone(),
        "rope-table" => Vec::new(),
        _ => vec![cfg.seed],
    }
}

fn write(out: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = out.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn rope_table(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let r = &cfg.rope;
    let base = FrequencyTable::new(r.pairs, r.theta_base)?;
    let ctx = AxisContext::new(r.train_context, r.test_context)?;
    let kinds: Vec<PolicyKind> = if r.policies.is_empty() {
        PolicyKind::ALL.to_vec()
    } else {
        r.policies.clone()
    };
    let mut rows = Vec::new();
    for kind in kinds {
        rows.extend(wavelength_report(&cfg.policy.build(kind, ctx)?, &base, &r.times)?);
    }
    Ok(vec![write(out, "rope_table.csv", wavelength_csv(&rows))?])
}

fn input_images(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(dir) = cfg.inputs.samples.as_ref().or(cfg.inputs.data.as_ref()) {
        Ok(load_dataset(dir)
            .with_context(|| format!("loading {}", dir.display()))?
            .1)
    } else {
        Ok(generate_mix(&cfg.data)?)
    }
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = input_images(cfg)?;
    let side = data.side().ok_or_else(|| anyhow!("no images"))?;
    let bins = side / 2 + 1;
    let noise = initial_noise(cfg.seed, (data.len(), 1, side, side));
    let mut spectra = Vec::with_capacity(cfg.spectrum.times.len());
    for &t in &cfg.spectrum.times {
        let noised: Vec<Array2<f64>> = data
            .images
            .iter()
            .zip(noise.outer_iter())
            .map(|(x, e)| (1.0 - t) * x + t * &e.index_axis(ndarray::Axis(0), 0))
            .collect();
        spectra.push((t, radial_psd(&noised, bins)?));
    }
    let mut csv = String::from("t,freq,power\n");
    for (t, s) in &spectra {
        for (f, p) in s.freq.iter().zip(&s.power) {
            let _ = writeln!(csv, "{t},{f},{p:e}");
        }
    }
    let map = progression_map(&spectra)?;
    let mut outputs = vec![
        write(out, "spectra.csv", csv)?,
        write(out, "progression.csv", map.to_csv())?,
        write(out, "progression.pgm", map.to_heatmap().encode())?,
    ];
    let mut half = String::from("freq,half_progress_elapsed\n");
    for (j, f) in map.freq.iter().enumerate() {
        match map.half_progress_elapsed(j) {
            Some(v) => writeln!(half, "{f},{v}")?,
            None => writeln!(half, "{f},")?,
        }
    }
    outputs.push(write(out, "half_progress.csv", half)?);
    if let Some((_, clean)) = spectra.iter().find(|(t, _)| *t == 0.0) {
        let fit = fit_power_law(clean, cfg.spectrum.fit_band)?;
        outputs.push(write(out, "fit.json", serde_json::to_vec_pretty(&fit)?)?);
    }
    Ok(outputs)
}

pub fn generate_data(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = generate_mix(&cfg.data)?;
    Ok(save_dataset(out, &cfg.data, &data)?)
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let data = match &cfg.inputs.data {
        Some(dir) => load_dataset(dir)?.1,
        None => generate_mix(&cfg.data)?,
    };
    let mut losses = Vec::with_capacity(cfg.train.steps);
    let ck = train_with(&cfg.model, &data, &cfg.train, |step, loss| {
        if step % 100 == 0 {
            eprintln!("step {step}: loss {loss:.5}");
        }
        losses.push(loss);
    })?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    let path = out.join("model.ckpt");
    ck.save(&path)?;
    Ok(vec![path, write(out, "loss.csv", csv)?])
}

fn load_checkpoint(cfg: &RunConfig) -> Result<TinyDit> {
    let path = cfg
        .inputs
        .checkpoint
        .as_ref()
        .ok_or_else(|| ConfigError("this command needs --checkpoint".into()))?;
    Ok(Checkpoint::load(path)
        .with_context(|| format!("loading {}", path.display()))?
        .into_model())
}

/// Policy from the config, with contexts from the model's training grid and
/// the configured test side. Fails on indivisible sides before any compute.
fn model_policy(cfg: &RunConfig, model: &TinyDit) -> Result<PePolicy> {
    let mc = model.config();
    let test = mc.grid_for(cfg.test_side)?;
    cfg.policy
        .build(cfg.policy.kind, AxisContext::new(mc.train_grid(), test)?)
}

fn settings(cfg: &RunConfig, model: &TinyDit) -> EvalSettings {
    let mut s = EvalSettings::new(model.config().image_side, cfg.test_side);
    s.samples = cfg.eval.samples;
    s.steps = cfg.steps;
    s.classes = cfg.eval.classes.clone();
    if let Some(b) = cfg.eval.band {
        s.band = b;
    }
    s
}

pub fn sample(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let model = load_checkpoint(cfg)?;
    let policy = model_policy(cfg, &model)?;
    let st = settings(cfg, &model);
    let classes: Vec<usize> = (0..st.samples).map(|i| st.class_of(i)).collect();
    let cond = ConditionedModel {
        model: &model,
        classes: &classes,
    };
    let side = cfg.test_side;
    let result = euler_sample(
        &cond,
        &StepGrid::uniform(st.steps)?,
        &policy,
        cfg.seed,
        (st.samples, 1, side, side),
    )?;
    let images: Vec<Array2<f64>> = result
        .samples
        .outer_iter()
        .map(|s| s.index_axis(ndarray::Axis(0), 0).to_owned())
        .collect();
    let data = Dataset { images, classes };
    let mut outputs = save_dataset_in_range(out, &[], &data, SAMPLE_RANGE)?;
    let mut trace = String::from("step,grid_t,policy_t\n");
    for r in &result.trace {
        let _ = writeln!(trace, "{},{},{}", r.step, r.grid_t, r.policy_t);
    }
    outputs.push(write(out, "trace.csv", trace)?);
    outputs.push(write(out, "policy.json", serde_json::to_vec_pretty(&policy)?)?);
    Ok(outputs)
}

/// Reference images at the test side: a given dataset, or the configured
/// specs restricted to the evaluated classes.
fn reference_images(cfg: &RunConfig) -> Result<Vec<Array2<f64>>> {
    if let Some(dir) = &cfg.inputs.reference {
        return Ok(load_dataset(dir)?.1.images);
    }
    let specs: Vec<_> = cfg
        .data
        .iter()
        .filter(|s| s.classes().iter().any(|c| cfg.eval.classes.contains(c)))
        .map(|s| s.with_side(cfg.test_side))
        .collect();
    if specs.is_empty() {
        bail!(ConfigError("no data spec produces the evaluated classes".into()));
    }
    Ok(generate_mix(&specs)?.images)
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let dir = cfg
        .inputs
        .samples
        .as_ref()
        .ok_or_else(|| ConfigError("evaluate needs --samples-dir".into()))?;
    let (_, samples) = load_dataset(dir)?;
    let side = samples.side().unwrap_or(0);
    if side != cfg.test_side {
        bail!(dype_core::Error::Shape(format!(
            "samples are {side} px but test side is {}",
            cfg.test_side
        )));
    }
    let reference = reference_spectrum(&reference_images(cfg)?)?;
    let mut st = EvalSettings::new(cfg.train_side, cfg.test_side);
    if let Some(b) = cfg.eval.band {
        st.band = b;
    }
    let (spectral_distance, artifact_score) = score_images(&samples.images, &reference, &st)?;
    let policy = match dir.join("policy.json") {
        p if p.exists() => serde_json::from_slice(&fs::read(p)?)?,
        _ => cfg.policy.build(cfg.policy.kind, cfg.token_context()?)?,
    };
    let report = EvalReport {
        descriptor: PePolicy::descriptor(&policy),
        policy,
        resolution: side,
        spectral_distance,
        artifact_score,
        sample_count: samples.len(),
        seed: cfg.seed,
    };
    Ok(vec![
        write(out, "report.csv", reports_csv(std::slice::from_ref(&report)))?,
        write(out, "report.json", serde_json::to_vec_pretty(&report)?)?,
    ])
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let model = load_checkpoint(cfg)?;
    let base = model_policy(cfg, &model)?;
    let reference = reference_spectrum(&reference_images(cfg)?)?;
    let st = settings(cfg, &model);
    let rows = ablation_grid_from(
        &base,
        &model,
        &AblationSpec::default(),
        &reference,
        &st,
        &cfg.eval.seeds,
    )?;
    Ok(vec![write(out, "ablation.csv", reports_csv(&rows))?])
}
