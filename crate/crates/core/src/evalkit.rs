//! Extrapolation metrics and the scheduler ablation harness.
//!
//! Two stand-ins for perceptual metrics:
//!
//! * `spectral_distance`: RMS natural-log power difference to a reference
//!   spectrum over a band (fidelity).
//! * `artifact_score`: peak normalized autocorrelation at lags longer than
//!   half the training side (repetition artifacts).

use std::fmt::Write as _;

use ndarray::Array2;
use rand::RngExt;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamic::{Placement, ScaleSchedule, YarnTarget};
use crate::error::{Error, Result};
use crate::flow::{euler_sample, StepGrid, DEFAULT_STEPS};
use crate::policy::{PePolicy, PolicyKind};
use crate::rng::{domain, stream};
use crate::rope2d::AxisContext;
use crate::spectral::{fft2, ifft2, radial_psd, signed_freq, RadialSpectrum};
use crate::tinydit::{ConditionedModel, TinyDit};

/// Header line of every report CSV.
pub const REPORT_CSV_HEADER: &str =
    "policy,placement,lambda_s,lambda_t,target,resolution,seed,spectral_distance,artifact_score";

/// RMS of `ln(generated) - ln(reference)` over bins with `lo <= f <= hi`.
pub fn spectral_distance(generated: &RadialSpectrum, reference: &RadialSpectrum, band: (f64, f64)) -> Result<f64> {
    if generated.freq != reference.freq {
        return Err(Error::Shape(format!(
            "spectra have different bins ({} vs {})",
            generated.bins(),
            reference.bins()
        )));
    }
    let idx: Vec<usize> = generated
        .band_indices(band.0, band.1)
        .into_iter()
        .filter(|&i| generated.power[i] > 0.0 && reference.power[i] > 0.0)
        .collect();
    if idx.is_empty() {
        return Err(Error::Band(band.0, band.1));
    }
    let ms = idx
        .iter()
        .map(|&i| (generated.power[i].ln() - reference.power[i].ln()).powi(2))
        .sum::<f64>()
        / idx.len() as f64;
    Ok(ms.sqrt())
}

/// Peak circular autocorrelation (normalized to 1 at lag 0) over lags whose
/// magnitude lies in `(train_side / 2, test_side / 2]`, clamped to `[0, 1]`.
/// A constant image scores 0.
pub fn artifact_score(image: &Array2<f64>, train_side: usize, test_side: usize) -> Result<f64> {
    if test_side <= train_side {
        return Err(Error::InvalidExtrapolation {
            train: train_side,
            test: test_side,
        });
    }
    let mean = image
        .mean()
        .ok_or_else(|| Error::EmptyInput("artifact score of an empty image".into()))?;
    let centered = image.mapv(|v| v - mean);
    let energy: f64 = centered.iter().map(|v| v * v).sum();
    if !(energy > 0.0) {
        return Ok(0.0);
    }
    let mut planner = FftPlanner::new();
    let spec = fft2(&centered, &mut planner).mapv(|c| Complex::new(c.norm_sqr(), 0.0));
    let acf = ifft2(&spec, &mut planner);
    let zero = acf[[0, 0]].re;
    let (h, w) = image.dim();
    let (lo, hi) = (train_side as f64 / 2.0, test_side as f64 / 2.0);
    let mut best = 0.0f64;
    for ((i, j), c) in acf.indexed_iter() {
        let (dy, dx) = (signed_freq(i, h), signed_freq(j, w));
        let r = (dx * dx + dy * dy).sqrt();
        if r > lo && r <= hi {
            best = best.max(c.re / zero);
        }
    }
    Ok(best.clamp(0.0, 1.0))
}

/// How samples for one evaluation are drawn and scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    /// Training side in pixels.
    pub train_side: usize,
    /// Sampling side in pixels.
    pub test_side: usize,
    pub samples: usize,
    pub steps: usize,
    /// Classes to sample, cycled over the batch.
    pub classes: Vec<usize>,
    /// Frequency band for the spectral distance, in cycles per image side.
    pub band: (f64, f64),
}

impl EvalSettings {
    pub fn new(train_side: usize, test_side: usize) -> Self {
        Self {
            train_side,
            test_side,
            samples: 8,
            steps: DEFAULT_STEPS,
            classes: vec![0],
            band: (1.0, (test_side / 2) as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.test_side <= self.train_side {
            return Err(Error::InvalidExtrapolation {
                train: self.train_side,
                test: self.test_side,
            });
        }
        if self.samples == 0 || self.classes.is_empty() {
            return Err(Error::InvalidParameter("need at least one sample and one class".into()));
        }
        Ok(())
    }

    /// Class of sample `i`.
    pub fn class_of(&self, i: usize) -> usize {
        self.classes[i % self.classes.len()]
    }
}

/// One evaluated policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: PePolicy,
    pub descriptor: String,
    pub resolution: usize,
    pub spectral_distance: f64,
    pub artifact_score: f64,
    pub sample_count: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn csv_row(&self) -> String {
        let p = &self.policy;
        let (placement, ls, lt, target) = match p.kind {
            PolicyKind::DyPi | PolicyKind::DyNtk => (
                p.schedule.placement.name(),
                p.schedule.lambda_s.to_string(),
                p.schedule.lambda_t.to_string(),
                "-",
            ),
            PolicyKind::DyYarn => (
                p.schedule.placement.name(),
                p.schedule.lambda_s.to_string(),
                p.schedule.lambda_t.to_string(),
                p.schedule.target.name(),
            ),
            _ => ("-", "-".into(), "-".into(), "-"),
        };
        format!(
            "{},{placement},{ls},{lt},{target},{},{},{:.6},{:.6}",
            p.kind, self.resolution, self.seed, self.spectral_distance, self.artifact_score
        )
    }
}

/// Header comment plus CSV of reports.
pub fn reports_csv(rows: &[EvalReport]) -> String {
    let mut out = String::from(
        "# spectral_distance: RMS log-PSD gap to the reference data (fidelity); \
         artifact_score: autocorrelation peak beyond the training context (repetition)\n",
    );
    out.push_str(REPORT_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// A policy of `kind` mapping the model's training grid to `test_side`.
pub fn policy_for(kind: PolicyKind, model: &TinyDit, test_side: usize) -> Result<PePolicy> {
    let cfg = model.config();
    let ctx = AxisContext::new(cfg.train_grid(), cfg.grid_for(test_side)?)?;
    Ok(PePolicy::new(kind, ctx))
}

/// Generates `settings.samples` images under `policy` with sampler seed `seed`.
pub fn sample_images(
    model: &TinyDit,
    policy: &PePolicy,
    settings: &EvalSettings,
    seed: u64,
) -> Result<Vec<Array2<f64>>> {
    let side = settings.test_side;
    model.config().grid_for(side)?;
    let classes: Vec<usize> = (0..settings.samples).map(|i| settings.class_of(i)).collect();
    let cond = ConditionedModel {
        model,
        classes: &classes,
    };
    let grid = StepGrid::uniform(settings.steps)?;
    let out = euler_sample(&cond, &grid, policy, seed, (settings.samples, 1, side, side))?;
    Ok(out
        .samples
        .outer_iter()
        .map(|s| s.index_axis(ndarray::Axis(0), 0).to_owned())
        .collect())
}

/// Scores generated images against a reference spectrum at the test side.
pub fn score_images(images: &[Array2<f64>], reference: &RadialSpectrum, settings: &EvalSettings) -> Result<(f64, f64)> {
    let spectrum = radial_psd(images, reference.bins())?;
    let sd = spectral_distance(&spectrum, reference, settings.band)?;
    let mut art = 0.0;
    for img in images {
        art += artifact_score(img, settings.train_side, settings.test_side)?;
    }
    let art = art / images.len() as f64;
    if !sd.is_finite() || !art.is_finite() {
        return Err(Error::numeric("evaluation", "non-finite metric"));
    }
    Ok((sd, art))
}

/// Samples and scores one policy.
pub fn evaluate(
    model: &TinyDit,
    policy: &PePolicy,
    reference: &RadialSpectrum,
    settings: &EvalSettings,
    seed: u64,
) -> Result<EvalReport> {
    settings.validate()?;
    let images = sample_images(model, policy, settings, seed)?;
    let (spectral_distance, artifact_score) = score_images(&images, reference, settings)?;
    Ok(EvalReport {
        policy: policy.clone(),
        descriptor: policy.descriptor(),
        resolution: settings.test_side,
        spectral_distance,
        artifact_score,
        sample_count: images.len(),
        seed,
    })
}

/// The scheduler grid: Dy-NTK over placements x lambda_s x lambda_t, and
/// Dy-YaRN over its kappa targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub placements: Vec<Placement>,
    pub lambda_s: Vec<f64>,
    pub lambda_t: Vec<f64>,
    pub targets: Vec<YarnTarget>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            placements: Placement::ALL.to_vec(),
            lambda_s: vec![1.0, 1.5, 2.0, 2.5],
            lambda_t: vec![0.5, 1.0, 2.0],
            targets: YarnTarget::ALL.to_vec(),
        }
    }
}

impl AblationSpec {
    /// Policies in output order (before the seed loop).
    pub fn policies(&self, base: &PePolicy) -> Result<Vec<PePolicy>> {
        let mut out = Vec::new();
        for &placement in &self.placements {
            for &ls in &self.lambda_s {
                for &lt in &self.lambda_t {
                    let schedule = ScaleSchedule::new(ls, lt)?.with_placement(placement);
                    let mut p = base.clone().with_schedule(schedule);
                    p.kind = PolicyKind::DyNtk;
                    out.push(p);
                }
            }
        }
        for &target in &self.targets {
            let mut p = base.clone().with_schedule(ScaleSchedule::default().with_target(target));
            p.kind = PolicyKind::DyYarn;
            out.push(p);
        }
        Ok(out)
    }
}

/// Runs every grid cell for every seed with default ramp settings; rows are
/// cell-major, seed-minor.
pub fn ablation_grid(
    model: &TinyDit,
    spec: &AblationSpec,
    reference: &RadialSpectrum,
    settings: &EvalSettings,
    seeds: &[u64],
) -> Result<Vec<EvalReport>> {
    let base = policy_for(PolicyKind::DyNtk, model, settings.test_side)?;
    ablation_grid_from(&base, model, spec, reference, settings, seeds)
}

/// As [`ablation_grid`], deriving every cell from `base`.
pub fn ablation_grid_from(
    base: &PePolicy,
    model: &TinyDit,
    spec: &AblationSpec,
    reference: &RadialSpectrum,
    settings: &EvalSettings,
    seeds: &[u64],
) -> Result<Vec<EvalReport>> {
    let mut rows = Vec::new();
    for policy in spec.policies(base)? {
        for &seed in seeds {
            rows.push(evaluate(model, &policy, reference, settings, seed)?);
        }
    }
    Ok(rows)
}

/// Mean radial spectrum of reference images, with bins up to the Nyquist
/// radius.
pub fn reference_spectrum(images: &[Array2<f64>]) -> Result<RadialSpectrum> {
    let side = images
        .first()
        .ok_or_else(|| Error::EmptyInput("reference images".into()))?
        .nrows();
    radial_psd(images, side / 2 + 1)
}

/// Picks `n` class labels uniformly from `classes` with a seeded stream.
pub fn random_classes(classes: &[usize], n: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, domain::CLASSES, 0);
    (0..n).map(|_| classes[rng.random_range(0..classes.len())]).collect()
}
