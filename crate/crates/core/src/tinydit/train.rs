use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainingMeta};
use super::config::ModelConfig;
use super::net::{TinyDit, TrainBatch};
use crate::dataggen::Dataset;
use crate::error::{Error, Result};
use crate::policy::PePolicy;
use crate::rng::{derive_seed, domain, stream};
use crate::rope2d::AxisContext;

/// SGD-with-momentum hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Number of trailing step losses kept in the checkpoint.
    #[serde(default = "default_tail")]
    pub tail_len: usize,
}

fn default_tail() -> usize {
    50
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
            grad_clip: None,
            tail_len: default_tail(),
        }
    }
}

impl TrainConfig {
    /// Settings used for the shipped reference checkpoint.
    pub fn reference() -> Self {
        Self {
            steps: 3000,
            lr: 2e-2,
            momentum: 0.9,
            batch_size: 64,
            seed: 7,
            grad_clip: Some(1.0),
            tail_len: 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "need lr > 0 and momentum in [0, 1), got {} and {}",
                self.lr, self.momentum
            )));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!("gradient clip {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Trains from a fresh initialization seeded by `opt.seed`.
pub fn train(config: &ModelConfig, dataset: &Dataset, opt: &TrainConfig) -> Result<Checkpoint> {
    train_with(config, dataset, opt, |_, _| {})
}

/// As [`train`], calling `on_step(step, loss)` after every update.
pub fn train_with(
    config: &ModelConfig,
    dataset: &Dataset,
    opt: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Checkpoint> {
    opt.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("training dataset".into()));
    }
    for img in &dataset.images {
        if img.dim() != (config.image_side, config.image_side) {
            return Err(Error::Shape(format!(
                "dataset image {:?} does not match training side {}",
                img.dim(),
                config.image_side
            )));
        }
    }
    let mut model = TinyDit::init(config.clone(), opt.seed)?;
    let policy = PePolicy::vanilla(AxisContext::native(config.train_grid()));
    let mut velocity = vec![0.0; model.params().len()];
    let mut tail = Vec::new();
    let mut baseline_tail = Vec::new();
    for step in 0..opt.steps {
        let mut rng = stream(opt.seed, domain::MINIBATCH, step as u64);
        let idx: Vec<usize> = (0..opt.batch_size)
            .map(|_| rng.random_range(0..dataset.len()))
            .collect();
        let batch = TrainBatch::gather(&dataset.images, &dataset.classes, &idx)?;
        let (loss, mut grad, zero) =
            model.loss_grad_baseline(&batch, derive_seed(opt.seed, domain::STEP, step as u64), &policy)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        if let Some(clip) = opt.grad_clip {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > clip {
                let k = clip / norm;
                grad.iter_mut().for_each(|g| *g *= k);
            }
        }
        for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
            *v = opt.momentum * *v + g;
            *p -= opt.lr * *v;
        }
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { step, loss: f64::NAN });
        }
        if opt.steps - step <= opt.tail_len {
            tail.push(loss);
            baseline_tail.push(zero);
        }
        on_step(step, loss);
    }
    let baseline_loss = if baseline_tail.is_empty() {
        0.0
    } else {
        baseline_tail.iter().sum::<f64>() / baseline_tail.len() as f64
    };
    Checkpoint::new(
        &model,
        TrainingMeta {
            steps: opt.steps,
            seed: opt.seed,
            lr: opt.lr,
            momentum: opt.momentum,
            batch_size: opt.batch_size,
            baseline_loss,
            loss_tail: tail,
        },
    )
}
