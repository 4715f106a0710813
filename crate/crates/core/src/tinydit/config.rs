use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope2d::FrequencyTable;

fn default_theta_base() -> f64 {
    crate::rope2d::DEFAULT_THETA_BASE
}

fn default_time_features() -> usize {
    16
}

/// Architecture of the toy diffusion transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Training resolution in pixels.
    pub image_side: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_ratio: usize,
    pub class_count: usize,
    #[serde(default = "default_theta_base")]
    pub theta_base: f64,
    /// Sinusoid count of the time embedding (each gives a sin and a cos).
    #[serde(default = "default_time_features")]
    pub time_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_side: 32,
            patch_size: 2,
            d_model: 128,
            heads: 4,
            layers: 4,
            mlp_ratio: 4,
            class_count: 8,
            theta_base: default_theta_base(),
            time_features: default_time_features(),
        }
    }
}

impl ModelConfig {
    /// Configuration of the shipped reference checkpoint, sized to train on
    /// one CPU core in minutes.
    pub fn reference() -> Self {
        Self {
            image_side: 32,
            patch_size: 4,
            d_model: 64,
            heads: 4,
            layers: 3,
            mlp_ratio: 2,
            class_count: 4,
            theta_base: 1e-4,
            time_features: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.patch_size == 0 || self.image_side == 0 || !self.image_side.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image side {} must be a positive multiple of patch size {}",
                self.image_side, self.patch_size
            ));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(4 * self.heads) {
            return bad(format!(
                "d_model {} must be divisible by 4 * heads ({})",
                self.d_model,
                4 * self.heads
            ));
        }
        if self.d_head() / 4 < 2 {
            return bad(format!(
                "head width {} gives fewer than 2 rotary pairs per axis",
                self.d_head()
            ));
        }
        if self.layers == 0 || self.mlp_ratio == 0 || self.class_count == 0 || self.time_features == 0 {
            return bad("layers, mlp_ratio, class_count and time_features must be >= 1".into());
        }
        FrequencyTable::new(self.pairs(), self.theta_base)?;
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    /// Rotary pairs per axis in one head.
    pub fn pairs(&self) -> usize {
        self.d_head() / 4
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn hidden(&self) -> usize {
        self.d_model * self.mlp_ratio
    }

    /// Tokens per axis at the training resolution.
    pub fn train_grid(&self) -> usize {
        self.image_side / self.patch_size
    }

    /// Tokens per axis for an image side, or a shape error.
    pub fn grid_for(&self, side: usize) -> Result<usize> {
        if side == 0 || !side.is_multiple_of(self.patch_size) {
            return Err(Error::Shape(format!(
                "resolution {side} is not divisible by patch size {}",
                self.patch_size
            )));
        }
        Ok(side / self.patch_size)
    }
}
