//! Static position-extrapolation schemes.
//!
//! Each scheme is a position map `g`, a frequency map `h` and an attention
//! logit scale `tau`. All of them reduce to plain RoPE when `s = 1`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rope2d::FrequencyTable;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 32.0;
/// Default training context per axis, in tokens.
pub const DEFAULT_TRAIN_CONTEXT: usize = 1024;

/// Band boundaries of the YaRN ramp, measured in rotations over the training context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampParams {
    pub alpha: f64,
    pub beta: f64,
}

impl RampParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !(beta > alpha) || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ramp needs 0 <= alpha < beta, got alpha={alpha} beta={beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for RampParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
        }
    }
}

pub(crate) fn check_scale(s: f64) -> Result<()> {
    if s >= 1.0 && s.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidScale(s))
    }
}

/// NTK exponent `2d / (D - 2)`.
#[inline]
pub(crate) fn ntk_exponent(d: usize, pairs: usize) -> f64 {
    (2 * d) as f64 / (pairs - 2) as f64
}

pub(crate) fn check_ntk_table(table: &FrequencyTable) -> Result<()> {
    if table.pairs() < 3 {
        return Err(Error::InvalidDimension(format!(
            "NTK-aware scaling needs D >= 3, got {}",
            table.pairs()
        )));
    }
    Ok(())
}

/// Rotations a frequency completes over `context` positions, `L * theta / 2pi`.
#[inline]
pub fn rotations(theta: f64, context: usize) -> f64 {
    context as f64 * theta / TAU
}

/// Blends a compressed frequency toward the original one.
///
/// `gamma = 0` returns `compressed` and `gamma = 1` returns `theta`, both
/// without rounding; when `compressed == theta` the result is `theta`.
#[inline]
pub(crate) fn blend(theta: f64, compressed: f64, gamma: f64) -> f64 {
    if gamma <= 0.0 {
        compressed
    } else if gamma >= 1.0 {
        theta
    } else {
        compressed + gamma * (theta - compressed)
    }
}

/// One axis of a resolved encoding: position map `g(m) = m / position_divisor`
/// and the frequency table produced by `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisEncoding {
    pub position_divisor: f64,
    pub table: FrequencyTable,
}

impl AxisEncoding {
    pub fn identity(table: &FrequencyTable) -> Self {
        Self {
            position_divisor: 1.0,
            table: table.clone(),
        }
    }

    pub fn map_position(&self, m: f64) -> f64 {
        m / self.position_divisor
    }

    /// Angular frequency per unmapped position, `h(theta_d) / divisor`.
    pub fn effective_theta(&self) -> Vec<f64> {
        self.table.theta().iter().map(|th| th / self.position_divisor).collect()
    }
}

/// Position interpolation, `g(m) = m / s`.
pub fn pi_map(m: f64, s: f64) -> Result<f64> {
    check_scale(s)?;
    Ok(m / s)
}

/// NTK-aware frequencies, `h(theta_d) = theta_d / s^(2d / (D - 2))`.
pub fn ntk_frequencies(table: &FrequencyTable, s: f64) -> Result<FrequencyTable> {
    check_ntk_table(table)?;
    check_scale(s)?;
    let pairs = table.pairs();
    let theta = table
        .theta()
        .iter()
        .enumerate()
        .map(|(d, &th)| th / s.powf(ntk_exponent(d, pairs)))
        .collect();
    Ok(table.with_theta(theta))
}

/// Piecewise-linear ramp: 0 below `alpha`, 1 above `beta`.
pub fn yarn_ramp(r: f64, ramp: &RampParams) -> f64 {
    ramp_between(r, ramp.alpha, ramp.beta)
}

#[inline]
pub(crate) fn ramp_between(r: f64, lo: f64, hi: f64) -> f64 {
    if r < lo {
        0.0
    } else if r > hi {
        1.0
    } else {
        (r - lo) / (hi - lo)
    }
}

/// NTK-by-parts frequencies.
pub fn yarn_frequencies(table: &FrequencyTable, s: f64, context: usize, ramp: &RampParams) -> Result<FrequencyTable> {
    check_scale(s)?;
    if context == 0 {
        return Err(Error::InvalidParameter("training context must be positive".into()));
    }
    let theta = table
        .theta()
        .iter()
        .map(|&th| blend(th, th / s, yarn_ramp(rotations(th, context), ramp)))
        .collect();
    Ok(table.with_theta(theta))
}

/// Attention logit multiplier `tau(s) = 0.1 ln(s) + 1`.
pub fn attention_scale(s: f64) -> Result<f64> {
    check_scale(s)?;
    Ok(0.1 * s.ln() + 1.0)
}
