//! Time-dynamic extrapolation driven by `kappa(t) = lambda_s * t^lambda_t`.
//!
//! `t` is the flow-matching time (1 = noise, 0 = data). Every dynamic scheme
//! reduces to plain RoPE at `t = 0` because the effective scale `s^kappa(0)`
//! is 1, even though `kappa(0)` itself is 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extrapolation::{blend, check_ntk_table, check_scale, ntk_exponent, ramp_between, rotations, RampParams};
use crate::policy::{Axis, PePolicy};
use crate::rope2d::FrequencyTable;

/// Degenerate-threshold guard for the dynamic ramp.
const RAMP_COLLAPSE: f64 = 1e-9;

/// How `kappa` enters the NTK compression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// `theta / s^(kappa * e_d)`.
    #[default]
    Exponent,
    /// `theta / (s * kappa)^e_d`, with `s * kappa` clamped to at least 1.
    Multiplicative,
}

/// Which YaRN component follows the schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum YarnTarget {
    /// The compressed leg of the blend.
    NtkTerm,
    /// The ramp thresholds.
    #[default]
    ByPartsThresholds,
    Both,
}

impl YarnTarget {
    pub const ALL: [YarnTarget; 3] = [YarnTarget::NtkTerm, YarnTarget::ByPartsThresholds, YarnTarget::Both];

    fn thresholds(self) -> bool {
        matches!(self, YarnTarget::ByPartsThresholds | YarnTarget::Both)
    }

    fn ntk_term(self) -> bool {
        matches!(self, YarnTarget::NtkTerm | YarnTarget::Both)
    }

    pub fn name(self) -> &'static str {
        match self {
            YarnTarget::NtkTerm => "ntk_term",
            YarnTarget::ByPartsThresholds => "by_parts_thresholds",
            YarnTarget::Both => "both",
        }
    }
}

impl Placement {
    pub const ALL: [Placement; 2] = [Placement::Multiplicative, Placement::Exponent];

    pub fn name(self) -> &'static str {
        match self {
            Placement::Exponent => "exponent",
            Placement::Multiplicative => "multiplicative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub lambda_s: f64,
    pub lambda_t: f64,
    #[serde(default)]
    pub placement: Placement,
    #[serde(default)]
    pub target: YarnTarget,
}

impl Default for ScaleSchedule {
    fn default() -> Self {
        Self {
            lambda_s: 2.0,
            lambda_t: 2.0,
            placement: Placement::Exponent,
            target: YarnTarget::ByPartsThresholds,
        }
    }
}

impl ScaleSchedule {
    pub fn new(lambda_s: f64, lambda_t: f64) -> Result<Self> {
        let schedule = Self {
            lambda_s,
            lambda_t,
            ..Self::default()
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn with_placement(mut self, placement: Placement) -> Self {
        self.placement = placement;
        self
    }

    pub fn with_target(mut self, target: YarnTarget) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_s > 0.0 && self.lambda_s.is_finite()) || !(self.lambda_t > 0.0 && self.lambda_t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "schedule needs positive lambdas, got lambda_s={} lambda_t={}",
                self.lambda_s, self.lambda_t
            )));
        }
        Ok(())
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidTime(t))
    }
}

/// `kappa(t) = lambda_s * t^lambda_t`.
pub fn kappa(t: f64, schedule: &ScaleSchedule) -> Result<f64> {
    check_time(t)?;
    Ok(schedule.lambda_s * t.powf(schedule.lambda_t))
}

/// Threshold schedule of the dynamic ramp, `t^lambda_t` (`lambda_s` fixed to 1).
fn threshold_kappa(t: f64, lambda_t: f64) -> f64 {
    t.powf(lambda_t)
}

/// Dy-PI position map, `m / s^kappa(t)`.
pub fn dy_pi_map(m: f64, s: f64, t: f64, schedule: &ScaleSchedule) -> Result<f64> {
    check_scale(s)?;
    Ok(m / s.powf(kappa(t, schedule)?))
}

/// Per-dimension divisor applied by Dy-NTK for dimension exponent `e_d`.
#[inline]
fn dy_ntk_divisor(s: f64, k: f64, exponent: f64, placement: Placement) -> f64 {
    match placement {
        Placement::Exponent => s.powf(k * exponent),
        Placement::Multiplicative => (s * k).max(1.0).powf(exponent),
    }
}

/// Dy-NTK frequencies.
pub fn dy_ntk_frequencies(table: &FrequencyTable, s: f64, t: f64, schedule: &ScaleSchedule) -> Result<FrequencyTable> {
    check_ntk_table(table)?;
    check_scale(s)?;
    let k = kappa(t, schedule)?;
    let pairs = table.pairs();
    let theta = table
        .theta()
        .iter()
        .enumerate()
        .map(|(d, &th)| th / dy_ntk_divisor(s, k, ntk_exponent(d, pairs), schedule.placement))
        .collect();
    Ok(table.with_theta(theta))
}

/// Ramp with thresholds `alpha * t^lambda_t` and `beta * t^lambda_t`.
///
/// When the thresholds collapse together (`t` near 0) every positive `r`
/// maps to 1, i.e. no scaling.
pub fn dy_yarn_ramp(r: f64, ramp: &RampParams, t: f64, lambda_t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(dy_ramp_unchecked(r, ramp, threshold_kappa(t, lambda_t)))
}

fn dy_ramp_unchecked(r: f64, ramp: &RampParams, k: f64) -> f64 {
    if k * (ramp.beta - ramp.alpha) < RAMP_COLLAPSE {
        return if r > 0.0 { 1.0 } else { 0.0 };
    }
    ramp_between(r, ramp.alpha * k, ramp.beta * k)
}

/// Dy-YaRN frequencies.
///
/// With the threshold target the ramp follows `t^lambda_t`. With the NTK-term
/// target the compressed leg becomes `theta / s^kappa(t)` (or the
/// multiplicative form), so it too relaxes to `theta` at `t = 0`.
pub fn dy_yarn_frequencies(
    table: &FrequencyTable,
    s: f64,
    context: usize,
    ramp: &RampParams,
    t: f64,
    schedule: &ScaleSchedule,
) -> Result<FrequencyTable> {
    check_scale(s)?;
    check_time(t)?;
    if context == 0 {
        return Err(Error::InvalidParameter("training context must be positive".into()));
    }
    let ramp_k = threshold_kappa(t, schedule.lambda_t);
    let leg_divisor = if schedule.target.ntk_term() {
        dy_ntk_divisor(s, kappa(t, schedule)?, 1.0, schedule.placement)
    } else {
        s
    };
    let theta = table
        .theta()
        .iter()
        .map(|&th| {
            let r = rotations(th, context);
            let gamma = if schedule.target.thresholds() {
                dy_ramp_unchecked(r, ramp, ramp_k)
            } else {
                ramp_between(r, ramp.alpha, ramp.beta)
            };
            blend(th, th / leg_divisor, gamma)
        })
        .collect();
    Ok(table.with_theta(theta))
}

/// Time-aware baseline that moves from PI at `t = 1` to NTK-aware at `t = 0`.
///
/// The effective compression exponent of dimension `d` is
/// `t * 1 + (1 - t) * e_d`; the PI share goes into the position divisor
/// `s^t` and the NTK share into the table, so both endpoints are reproduced
/// exactly. Returns `(position divisor, table)`.
pub fn lumina_time_aware_frequencies(table: &FrequencyTable, s: f64, t: f64) -> Result<(f64, FrequencyTable)> {
    check_ntk_table(table)?;
    check_scale(s)?;
    check_time(t)?;
    let pairs = table.pairs();
    let ntk_share = 1.0 - t;
    let theta = table
        .theta()
        .iter()
        .enumerate()
        .map(|(d, &th)| th / s.powf(ntk_share * ntk_exponent(d, pairs)))
        .collect();
    Ok((s.powf(t), table.with_theta(theta)))
}

/// One row of a wavelength report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WavelengthRow {
    pub kind: &'static str,
    pub t: f64,
    pub axis: Axis,
    pub d: usize,
    pub theta_eff: f64,
    pub wavelength_eff: f64,
}

/// Effective frequency `h(theta_d, t) / divisor` and wavelength per dimension,
/// for both axes at every requested time.
pub fn wavelength_report(policy: &PePolicy, base: &FrequencyTable, times: &[f64]) -> Result<Vec<WavelengthRow>> {
    let mut rows = Vec::with_capacity(times.len() * 2 * base.pairs());
    for &t in times {
        let enc = policy.resolve(t, base, base)?;
        for (axis, axis_enc) in [(Axis::X, &enc.x), (Axis::Y, &enc.y)] {
            let div = axis_enc.position_divisor;
            for (d, &th) in axis_enc.table.theta().iter().enumerate() {
                rows.push(WavelengthRow {
                    kind: policy.kind.name(),
                    t,
                    axis,
                    d,
                    theta_eff: th / div,
                    wavelength_eff: std::f64::consts::TAU * div / th,
                });
            }
        }
    }
    Ok(rows)
}

pub const WAVELENGTH_CSV_HEADER: &str = "kind,t,axis,d,theta_eff,wavelength_eff";

/// Renders rows with [`WAVELENGTH_CSV_HEADER`]. Floats use Rust's shortest
/// round-trip formatting.
pub fn wavelength_csv(rows: &[WavelengthRow]) -> String {
    let mut out = String::from(WAVELENGTH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:e},{:e}",
            r.kind,
            r.t,
            r.axis.name(),
            r.d,
            r.theta_eff,
            r.wavelength_eff
        );
    }
    out
}
