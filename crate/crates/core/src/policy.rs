//! Positional-encoding policies: a scheme plus its per-axis contexts,
//! resolved into concrete `(g, h, tau)` at a given diffusion time.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamic::{
    check_time, dy_ntk_frequencies, dy_yarn_frequencies, kappa, lumina_time_aware_frequencies, ScaleSchedule,
};
use crate::error::{Error, Result};
use crate::extrapolation::{attention_scale, check_scale, ntk_frequencies, yarn_frequencies, AxisEncoding, RampParams};
use crate::rope2d::{AxisContext, FrequencyTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "ntk")]
    Ntk,
    #[serde(rename = "yarn")]
    Yarn,
    #[serde(rename = "dy-pi")]
    DyPi,
    #[serde(rename = "dy-ntk")]
    DyNtk,
    #[serde(rename = "dy-yarn")]
    DyYarn,
    #[serde(rename = "lumina")]
    LuminaTimeAware,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 8] = [
        PolicyKind::Vanilla,
        PolicyKind::Pi,
        PolicyKind::Ntk,
        PolicyKind::Yarn,
        PolicyKind::DyPi,
        PolicyKind::DyNtk,
        PolicyKind::DyYarn,
        PolicyKind::LuminaTimeAware,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Vanilla => "vanilla",
            PolicyKind::Pi => "pi",
            PolicyKind::Ntk => "ntk",
            PolicyKind::Yarn => "yarn",
            PolicyKind::DyPi => "dy-pi",
            PolicyKind::DyNtk => "dy-ntk",
            PolicyKind::DyYarn => "dy-yarn",
            PolicyKind::LuminaTimeAware => "lumina",
        }
    }

    pub fn is_dynamic(self) -> bool {
        matches!(
            self,
            PolicyKind::DyPi | PolicyKind::DyNtk | PolicyKind::DyYarn | PolicyKind::LuminaTimeAware
        )
    }

    fn uses_attention_scale(self) -> bool {
        matches!(self, PolicyKind::Yarn | PolicyKind::DyYarn)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Unknown policy name; the message lists every valid kind.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown policy '{name}', expected one of: {valid}")]
pub struct UnknownPolicy {
    pub name: String,
    pub valid: String,
}

impl FromStr for PolicyKind {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| UnknownPolicy {
                name: s.to_string(),
                valid: PolicyKind::ALL.map(PolicyKind::name).join("|"),
            })
    }
}

/// A positional-encoding policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PePolicy {
    pub kind: PolicyKind,
    pub context_x: AxisContext,
    pub context_y: AxisContext,
    #[serde(default)]
    pub ramp: RampParams,
    #[serde(default)]
    pub schedule: ScaleSchedule,
    #[serde(default = "default_true")]
    pub attention_scale: bool,
}

fn default_true() -> bool {
    true
}

/// A policy evaluated at one time: both axes plus the logit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedEncoding {
    pub x: AxisEncoding,
    pub y: AxisEncoding,
    pub attention_scale: f64,
}

impl ResolvedEncoding {
    pub fn vanilla(table_x: &FrequencyTable, table_y: &FrequencyTable) -> Self {
        Self {
            x: AxisEncoding::identity(table_x),
            y: AxisEncoding::identity(table_y),
            attention_scale: 1.0,
        }
    }
}

impl PePolicy {
    /// Policy with default ramp and schedule and the same context on both axes.
    pub fn new(kind: PolicyKind, context: AxisContext) -> Self {
        Self {
            kind,
            context_x: context,
            context_y: context,
            ramp: RampParams::default(),
            schedule: ScaleSchedule::default(),
            attention_scale: true,
        }
    }

    pub fn vanilla(context: AxisContext) -> Self {
        Self::new(PolicyKind::Vanilla, context)
    }

    pub fn with_contexts(mut self, x: AxisContext, y: AxisContext) -> Self {
        self.context_x = x;
        self.context_y = y;
        self
    }

    pub fn with_ramp(mut self, ramp: RampParams) -> Self {
        self.ramp = ramp;
        self
    }

    pub fn with_schedule(mut self, schedule: ScaleSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_attention_scale(mut self, enabled: bool) -> Self {
        self.attention_scale = enabled;
        self
    }

    pub fn scale(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.context_x.scale(),
            Axis::Y => self.context_y.scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        RampParams::new(self.ramp.alpha, self.ramp.beta)?;
        self.schedule.validate()?;
        for ctx in [self.context_x, self.context_y] {
            AxisContext::new(ctx.train, ctx.test)?;
            if self.kind != PolicyKind::Vanilla {
                check_scale(ctx.scale())?;
            }
        }
        Ok(())
    }

    /// Logit multiplier; only the YaRN family uses it, from the geometric mean
    /// of the two axis scales.
    pub fn tau(&self) -> Result<f64> {
        if self.attention_scale && self.kind.uses_attention_scale() {
            attention_scale((self.context_x.scale() * self.context_y.scale()).sqrt())
        } else {
            Ok(1.0)
        }
    }

    /// Resolves one axis at time `t`.
    pub fn resolve_axis(&self, axis: Axis, t: f64, base: &FrequencyTable) -> Result<AxisEncoding> {
        check_time(t)?;
        let ctx = match axis {
            Axis::X => self.context_x,
            Axis::Y => self.context_y,
        };
        let s = ctx.scale();
        let identity = |table: FrequencyTable| AxisEncoding {
            position_divisor: 1.0,
            table,
        };
        Ok(match self.kind {
            PolicyKind::Vanilla => AxisEncoding::identity(base),
            PolicyKind::Pi => {
                check_scale(s)?;
                AxisEncoding {
                    position_divisor: s,
                    table: base.clone(),
                }
            }
            PolicyKind::Ntk => identity(ntk_frequencies(base, s)?),
            PolicyKind::Yarn => identity(yarn_frequencies(base, s, ctx.train, &self.ramp)?),
            PolicyKind::DyPi => {
                check_scale(s)?;
                AxisEncoding {
                    position_divisor: s.powf(kappa(t, &self.schedule)?),
                    table: base.clone(),
                }
            }
            PolicyKind::DyNtk => identity(dy_ntk_frequencies(base, s, t, &self.schedule)?),
            PolicyKind::DyYarn => identity(dy_yarn_frequencies(base, s, ctx.train, &self.ramp, t, &self.schedule)?),
            PolicyKind::LuminaTimeAware => {
                let (position_divisor, table) = lumina_time_aware_frequencies(base, s, t)?;
                AxisEncoding {
                    position_divisor,
                    table,
                }
            }
        })
    }

    /// Resolves both axes and the logit scale at time `t`.
    pub fn resolve(&self, t: f64, base_x: &FrequencyTable, base_y: &FrequencyTable) -> Result<ResolvedEncoding> {
        Ok(ResolvedEncoding {
            x: self.resolve_axis(Axis::X, t, base_x)?,
            y: self.resolve_axis(Axis::Y, t, base_y)?,
            attention_scale: self.tau()?,
        })
    }

    /// Short human-readable descriptor used in reports.
    pub fn descriptor(&self) -> String {
        let mut s = format!(
            "{} x:{}/{} y:{}/{}",
            self.kind, self.context_x.train, self.context_x.test, self.context_y.train, self.context_y.test
        );
        if matches!(self.kind, PolicyKind::Yarn | PolicyKind::DyYarn) {
            s.push_str(&format!(" alpha={} beta={}", self.ramp.alpha, self.ramp.beta));
        }
        if self.kind.is_dynamic() && self.kind != PolicyKind::LuminaTimeAware {
            s.push_str(&format!(
                " lambda_s={} lambda_t={} placement={} target={}",
                self.schedule.lambda_s,
                self.schedule.lambda_t,
                self.schedule.placement.name(),
                self.schedule.target.name()
            ));
        }
        if self.kind.uses_attention_scale() {
            s.push_str(&format!(" tau={}", self.attention_scale));
        }
        s
    }
}

impl Default for PePolicy {
    fn default() -> Self {
        Self::vanilla(AxisContext::native(1))
    }
}

impl From<UnknownPolicy> for Error {
    fn from(e: UnknownPolicy) -> Self {
        Error::InvalidParameter(e.to_string())
    }
}
