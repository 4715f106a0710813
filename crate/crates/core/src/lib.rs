//! Dynamic position extrapolation for axial rotary embeddings in diffusion
//! transformers.
//!
//! The crate covers the static extrapolation schemes (PI, NTK-aware, YaRN),
//! their time-dynamic counterparts driven by `kappa(t)`, spectral diagnostics
//! of the flow-matching noising process, and a small diffusion transformer
//! used to measure extrapolation artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataggen;
pub mod dynamic;
pub mod error;
pub mod evalkit;
pub mod extrapolation;
pub mod flow;
pub mod pgm;
pub mod policy;
pub mod rng;
pub mod rope2d;
pub mod spectral;
pub mod tinydit;

pub use error::{Error, Result};
pub use policy::{Axis, PePolicy, PolicyKind, ResolvedEncoding};
pub use rope2d::{AxisContext, FrequencyTable, PositionGrid};
