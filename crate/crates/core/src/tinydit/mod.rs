//! A desk-scale diffusion transformer with axial rotary attention.
//!
//! Patchify, linear embedding plus time and class embeddings, pre-norm
//! blocks of rotary attention and a SiLU MLP, then a zero-initialized output
//! projection. Gradients are written out by hand and checked against finite
//! differences in [`gradient_check`].

mod checkpoint;
mod config;
mod gradcheck;
mod layout;
mod net;
mod train;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, MAX_HEADER_BYTES};
pub use config::ModelConfig;
pub use gradcheck::{gradient_check, GradCheckEntry};
pub use layout::{ParamBlock, ParamLayout};
pub use net::{ConditionedModel, TinyDit, TrainBatch};
pub use train::{train, train_with, TrainConfig};
