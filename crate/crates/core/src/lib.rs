//! Multimodal multitask encoder-decoder built around three caches
//! (structured, spatial, temporal) that exchange information through
//! cross-cache attention before late self-attention, plus the synthetic
//! structured-data generator used to exercise it.

pub mod autodiff;
pub mod cache;
pub mod config;
pub mod decoder;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod peripherals;
pub mod sample;
pub mod synth;
pub mod tensor;

pub use autodiff::{ConvGeom, Gradients, Tape, Var};
pub use model::{ModelConfig, Prepared, SOmninet, Target, TaskKind, TaskSpec};
pub use error::{Error, Result};
pub use sample::{Image, Label, Sample, StructuredSample};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tensor::{precision, set_precision, Precision, PrecisionGuard, Tensor};
