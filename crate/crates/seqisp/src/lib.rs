//! Search for task-optimal modular ISP pipelines with sequence-level
//! reinforcement learning.
//!
//! An autoregressive GRU policy emits an entire module sequence in one pass,
//! an image-conditioned CNN predicts the module parameters, and both are
//! trained from a single terminal reward computed on the pipeline output.
//! Everything is plain `f64` with hand-written reverse-mode gradients, so
//! runs are exactly reproducible from a config and a seed.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod image;
pub mod kernels;
pub mod objective;
pub mod oracle;
pub mod pipeline;
pub mod policy;
pub mod predictor;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use image::Image;
pub use kernels::ModuleId;
pub use pipeline::{FullParamVector, PipelineSequence};
pub use policy::{ModulePool, Policy};
