//! Multi-stream temporal segment networks for bodily emotion recognition.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`taxonomy`]: the 26 categorical emotion labels and their word embeddings.
//! - [`data`]: annotation schema, target binarization and a synthetic fixture generator.
//! - [`sampler`]: sparse segment sampling over a clip.
//! - [`streams`]: body crop, context (body masked out) and stacked optical-flow inputs.
//! - [`model`]: backbones, prediction heads, segment consensus and partial batch norm.
//! - [`losses`]: the four training objectives and their sum.
//! - [`metrics`]: per-class AP / ROC AUC, per-dimension R² and the Emotion Recognition Score.
//! - [`harness`]: training loop, checkpoints, inference and late score fusion.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod streams;
pub mod taxonomy;

pub use error::{Error, Result};

/// Number of categorical emotion labels.
pub const NUM_CATEGORIES: usize = 26;

/// Number of continuous emotion dimensions (valence, arousal, dominance).
pub const NUM_VAD: usize = 3;
