//! Cross-modality discourse classification for image-text posts.
//!
//! Posts are encoded into text token states, image region features and
//! caption token states, fused with multi-head cross-attention and scored
//! over five discourse labels.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod nn;
pub mod pipeline;

pub use classifier::{Checkpoint, DiscourseModel, ModelConfig, TrainConfig};
pub use config::RunConfig;
pub use corpus::{load_dataset, Dataset, DatasetSplit, DiscourseLabel, MultimediaPost};
pub use error::{Error, Result};
pub use evaluation::{f1_report, significance, EvalReport};
pub use fusion::FusionStrategy;
