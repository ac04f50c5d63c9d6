//! Dual-generator text style transfer.
//!
//! Two sequence-to-sequence transferrers `f: X → Y` and `g: Y → X` are
//! trained without discriminators or parallel data. Each learns to
//! reconstruct sentences of its target style from noisified inputs: once
//! from a noisy copy of the sentence itself, and once from a noisy copy of
//! the other transferrer's (frozen, gradient-free) transfer of it.

pub mod corpus;
pub mod editops;
pub mod error;
pub mod eval;
pub mod neural;
pub mod rng;
pub mod trainer;
pub mod transferrer;

pub use corpus::{Sentence, Style, StyleCorpus, StyleData, Vocab};
pub use editops::{edit_distance, neighbourhood_sample, NoiseSpec};
pub use error::{Error, Result};
pub use eval::{evaluate_system, train_classifier, Classifier, ClassifierConfig, MetricsReport, SystemReport};
pub use rng::RngState;
pub use trainer::{train_dgst, TrainConfig, TrainOutcome, Variant};
pub use transferrer::{GenerationConfig, Transferrer, TransferrerDims};
