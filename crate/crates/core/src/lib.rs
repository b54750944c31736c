//! Core algorithms for studying mini-batch composition in semi-supervised
//! training: synthetic data, batch samplers with explicit labeled/unlabeled
//! mixing, a small MLP trained with consistency regularization, and the
//! budget/metrics plumbing around it.

pub mod augment;
pub mod checkpoint;
pub mod error;
pub mod fixmatch;
pub mod matrix;
pub mod metrics;
pub mod sampler;
pub mod nnet;
pub mod rng;
pub mod synthdata;
pub mod trainer;

pub use augment::AugmentConfig;
pub use error::{Error, Result};
pub use fixmatch::FixmatchConfig;
pub use matrix::Matrix;
pub use metrics::MetricsConfig;
pub use sampler::{SamplerConfig, SamplerMode};
pub use synthdata::{DatasetSpec, PreparedData, SplitOptions};
pub use trainer::{RunResult, TrainConfig};
