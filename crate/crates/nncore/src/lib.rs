//! Minimal CPU tensor/autodiff engine: the residual conv architecture
//! family, per-sample gradients, weighted binary cross-entropy, NAdam, and
//! checkpointing. Everything computes in f64; checkpoints store f32.

mod activation;
mod checkpoint;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;

use thiserror::Error;

pub use activation::{mish, mish_derivative, sigmoid, softplus, Activation};
pub use checkpoint::{config_hash, load_checkpoint, save_checkpoint, CheckpointManifest};
pub use layers::GROUP_NORM_EPS;
pub use loss::{weighted_bce, weighted_bce_sample, PROB_CLAMP};
pub use model::{LabeledSample, Model, ModelConfig, PerSampleGradients};
pub use optim::{NAdamConfig, NAdamState};
pub use tensor::Tensor3;

/// Failure modes of model construction, execution, and persistence.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pos_weight {value} at label {index} must be positive")]
    InvalidWeight { index: usize, value: f64 },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("parameter vector length {got} does not match model ({expected})")]
    ParamLength { expected: usize, got: usize },
    #[error("checkpoint {field} mismatch: found {found}, expected {expected}")]
    CheckpointMismatch {
        field: String,
        found: String,
        expected: String,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest encoding: {0}")]
    Manifest(#[from] serde_json::Error),
}
