//! From-scratch CNN classifier, SGD, and the two-stage meta/micro trainer.
//!
//! Inputs are `N × C × H × W` batches where a sample tensor `S × K' × A × U`
//! maps to height `S`, width `K'` and `A·U` channels. The network is three
//! blocks of (conv 3×3, conv 3×3, batch norm, ReLU), a 2×2 max-pool, and a
//! linear layer with softmax. Everything is `f64`.

mod checkpoint;
mod eval;
mod model;
mod net;
mod tensor;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader};
pub use eval::{confusion_from_predictions, evaluate, predict, Evaluation, MetricsReport};
pub use model::{
    conv_param_count, hidden_conv_param_count, param_count, BnSlot, ConvSlot, InputShape, ModelParams, ModelSpec,
    ParamLayout, BASE_FILTERS,
};
pub use net::{backward, cross_entropy, forward, Cache, ForwardOutput, Mode};
pub use tensor::{batch_from_samples, Tensor};
pub use train::{
    epoch_order, famres_train, interpolate, meta_sample, reptile_meta_step, sgd_epoch, sgd_step, train_step,
    train_supervised, CurvePoint, Stage, TrainConfig,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("label {label} outside [0, {classes})")]
    Label { label: usize, classes: usize },
    #[error("cache does not belong to these parameters")]
    StaleCache,
    #[error("empty micro dataset")]
    EmptyMicroDataset,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
