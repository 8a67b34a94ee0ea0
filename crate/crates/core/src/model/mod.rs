//! The OR-to-AND refiner: a small fully convolutional network, its loss,
//! optimizer, schedule and training loop.

pub mod arch;
pub mod layers;
pub mod loss;
pub mod network;
pub mod optim;
pub mod train;

use thiserror::Error;

pub use arch::{FcnArchitecture, LayerSpec};
pub use loss::loss_ls_bce;
pub use network::{backward, forward, infer, init_params, predict, ConvTensors, FcnParams, ForwardCache, ParamGrads};
pub use optim::{poly_lr, sgd_step, SgdState};
pub use train::{train, EpochStats, History, TrainConfig, TrainSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("input {height}x{width} is not divisible by the network's downsampling factor {divisor}")]
    ShapeError {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prediction {value} at index {index} is not strictly inside (0, 1)")]
    DomainError { index: usize, value: f64 },
    #[error("stale forward cache: {0}")]
    StaleCache(String),
    #[error("conv layer {0} holds a non-finite parameter")]
    NonFiniteParameter(usize),
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged in epoch {epoch}")]
    Diverged { epoch: usize },
}
