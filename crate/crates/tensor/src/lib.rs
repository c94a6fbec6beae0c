//! Minimal deterministic numeric core: f64 tensors, the handful of layers the
//! intent models need (dense, temporal and graph convolution, GRU, dropout),
//! reverse-mode gradients on a per-sample tape, Adam, and a finite-difference
//! gradient checker.

pub mod checkpoint;
pub mod error;
pub mod kernels;
pub mod layer;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use checkpoint::Container;
pub use error::{KernelError, Result};
pub use kernels::{
    conv1d_same, conv_time, dense_forward, dropout_apply, graph_aggregate, graph_conv, gru_sequence, sigmoid,
    GruParams, Mode,
};
pub use layer::{LayerKind, LayerSpec};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamSet};
pub use rng::Rng;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use train::{batch_loss, grad_check, grad_check_with_floor, GRAD_FLOOR, predict_logits, sigmoid_bce, train_step, Module};
