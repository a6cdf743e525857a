//! Small LLaMA-flavored transformer with exact manual backpropagation.
//!
//! Pre-RMSNorm blocks, bidirectional multi-head attention, SwiGLU
//! feed-forward, no biases, learned positional embeddings.

pub mod config;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod optim;
pub mod params;
pub mod tensor;

pub use config::{ModelConfig, Task};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{batch_loss, example_grads, forward, forward_seq, loss_and_grads, Grads, LossAndGrads, Sample, Target};
pub use optim::{adamw_step, AdamWConfig, OptimizerState};
pub use params::{attach_head, init_params, param_count, GradSet, LayerTensors, ParamSet};
pub use tensor::{Dtype, Element, Scalar, Tensor};
