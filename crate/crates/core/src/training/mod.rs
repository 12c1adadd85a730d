//! The pre-training objective, reverse-mode gradients over the whole
//! pipeline, AdamW, gradient checking and the training loop.

pub mod bench;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod pretrain;

pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{pretrain_loss, LossValue, LossWeights, RenderTargets};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerState};
pub use params::{Modality, ModelConfig, ModelParams};
pub use pipeline::{backward, forward, StepBatch};
pub use pretrain::pretrain;
