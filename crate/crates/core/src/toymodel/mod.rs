//! Desk-scale stand-in for a unified multimodal model.
//!
//! A few pre-norm residual attention blocks with a tanh MLP, all in `f64`, with
//! reverse-mode gradients written out by hand. It is small enough that
//! central finite differences can check every parameter.

mod gradcheck;
mod loss;
mod model;
mod params;
mod synthetic;
mod train;

pub use gradcheck::{finite_diff_gradient_check, GradCheckReport};
pub use loss::{segros_loss_continuous, segros_loss_discrete, LossReport, ReconstructionLoss};
pub use model::{I2tLoss, ToyModel};
pub use params::{Mode, ToyModelConfig};
pub use synthetic::{generate_batch, generate_synthetic, SyntheticSample, SyntheticSpec};
pub use train::{
    compare_masking, evaluate_planted_error, perturbed_recovery_precision,
    planted_recovery_precision, prepare_sample, sample_loss_and_grad, ComparisonReport,
    PreparedSample, RunSummary, StepReport, Trainer, DEFAULT_LR,
};
