//! Conditional denoising diffusion over normalized mel frames.
//!
//! `schedule` owns the noise schedule and forward process, `step` the
//! timestep embedding, `model` the dilated-convolution denoiser with its
//! hand-written backward pass, `opt` the Adam update, `sampler` the ancestral
//! and deterministic fast samplers, and `gradcheck` the finite-difference
//! verification of the backward pass.

pub mod gradcheck;
pub mod model;
pub mod opt;
pub mod sampler;
pub mod schedule;
pub mod step;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid sampler steps: {0}")]
    InvalidSteps(String),
    #[error("conditioning streams disagree on length: {0}")]
    ConditioningLength(String),
    #[error("model/config mismatch: {0}")]
    ConfigMismatch(String),
}

pub use gradcheck::{
    gradient_check, gradient_check_default, small_config, GradCheckReport, TensorCheck,
};
pub use model::{
    denoise_predict, f0_channels, loss_and_grad, loss_only, ConditioningBundle, ContentSpec,
    ModelConfig, ModelParams, TrainItem,
};
pub use opt::AdamState;
pub use sampler::{ddim_sample, ddim_timesteps, ddpm_sample, Denoiser, ModelDenoiser};
pub use schedule::{q_sample, NoiseSchedule};
pub use step::{sinusoidal_step_embedding, StepMlp};
