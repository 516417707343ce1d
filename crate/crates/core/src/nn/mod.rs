//! Convolutional noise predictor: a small encoder–decoder over masked UV
//! displacement grids with a sinusoidal step embedding, hand-written
//! forward/backward passes, adaptive-moment training with EMA evaluation
//! weights, and single-file checkpoints.

mod checkpoint;
mod denoiser;
mod gradcheck;
mod layers;
mod net;
mod tensor;
mod train;

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use denoiser::NetDenoiser;
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{time_embedding, Activation};
pub use net::{DenoiserNet, NetCache, NetSpec, ParamEntry, ParamVec, INPUT_CHANNELS};
pub use tensor::{pixel_mask, Real, Tensor};
pub use train::{
    displacement_scale, epsilon_mse, train, training_step, write_loss_csv, Adam, Ema, LossRow,
    TrainConfig, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("channel widths must be positive")]
    BadWidths,
    #[error("time embedding dimension must be even and at least 4, got {0}")]
    BadEmbedDim(usize),
    #[error("grid resolution {0} must be a positive multiple of {1}")]
    BadResolution(usize, usize),
    #[error("displacement grids do not share the expected validity mask")]
    MaskMismatch,
    #[error("training needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("batch size must be at least 1")]
    BadBatch,
    #[error("learning rate must be positive and finite")]
    BadLearningRate,
    #[error("EMA decay must lie in [0, 1), got {0}")]
    BadEmaDecay(f64),
    #[error("value scale must be positive and finite, got {0}")]
    BadValueScale(f64),
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: u64, loss: f64 },
    #[error("checkpoint tensor {0} is missing")]
    MissingTensor(String),
    #[error("checkpoint tensor {name} has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint was trained for atlas {found}, template has atlas {expected}")]
    AtlasHashMismatch { expected: String, found: String },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint meta field {0} is missing or malformed")]
    BadMeta(&'static str),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
}
