//! The denoising diffusion machinery: variance schedules, forward and
//! reverse chains over displacement grids, deterministic skip sampling, and
//! a closed-form Gaussian denoiser used as a test oracle.

mod gaussian;
mod ops;
mod schedule;

pub use gaussian::{GaussianDenoiser, GaussianPrior};
pub use ops::{
    ancestral_step, ancestral_update, ddim_step, ddim_update, forward_diffuse, forward_step,
    posterior_mean_x0, sample_noise, sample_unconditional,
};
pub use schedule::{DdimPlan, VarianceSchedule};

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::{DisplacementGrid, GeometryError, UvMask};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("timestep {t} outside 1..={t_max}")]
    InvalidTimestep { t: usize, t_max: usize },
    #[error("schedule needs at least 2 steps, got {0}")]
    TooFewSteps(usize),
    #[error("beta range must satisfy 0 < beta1 < betaT < 1, got ({beta1}, {beta_t})")]
    BadBetaRange { beta1: f64, beta_t: f64 },
    #[error("plan length {s} not in 2..={t_max}")]
    BadPlanLength { s: usize, t_max: usize },
    #[error("skip step needs t_prev {t_prev} < t {t}")]
    BadStepOrder { t: usize, t_prev: usize },
    #[error("stochastic skip step (eta > 0, t_prev > 0) needs a noise grid")]
    MissingNoise,
    #[error("covariance floor must be positive, got {0}")]
    NonPositiveFloor(f64),
    #[error("covariance factor needs at least one column")]
    EmptyFactor,
    #[error("this denoiser does not provide exact gradients")]
    NoExactGradient,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A noise predictor driving the reverse chain.
///
/// Implementations guarantee the output grid is zero outside the validity
/// mask and is invariant to values stored in unmasked input pixels.
pub trait Denoiser {
    fn mask(&self) -> &Arc<UvMask>;

    fn t_max(&self) -> usize;

    /// Meters per grid unit: grids in the chain are `value_scale` times
    /// smaller than physical displacements. 1 for denoisers built directly
    /// in meters.
    fn value_scale(&self) -> f64 {
        1.0
    }

    /// Predicted noise ε̂(x_t, t).
    fn predict_noise(
        &self,
        x_t: &DisplacementGrid,
        t: usize,
    ) -> Result<DisplacementGrid, DiffusionError>;

    /// Whether [`Denoiser::noise_vjp`] is available.
    fn supports_exact_gradient(&self) -> bool;

    /// Pullback of [`Denoiser::predict_noise`]: cotangentᵀ · ∂ε̂/∂x_t.
    fn noise_vjp(
        &self,
        x_t: &DisplacementGrid,
        t: usize,
        cotangent: &DisplacementGrid,
    ) -> Result<DisplacementGrid, DiffusionError>;
}
