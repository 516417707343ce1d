//! Multi-stage manifold-guided reverse diffusion.
//!
//! Registration runs the reverse chain of a trained shape prior while
//! steering every step toward the observation: the posterior-mean estimate
//! of the clean state is decoded to mesh vertices, a robust data distance is
//! measured against the scan, and its gradient (pulled back to the running
//! state) is subtracted after the ordinary denoising update. Early steps use
//! a coarse-target distance that can move the whole garment; once only
//! `tau` plan steps remain the distance switches to point-to-plane misfit
//! against the scan, and after the chain finishes the final update is
//! repeated a few times to settle high-frequency detail. Seams are stitched
//! after every step so the displacement map stays consistent across UV
//! chart boundaries.

mod config;
mod distance;
mod normalize;
mod scan;
mod step;

pub use config::{stage_at, GradientMode, GuidanceConfig, Stage, StepMode};
pub use distance::{assign_correspondences, coarse_distance, fine_distance, stage_distance};
pub use normalize::{normalize_frame, transform_mesh, NormalizedFrame};
pub use scan::{CoarseGuide, ScanPointCloud};
pub use step::{
    guided_reverse_step, register, ChainMode, GuidedStep, RegistrationResult, StepDiagnostic,
};

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::geometry::GeometryError;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("scan has no points")]
    EmptyScan,
    #[error("scan has {points} points but {normals} normals")]
    NormalCountMismatch { points: usize, normals: usize },
    #[error("scan normal {index} has length {len}, expected unit within 1e-4")]
    BadNormal { index: usize, len: f64 },
    #[error("non-finite scan point {0}")]
    NonFinitePoint(usize),
    #[error("non-finite guide target for vertex {0}")]
    NonFiniteTarget(usize),
    #[error("dense guide has {got} targets but the template has {expected} vertices")]
    GuideSizeMismatch { expected: usize, got: usize },
    #[error("sparse guide needs at least 3 constraints, got {0}")]
    TooFewConstraints(usize),
    #[error("guide references vertex {index} but the template has {count} vertices")]
    GuideIndexOutOfRange { index: usize, count: usize },
    #[error("guide constrains vertex {0} twice")]
    DuplicateConstraint(usize),
    #[error("correspondence list has {got} entries for {expected} scan points")]
    CorrespondenceCountMismatch { expected: usize, got: usize },
    #[error("correspondence {index} points at vertex {vertex} but the template has {count}")]
    CorrespondenceOutOfRange {
        index: usize,
        vertex: usize,
        count: usize,
    },
    #[error("guidance step size must be finite and >= 0, got {0}")]
    BadRho(f64),
    #[error("baseline step size must be finite and > 0, got {0}")]
    BadStepSize(f64),
    #[error("baseline smoothness weight must be finite and >= 0, got {0}")]
    BadLambda(f64),
    #[error("robust-loss width must be positive, got {0}")]
    BadDelta(f64),
    #[error("stage breakpoint {tau} outside 0..={plan_len}")]
    TauOutOfRange { tau: usize, plan_len: usize },
    #[error("skip-step noise level must be finite and >= 0, got {0}")]
    BadEta(f64),
    #[error("sampling plan is empty")]
    EmptyPlan,
    #[error("state became non-finite at plan position {position} (t = {t})")]
    NonFiniteState { position: usize, t: usize },
    #[error("exact gradient mode needs a denoiser with exact gradients")]
    ExactGradientUnavailable,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}
