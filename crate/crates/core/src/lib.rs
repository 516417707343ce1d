//! Diffusion shape priors over UV displacement maps, and manifold-guided
//! non-rigid registration of cloth meshes to partial, noisy point clouds.
//!
//! The crate is organized around a [`geometry::ClothTemplate`] (mesh topology,
//! mean shape, UV atlas with seam groups). Displacement fields live on a UV
//! grid ([`geometry::DisplacementGrid`]); [`diffusion`] provides variance
//! schedules and samplers over such grids, [`nn`] a small convolutional
//! noise predictor trained with manual backprop, [`guidance`] the multi-stage
//! guided reverse process that fits a template to a scan, [`synth`] a
//! synthetic cloth data generator, and [`baseline`]/[`metrics`] the
//! evaluation stack.

pub mod baseline;
pub mod diffusion;
pub mod geometry;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod synth;

pub use geometry::{ClothTemplate, DisplacementGrid, TriangleMesh, UvAtlas, UvMask};
