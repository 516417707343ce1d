//! Synthetic cloth data at desk scale.
//!
//! A parametric garment family (a two-panel tube and a single-panel sheet),
//! smooth coarse-pose deformations with procedural wrinkles, partial scans
//! captured from a ring of virtual viewpoints with injected sensor noise,
//! and a dataset writer that lays the results out on disk.
//!
//! Everything is deterministic: templates depend only on their spec, frames
//! on `(params, frame index)`, scans on `(mesh, config, seed)`, and
//! regenerating a dataset produces byte-identical files.

mod cloth;
mod dataset;
mod deform;
mod scan;

pub use cloth::{build_template, ClothSpec, PanelLayout};
pub use dataset::{
    grid_path, load_manifest, make_dataset, manifest_path, mesh_path, obj_data, scan_path,
    DatasetManifest, PoseRangeSet, SplitLists, INTERPOLATION_STRIDE,
};
pub use deform::{generate_frame, generate_posed, pose_at, DeformationParams, POSE_DOFS};
pub use scan::{synth_scan, ScanConfig};

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::guidance::GuidanceError;
use crate::io::IoError;

/// Errors from synthetic data generation.
#[derive(Debug, Error)]
pub enum SynthError {
    #[error("panel grid too coarse: {cols} cols x {rows} rows")]
    GridTooCoarse { cols: usize, rows: usize },
    #[error("panel dimensions must be positive and finite, got {width} x {height} m")]
    BadPanelSize { width: f64, height: f64 },
    #[error("{cols} columns x {rows} rows per panel do not fit a {resolution}-pixel UV grid")]
    UnresolvableResolution {
        cols: usize,
        rows: usize,
        resolution: usize,
    },
    #[error("deformation amplitudes must be finite and non-negative, got {0}")]
    BadAmplitude(f64),
    #[error("compression coupling must be finite and non-negative, got {0}")]
    BadCoupling(f64),
    #[error("wrinkle wavelength {wavelength} m must exceed twice the mesh edge length ({edge} m)")]
    WavelengthTooShort { wavelength: f64, edge: f64 },
    #[error("scan config needs at least one viewpoint")]
    NoViewpoints,
    #[error("scan config needs at least one sample per frame")]
    NoSamples,
    #[error("noise scales must be finite and non-negative, got {0} mm")]
    BadNoiseScale(f64),
    #[error("mesh has zero total surface area")]
    ZeroAreaMesh,
    #[error("every sampled point is occluded from all viewpoints")]
    AllPointsOccluded,
    #[error("dataset needs at least 40 frames, got {0}")]
    TooFewFrames(usize),
    #[error("extrapolation frames need a positive bend amplitude")]
    NoBendHeadroom,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scan(#[from] GuidanceError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    File(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}
