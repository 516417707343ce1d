use std::path::Path;
use std::sync::Arc;

use crate::geometry::{DisplacementGrid, UvMask};

use super::container::{find_blob, read_container, write_container, Blob};
use super::IoError;

/// Writes a displacement grid to a container file. Only the masked pixels
/// are stored (float32, the exchange precision of meshes and scans); the
/// mask itself is not embedded — `meta` should identify the atlas the grid
/// belongs to so readers can detect mismatches.
pub fn write_grid(
    path: &Path,
    grid: &DisplacementGrid,
    meta: &serde_json::Value,
) -> Result<(), IoError> {
    let masked: Vec<f32> = grid.to_masked_vec().iter().map(|&v| v as f32).collect();
    let blob = Blob::from_f32("displacements", vec![grid.mask().len(), 3], &masked);
    write_container(path, meta, &[blob])
}

/// Reads a grid written by [`write_grid`] back onto `mask`. The stored
/// pixel count must match the mask; the file's meta is returned alongside
/// so callers can check atlas identity.
pub fn read_grid(
    path: &Path,
    mask: &Arc<UvMask>,
) -> Result<(serde_json::Value, DisplacementGrid), IoError> {
    let (meta, blobs) = read_container(path)?;
    let blob = find_blob(&blobs, "displacements")?;
    if blob.shape != [mask.len(), 3] {
        return Err(IoError::ShapeMismatch {
            name: "displacements".into(),
            expected: vec![mask.len(), 3],
            actual: blob.shape.clone(),
        });
    }
    let vals: Vec<f64> = blob.to_f32()?.iter().map(|&v| v as f64).collect();
    Ok((meta, DisplacementGrid::from_masked_vec(mask.clone(), &vals)))
}
