//! Dataset generation: frames, scans, grids, and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::geometry::ClothTemplate;
use crate::io::{write_grid, write_obj, write_ply_points, ObjData, PlyFormat, PointCloudData};

use super::cloth::{build_template, ClothSpec};
use super::deform::{generate_posed, pose_at, DeformationParams, POSE_DOFS};
use super::scan::{synth_scan, ScanConfig};
use super::SynthError;

/// Every frame whose index is a multiple of this is held out of training as
/// the interpolation test split.
pub const INTERPOLATION_STRIDE: usize = 20;

/// Frame indices by split. Interpolation frames sit inside the training
/// range; extrapolation frames extend past it with an out-of-range pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<usize>,
    pub interpolation: Vec<usize>,
    pub extrapolation: Vec<usize>,
}

/// Per-DOF pose [min, max] observed in each split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRangeSet {
    pub train: [[f64; 2]; POSE_DOFS],
    pub interpolation: [[f64; 2]; POSE_DOFS],
    pub extrapolation: [[f64; 2]; POSE_DOFS],
}

/// Everything needed to interpret a generated dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub atlas_hash: String,
    /// In-range animation frames (train + interpolation).
    pub frames: usize,
    pub extrapolation_frames: usize,
    pub splits: SplitLists,
    pub pose_ranges: PoseRangeSet,
    pub cloth: ClothSpec,
    pub deform: DeformationParams,
    pub scan: ScanConfig,
}

pub fn mesh_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join("meshes").join(format!("frame_{frame:05}.obj"))
}

pub fn scan_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join("scans").join(format!("frame_{frame:05}.ply"))
}

pub fn grid_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join("grids").join(format!("frame_{frame:05}.dgrid"))
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// A deformed state of a template as OBJ records: shared per-vertex UV
/// table rebuilt from the atlas charts, faces indexing both.
pub fn obj_data(template: &ClothTemplate, positions: &[Point3<f64>]) -> ObjData {
    assert_eq!(positions.len(), template.vertex_count());
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut seen = std::collections::BTreeMap::new();
    let mut faces = Vec::with_capacity(template.atlas().faces().len());
    for (face, corner_uvs) in template
        .atlas()
        .faces()
        .iter()
        .zip(template.atlas().face_uvs())
    {
        let mut rec = [[0usize; 2]; 3];
        for k in 0..3 {
            let uv = corner_uvs[k];
            let key = (uv[0].to_bits(), uv[1].to_bits());
            let id = *seen.entry(key).or_insert_with(|| {
                uvs.push(uv);
                uvs.len() - 1
            });
            rec[k] = [face[k], id];
        }
        faces.push(rec);
    }
    ObjData {
        vertices: positions.to_vec(),
        uvs,
        faces,
    }
}

fn split_label(splits: &SplitLists, frame: usize) -> &'static str {
    if splits.extrapolation.contains(&frame) {
        "extrapolation"
    } else if splits.interpolation.contains(&frame) {
        "interpolation"
    } else {
        "train"
    }
}

/// Frame indices per split for a dataset of `frames` in-range frames plus
/// `extra` extrapolation frames appended after them.
fn plan_splits(frames: usize, extra: usize) -> SplitLists {
    let interpolation: Vec<usize> = (0..frames).step_by(INTERPOLATION_STRIDE).collect();
    let train = (0..frames)
        .filter(|i| i % INTERPOLATION_STRIDE != 0)
        .collect();
    let extrapolation = (frames..frames + extra).collect();
    SplitLists {
        train,
        interpolation,
        extrapolation,
    }
}

/// Generates a complete dataset on disk and returns its manifest.
///
/// Layout under `dir`: `meshes/frame_%05d.obj` (ground truth),
/// `scans/frame_%05d.ply` (partial noisy scans, binary, tagged with their
/// frame id), `grids/frame_%05d.dgrid` (seam-consistent displacement
/// grids), and `manifest.json`.
///
/// In-range frames animate the pose sinusoids; every
/// `INTERPOLATION_STRIDE`-th frame is held out for interpolation testing.
/// One extra frame per ten in-range frames extends the sequence with an
/// out-of-range bend, giving the extrapolation split a pose band disjoint
/// from training. Reruns with the same arguments are byte-identical; scans
/// draw from per-frame streams seeded `params.seed ^ frame`.
pub fn make_dataset(
    dir: &Path,
    spec: &ClothSpec,
    params: &DeformationParams,
    scan: &ScanConfig,
    frames: usize,
) -> Result<DatasetManifest, SynthError> {
    spec.validate()?;
    params.validate(spec)?;
    scan.validate()?;
    if frames < 40 {
        return Err(SynthError::TooFewFrames(frames));
    }
    if params.bend_amplitude <= 0.0 {
        return Err(SynthError::NoBendHeadroom);
    }
    let template = build_template(spec)?;
    for sub in ["meshes", "scans", "grids"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let extra = frames.div_ceil(10);
    let splits = plan_splits(frames, extra);
    let empty = [[f64::INFINITY, f64::NEG_INFINITY]; POSE_DOFS];
    let mut ranges = PoseRangeSet {
        train: empty,
        interpolation: empty,
        extrapolation: empty,
    };
    for frame in 0..frames + extra {
        let extrapolate = frame >= frames;
        let pose = pose_at(params, frame, extrapolate);
        let label = split_label(&splits, frame);
        let range = match label {
            "train" => &mut ranges.train,
            "interpolation" => &mut ranges.interpolation,
            _ => &mut ranges.extrapolation,
        };
        for (slot, dof) in range.iter_mut().zip(&pose) {
            slot[0] = slot[0].min(*dof);
            slot[1] = slot[1].max(*dof);
        }

        let verts = generate_posed(spec, params, &pose, frame);
        write_obj(&mesh_path(dir, frame), &obj_data(&template, &verts))?;

        let mut grid = template.rasterize_frame(&verts)?;
        template.seam_project(&mut grid)?;
        let meta = json!({
            "frame": frame,
            "split": label,
            "atlas_hash": template.atlas_hash(),
        });
        write_grid(&grid_path(dir, frame), &grid, &meta)?;

        let mesh = template.mesh().with_vertices(verts)?;
        let cloud = synth_scan(&mesh, scan, params.seed ^ frame as u64)?;
        write_ply_points(
            &scan_path(dir, frame),
            &PointCloudData {
                points: cloud.points().to_vec(),
                normals: cloud.normals().to_vec(),
                comments: vec![format!("frame {frame:05}"), format!("split {label}")],
            },
            PlyFormat::BinaryLittleEndian,
        )?;
    }
    let manifest = DatasetManifest {
        name: template.name().to_string(),
        atlas_hash: template.atlas_hash().to_string(),
        frames,
        extrapolation_frames: extra,
        splits,
        pose_ranges: ranges,
        cloth: spec.clone(),
        deform: params.clone(),
        scan: scan.clone(),
    };
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(manifest_path(dir), text)?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest, SynthError> {
    Ok(serde_json::from_slice(&fs::read(manifest_path(dir))?)?)
}
