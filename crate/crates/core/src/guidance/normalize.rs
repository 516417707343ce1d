use nalgebra::Point3;

use crate::geometry::{
    procrustes_align, ClothTemplate, GeometryError, RigidTransform, TriangleMesh,
};

use super::scan::{CoarseGuide, ScanPointCloud};
use super::GuidanceError;

/// A captured frame rigidly moved into the template's coordinate frame.
#[derive(Debug, Clone)]
pub struct NormalizedFrame {
    pub scan: ScanPointCloud,
    pub guide: CoarseGuide,
    /// Maps template-frame geometry back onto the original capture frame.
    pub to_scan: RigidTransform,
}

/// Undoes a frame's global rigid motion before registration. The guide's
/// pairs act as correspondences: the rigid transform from the template's
/// mean-shape vertices to the guide targets is fitted by least squares and
/// its inverse applied to both the scan and the guide. Compose results with
/// `to_scan` to report them in capture coordinates.
pub fn normalize_frame(
    scan: &ScanPointCloud,
    guide: &CoarseGuide,
    template: &ClothTemplate,
) -> Result<NormalizedFrame, GuidanceError> {
    guide.validate(template.vertex_count())?;
    let mean = template.mesh().vertices();
    let mut source = Vec::with_capacity(guide.len());
    let mut target = Vec::with_capacity(guide.len());
    for (i, p) in guide.constraints() {
        source.push(mean[i]);
        target.push(p);
    }
    let to_scan = procrustes_align(&source, &target)?;
    let back = to_scan.inverse();
    Ok(NormalizedFrame {
        scan: scan.transformed(&back),
        guide: guide.transformed(&back),
        to_scan,
    })
}

/// The mesh under a rigid transform (topology unchanged).
pub fn transform_mesh(
    mesh: &TriangleMesh,
    t: &RigidTransform,
) -> Result<TriangleMesh, GeometryError> {
    let verts: Vec<Point3<f64>> = mesh.vertices().iter().map(|p| t.apply_point(p)).collect();
    mesh.with_vertices(verts)
}
