//! Meshes, UV atlases, displacement grids and the alignment primitives the
//! registration pipeline is built from.

mod atlas;
mod grid;
mod kdtree;
mod mesh;
mod rigid;
mod robust;
mod template;
#[cfg(test)]
pub mod test_support;

pub use atlas::{SeamGroup, UvAtlas};
pub use grid::{DisplacementGrid, UvMask};
pub use kdtree::{nearest_brute_force, PointIndex};
pub use mesh::{vertex_normals, TriangleMesh, VertexNormals};
pub use rigid::{procrustes_align, RigidTransform};
pub use robust::{huber, point_to_plane};
pub use template::ClothTemplate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("mesh has no faces")]
    NoFaces,
    #[error("face {face} references vertex {vertex} but the mesh has {count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        vertex: usize,
        count: usize,
    },
    #[error("face {0} repeats a vertex")]
    DegenerateFace(usize),
    #[error("non-finite vertex coordinate at vertex {0}")]
    NonFiniteVertex(usize),
    #[error("grid resolution must be at least 2, got {0}")]
    ResolutionTooSmall(usize),
    #[error("atlas expects {faces} per-face UV triples, got {got}")]
    FaceUvCountMismatch { faces: usize, got: usize },
    #[error("UV coordinate outside [0,1]^2 on face {0}")]
    UvOutOfRange(usize),
    #[error("UV triangle of face {0} is degenerate")]
    DegenerateUvFace(usize),
    #[error("UV charts of faces {0} and {1} overlap in the grid interior")]
    OverlappingCharts(usize, usize),
    #[error("atlas validity mask is empty")]
    EmptyMask,
    #[error("vertex {0} is not referenced by any face")]
    UnreferencedVertex(usize),
    #[error("UV point of vertex {vertex} at ({u}, {v}) has zero masked bilinear support")]
    UvPointOffMask { vertex: usize, u: f64, v: f64 },
    #[error("pixel ({0}, {1}) belongs to more than one seam group")]
    AmbiguousSeamPixel(usize, usize),
    #[error("displacement count {got} does not match vertex count {expected}")]
    DisplacementCountMismatch { expected: usize, got: usize },
    #[error("grids belong to different masks")]
    MaskMismatch,
    #[error("atlas and mesh disagree on the face list")]
    TopologyMismatch,
    #[error("non-finite value in displacement grid")]
    NonFiniteGrid,
    #[error("point sets have different lengths ({0} vs {1})")]
    PointCountMismatch(usize, usize),
    #[error("need at least 3 point pairs for rigid alignment, got {0}")]
    TooFewPoints(usize),
    #[error("point configuration is rank-deficient; rigid alignment is not unique")]
    DegenerateConfiguration,
    #[error("matrix is not a rotation (orthonormality residual {0:.3e})")]
    NotARotation(f64),
    #[error("normal vector is not unit length (|n| = {0})")]
    NotUnitNormal(f64),
    #[error("huber delta must be positive, got {0}")]
    NonPositiveDelta(f64),
    #[error("point index is empty")]
    EmptyPointIndex,
    #[error("non-finite coordinate in point index input at point {0}")]
    NonFinitePoint(usize),
}
