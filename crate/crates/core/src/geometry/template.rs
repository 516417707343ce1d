use nalgebra::{Point3, Vector3};
use sha2::{Digest, Sha256};

use super::atlas::UvAtlas;
use super::grid::DisplacementGrid;
use super::mesh::TriangleMesh;
use super::GeometryError;

/// A garment template: the mean (rest) shape of a cloth mesh together with
/// its UV atlas. Deformed states are stored as displacement grids in UV
/// space; the template converts between grids and 3D vertex positions.
#[derive(Debug, Clone)]
pub struct ClothTemplate {
    name: String,
    mesh: TriangleMesh,
    atlas: UvAtlas,
    atlas_hash: String,
}

impl ClothTemplate {
    pub fn new(
        name: impl Into<String>,
        mesh: TriangleMesh,
        atlas: UvAtlas,
    ) -> Result<Self, GeometryError> {
        if mesh.faces() != atlas.faces() || mesh.vertex_count() != atlas.vertex_count() {
            return Err(GeometryError::TopologyMismatch);
        }
        let atlas_hash = hash_structure(&mesh, &atlas);
        Ok(Self {
            name: name.into(),
            mesh,
            atlas,
            atlas_hash,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mesh(&self) -> &TriangleMesh {
        &self.mesh
    }

    pub fn atlas(&self) -> &UvAtlas {
        &self.atlas
    }

    /// Hex digest identifying the template structure (resolution, topology,
    /// UVs, mask, mean shape). Checkpoints and datasets embed it so that a
    /// prior is never applied to a template it was not built for.
    pub fn atlas_hash(&self) -> &str {
        &self.atlas_hash
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    /// Encodes a deformed state (absolute vertex positions) as a UV
    /// displacement grid relative to the mean shape.
    pub fn rasterize_frame(
        &self,
        vertices: &[Point3<f64>],
    ) -> Result<DisplacementGrid, GeometryError> {
        if vertices.len() != self.vertex_count() {
            return Err(GeometryError::DisplacementCountMismatch {
                expected: self.vertex_count(),
                got: vertices.len(),
            });
        }
        let disp: Vec<Vector3<f64>> = vertices
            .iter()
            .zip(self.mesh.vertices())
            .map(|(v, m)| v - m)
            .collect();
        self.atlas.rasterize(&disp)
    }

    /// Rasterizes per-vertex displacements (already relative to the mean
    /// shape) onto the UV grid.
    pub fn rasterize_displacements(
        &self,
        displacements: &[Vector3<f64>],
    ) -> Result<DisplacementGrid, GeometryError> {
        self.atlas.rasterize(displacements)
    }

    /// Per-vertex displacements sampled from a grid.
    pub fn sample_displacements(
        &self,
        grid: &DisplacementGrid,
    ) -> Result<Vec<Vector3<f64>>, GeometryError> {
        self.atlas.sample(grid)
    }

    /// Absolute vertex positions encoded by a grid: mean shape plus sampled
    /// displacements.
    pub fn apply(&self, grid: &DisplacementGrid) -> Result<Vec<Point3<f64>>, GeometryError> {
        let disp = self.atlas.sample(grid)?;
        Ok(self
            .mesh
            .vertices()
            .iter()
            .zip(&disp)
            .map(|(m, d)| m + d)
            .collect())
    }

    /// The deformed mesh encoded by a grid (same topology, new vertices).
    pub fn apply_to_mesh(&self, grid: &DisplacementGrid) -> Result<TriangleMesh, GeometryError> {
        let verts = self.apply(grid)?;
        self.mesh.with_vertices(verts)
    }

    /// Averages each seam group in place so both sides of every seam agree.
    pub fn seam_project(&self, grid: &mut DisplacementGrid) -> Result<(), GeometryError> {
        self.atlas.seam_project(grid)
    }
}

/// SHA-256 over the template structure. Floating-point inputs are quantized
/// to f32 bit patterns so the digest is stable across storage round-trips
/// through f32 mesh formats.
fn hash_structure(mesh: &TriangleMesh, atlas: &UvAtlas) -> String {
    let mut h = Sha256::new();
    h.update((atlas.resolution() as u64).to_le_bytes());
    h.update((atlas.faces().len() as u64).to_le_bytes());
    for f in atlas.faces() {
        for &v in f {
            h.update((v as u64).to_le_bytes());
        }
    }
    for tri in atlas.face_uvs() {
        for uv in tri {
            h.update((uv[0] as f32).to_le_bytes());
            h.update((uv[1] as f32).to_le_bytes());
        }
    }
    let mask = atlas.mask();
    h.update((mask.len() as u64).to_le_bytes());
    for &(x, y) in mask.pixels() {
        h.update((x as u32).to_le_bytes());
        h.update((y as u32).to_le_bytes());
    }
    h.update((mesh.vertex_count() as u64).to_le_bytes());
    for v in mesh.vertices() {
        h.update((v.x as f32).to_le_bytes());
        h.update((v.y as f32).to_le_bytes());
        h.update((v.z as f32).to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
