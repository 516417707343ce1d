//! Parametric garment templates.

use std::f64::consts::{PI, TAU};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::geometry::{ClothTemplate, TriangleMesh, UvAtlas};

use super::SynthError;

/// Panel arrangement of the garment family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PanelLayout {
    /// Two rectangular panels stitched along both vertical edges, forming a
    /// tube hanging from its waist (a skirt). Exercises UV seams: the
    /// stitched columns are shared vertices charted in both panels.
    Tube,
    /// A single free-hanging rectangular panel; no seams.
    Sheet,
}

/// Parametric garment spec: panel dimensions, mesh resolution, and the UV
/// grid the displacement maps live on.
///
/// The UV layout places panels side by side with a 2-pixel margin, and every
/// vertex lands exactly on a pixel center, so rasterizing a frame and
/// sampling it back at the vertices is exact up to rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClothSpec {
    pub layout: PanelLayout,
    /// Panel width in meters. For the tube this is half the circumference.
    pub panel_width: f64,
    /// Panel height in meters (the hang direction).
    pub panel_height: f64,
    /// Vertex columns per panel.
    pub cols: usize,
    /// Vertex rows per panel.
    pub rows: usize,
    /// UV grid resolution in pixels per side.
    pub grid_resolution: usize,
}

impl Default for ClothSpec {
    /// Desk-scale skirt: a 1.2 m circumference, 0.7 m tall tube with 868
    /// vertices on a 128-pixel UV grid.
    fn default() -> Self {
        Self {
            layout: PanelLayout::Tube,
            panel_width: 0.6,
            panel_height: 0.7,
            cols: 15,
            rows: 31,
            grid_resolution: 128,
        }
    }
}

impl ClothSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let min_cols = match self.layout {
            PanelLayout::Tube => 3,
            PanelLayout::Sheet => 2,
        };
        if self.cols < min_cols || self.rows < 2 {
            return Err(SynthError::GridTooCoarse {
                cols: self.cols,
                rows: self.rows,
            });
        }
        if !(self.panel_width > 0.0 && self.panel_width.is_finite())
            || !(self.panel_height > 0.0 && self.panel_height.is_finite())
        {
            return Err(SynthError::BadPanelSize {
                width: self.panel_width,
                height: self.panel_height,
            });
        }
        self.uv_strides()?;
        Ok(())
    }

    fn panels(&self) -> usize {
        match self.layout {
            PanelLayout::Tube => 2,
            PanelLayout::Sheet => 1,
        }
    }

    /// Vertices around one row. Tube rows close into a ring: the two stitch
    /// columns are shared, so a ring holds `2 * (cols - 1)` vertices.
    pub(super) fn ring(&self) -> usize {
        match self.layout {
            PanelLayout::Tube => 2 * (self.cols - 1),
            PanelLayout::Sheet => self.cols,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.ring() * self.rows
    }

    /// Rest position of the vertex at global column `c`, row `j`. The tube
    /// stands on the y axis (waist at the top row); the sheet hangs in the
    /// y/x plane.
    pub(super) fn mean_vertex(&self, c: usize, j: usize) -> Point3<f64> {
        let y = self.panel_height * j as f64 / (self.rows - 1) as f64;
        match self.layout {
            PanelLayout::Tube => {
                let radius = self.panel_width / PI;
                let theta = TAU * c as f64 / self.ring() as f64;
                Point3::new(radius * theta.sin(), y, radius * theta.cos())
            }
            PanelLayout::Sheet => {
                let x = self.panel_width * (c as f64 / (self.cols - 1) as f64 - 0.5);
                Point3::new(x, y, 0.0)
            }
        }
    }

    /// Longest rest edge in the triangulation (the quad diagonal).
    pub fn max_edge_len(&self) -> f64 {
        let vert = self.panel_height / (self.rows - 1) as f64;
        let horiz = match self.layout {
            PanelLayout::Tube => {
                let radius = self.panel_width / PI;
                2.0 * radius * (PI / self.ring() as f64).sin()
            }
            PanelLayout::Sheet => self.panel_width / (self.cols - 1) as f64,
        };
        vert.hypot(horiz)
    }

    /// Pixel strides of the vertex lattice in UV space. Each panel owns a
    /// `resolution / panels` wide strip with 2-pixel outer margins.
    fn uv_strides(&self) -> Result<(usize, usize), SynthError> {
        let span_x = self.grid_resolution / self.panels();
        let sx = span_x.saturating_sub(4) / (self.cols - 1);
        let sy = self.grid_resolution.saturating_sub(4) / (self.rows - 1);
        if sx < 1 || sy < 1 {
            return Err(SynthError::UnresolvableResolution {
                cols: self.cols,
                rows: self.rows,
                resolution: self.grid_resolution,
            });
        }
        Ok((sx, sy))
    }

    /// UV coordinate of panel-local column `i`, row `j` in panel `p`: the
    /// center of its pixel.
    fn uv_of(&self, p: usize, i: usize, j: usize, sx: usize, sy: usize) -> [f64; 2] {
        let res = self.grid_resolution as f64;
        let x = (p * (self.grid_resolution / self.panels()) + 2 + i * sx) as f64 + 0.5;
        let y = (2 + j * sy) as f64 + 0.5;
        [x / res, y / res]
    }

    /// Triangles and per-corner UVs, panel by panel. Quads split along one
    /// diagonal; the stitched tube columns appear in both panels' charts
    /// (same vertex index, different UV), which is what derives the seam
    /// groups.
    ///
    /// The spec must be valid (`validate`).
    pub(super) fn topology(&self) -> (Vec<[usize; 3]>, Vec<[[f64; 2]; 3]>) {
        let (sx, sy) = self.uv_strides().expect("validated spec");
        let ring = self.ring();
        let quads_per_row = self.cols - 1;
        let mut faces = Vec::with_capacity(2 * self.panels() * quads_per_row * (self.rows - 1));
        let mut uvs = Vec::with_capacity(faces.capacity());
        for p in 0..self.panels() {
            for j in 0..self.rows - 1 {
                for i in 0..quads_per_row {
                    let c0 = p * quads_per_row + i;
                    let c1 = (c0 + 1) % ring;
                    let a = j * ring + c0;
                    let b = j * ring + c1;
                    let t = (j + 1) * ring + c1;
                    let d = (j + 1) * ring + c0;
                    let ua = self.uv_of(p, i, j, sx, sy);
                    let ub = self.uv_of(p, i + 1, j, sx, sy);
                    let ut = self.uv_of(p, i + 1, j + 1, sx, sy);
                    let ud = self.uv_of(p, i, j + 1, sx, sy);
                    faces.push([a, b, t]);
                    uvs.push([ua, ub, ut]);
                    faces.push([a, t, d]);
                    uvs.push([ua, ut, ud]);
                }
            }
        }
        (faces, uvs)
    }
}

/// Builds the garment template: rest-shape mesh, UV atlas (seam groups
/// derived from the stitched columns), and their binding.
pub fn build_template(spec: &ClothSpec) -> Result<ClothTemplate, SynthError> {
    spec.validate()?;
    let ring = spec.ring();
    let mut vertices = Vec::with_capacity(spec.vertex_count());
    for j in 0..spec.rows {
        for c in 0..ring {
            vertices.push(spec.mean_vertex(c, j));
        }
    }
    let (faces, face_uvs) = spec.topology();
    let mesh = TriangleMesh::new(vertices, faces.clone())?;
    let atlas = UvAtlas::new(spec.grid_resolution, mesh.vertex_count(), &faces, face_uvs)?;
    let name = match spec.layout {
        PanelLayout::Tube => "tube",
        PanelLayout::Sheet => "sheet",
    };
    Ok(ClothTemplate::new(name, mesh, atlas)?)
}
