use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::Vector3;

use super::grid::{DisplacementGrid, UvMask};
use super::GeometryError;

/// Pixels that hold copies of the same vertex across a UV seam.
///
/// Members are UV pixel coordinates, all mapping to `vertex`; a group exists
/// only when the vertex has at least two UV points that snap to distinct
/// pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SeamGroup {
    pub vertex: usize,
    pub pixels: Vec<(usize, usize)>,
}

/// UV atlas over a fixed mesh topology: per-face corner UV coordinates, the
/// derived vertex-to-UV multimap, seam groups, the rasterization map and the
/// validity mask shared by every displacement grid of this atlas.
///
/// Charts must be injective away from shared edges: two UV triangles may not
/// overlap in the grid interior. A pixel belongs to the chart containing its
/// center; centers lying exactly on a shared edge go to the lower face index.
#[derive(Debug, Clone)]
pub struct UvAtlas {
    resolution: usize,
    faces: Vec<[usize; 3]>,
    face_uvs: Vec<[[f64; 2]; 3]>,
    vertex_uvs: Vec<Vec<[f64; 2]>>,
    mask: Arc<UvMask>,
    seams: Vec<SeamGroup>,
    // Per masked pixel (dense order): claiming face and barycentric weights.
    raster: Vec<(u32, [f64; 3])>,
    // Per vertex: bilinear sampling weights over masked pixels (dense index,
    // weight), already averaged over the vertex's UV points.
    sampler: Vec<Vec<(u32, f64)>>,
}

// A pixel center exactly on a triangle edge must count as covered; tolerance
// absorbs barycentric round-off at edges.
const EDGE_EPS: f64 = 1e-12;
// Strictly-inside threshold for the chart overlap check.
const INTERIOR_EPS: f64 = 1e-9;

impl UvAtlas {
    pub fn new(
        resolution: usize,
        vertex_count: usize,
        faces: &[[usize; 3]],
        face_uvs: Vec<[[f64; 2]; 3]>,
    ) -> Result<Self, GeometryError> {
        if resolution < 2 {
            return Err(GeometryError::ResolutionTooSmall(resolution));
        }
        if face_uvs.len() != faces.len() {
            return Err(GeometryError::FaceUvCountMismatch {
                faces: faces.len(),
                got: face_uvs.len(),
            });
        }
        for (f, tri) in face_uvs.iter().enumerate() {
            for uv in tri {
                if !(uv[0].is_finite() && uv[1].is_finite())
                    || uv[0] < 0.0
                    || uv[0] > 1.0
                    || uv[1] < 0.0
                    || uv[1] > 1.0
                {
                    return Err(GeometryError::UvOutOfRange(f));
                }
            }
        }

        let r = resolution;
        let mut claims: Vec<Option<(u32, [f64; 3])>> = vec![None; r * r];
        let mut interior_owner: Vec<Option<u32>> = vec![None; r * r];

        for (f, tri) in face_uvs.iter().enumerate() {
            // Pixel coordinates: uv * R; pixel (x, y) has center (x+0.5, y+0.5).
            let p: Vec<[f64; 2]> = tri
                .iter()
                .map(|uv| [uv[0] * r as f64, uv[1] * r as f64])
                .collect();
            let denom = cross(sub(p[1], p[0]), sub(p[2], p[0]));
            if denom.abs() <= 1e-12 {
                return Err(GeometryError::DegenerateUvFace(f));
            }
            let (x0, x1) = pixel_span(p.iter().map(|q| q[0]), r);
            let (y0, y1) = pixel_span(p.iter().map(|q| q[1]), r);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let c = [x as f64 + 0.5, y as f64 + 0.5];
                    let la = cross(sub(p[1], c), sub(p[2], c)) / denom;
                    let lb = cross(sub(p[2], c), sub(p[0], c)) / denom;
                    let lc = cross(sub(p[0], c), sub(p[1], c)) / denom;
                    if la < -EDGE_EPS || lb < -EDGE_EPS || lc < -EDGE_EPS {
                        continue;
                    }
                    let idx = y * r + x;
                    let interior = la > INTERIOR_EPS && lb > INTERIOR_EPS && lc > INTERIOR_EPS;
                    if interior {
                        if let Some(prev) = interior_owner[idx] {
                            return Err(GeometryError::OverlappingCharts(prev as usize, f));
                        }
                        interior_owner[idx] = Some(f as u32);
                    }
                    // Lower face index wins ties; faces are visited ascending.
                    if claims[idx].is_none() {
                        claims[idx] = Some((f as u32, [la, lb, lc]));
                    }
                }
            }
        }

        let inside: Vec<bool> = claims.iter().map(|c| c.is_some()).collect();
        let mask = Arc::new(UvMask::new(r, inside)?);
        let raster: Vec<(u32, [f64; 3])> = mask
            .pixels()
            .iter()
            .map(|&(x, y)| claims[y * r + x].unwrap())
            .collect();

        // Vertex -> UV multimap, deduplicated by exact bit equality.
        let mut vertex_uvs: Vec<Vec<[f64; 2]>> = vec![Vec::new(); vertex_count];
        for (f, tri) in faces.iter().enumerate() {
            for (k, &v) in tri.iter().enumerate() {
                if v >= vertex_count {
                    return Err(GeometryError::FaceIndexOutOfRange {
                        face: f,
                        vertex: v,
                        count: vertex_count,
                    });
                }
                let uv = face_uvs[f][k];
                let seen = vertex_uvs[v].iter().any(|q| {
                    q[0].to_bits() == uv[0].to_bits() && q[1].to_bits() == uv[1].to_bits()
                });
                if !seen {
                    vertex_uvs[v].push(uv);
                }
            }
        }
        // Bilinear sampling weights per vertex, averaged over its UV points.
        // Every UV point must have positive masked support: that is how the
        // discrete grid expresses "the UV point lies inside the mask".
        let mut sampler = Vec::with_capacity(vertex_count);
        for (v, uvs) in vertex_uvs.iter().enumerate() {
            if uvs.is_empty() {
                return Err(GeometryError::UnreferencedVertex(v));
            }
            let mut per_point: Vec<Vec<(u32, f64)>> = Vec::new();
            for uv in uvs {
                let mut entries = Vec::new();
                let mut total = 0.0;
                for (x, y, w) in bilinear_footprint(uv[0], uv[1], r) {
                    if let Some(d) = mask.dense_index(x, y) {
                        entries.push((d as u32, w));
                        total += w;
                    }
                }
                if total <= 0.0 {
                    return Err(GeometryError::UvPointOffMask {
                        vertex: v,
                        u: uv[0],
                        v: uv[1],
                    });
                }
                if (total - 1.0).abs() > 1e-15 {
                    for e in &mut entries {
                        e.1 /= total;
                    }
                }
                per_point.push(entries);
            }
            let share = 1.0 / per_point.len() as f64;
            let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
            for entries in &per_point {
                for &(d, w) in entries {
                    *merged.entry(d).or_insert(0.0) += share * w;
                }
            }
            sampler.push(merged.into_iter().collect());
        }

        // Seam groups: UV points snapped to pixel centers; a group needs two
        // or more distinct pixels.
        let mut seams = Vec::new();
        let mut owner: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for (v, uvs) in vertex_uvs.iter().enumerate() {
            if uvs.len() < 2 {
                continue;
            }
            let mut pixels: Vec<(usize, usize)> = uvs
                .iter()
                .map(|uv| masked_snap(uv[0], uv[1], r, &mask))
                .collect();
            pixels.sort_unstable_by_key(|&(x, y)| (y, x));
            pixels.dedup();
            if pixels.len() < 2 {
                continue;
            }
            for &px in &pixels {
                if owner.insert(px, v).is_some() {
                    return Err(GeometryError::AmbiguousSeamPixel(px.0, px.1));
                }
            }
            seams.push(SeamGroup { vertex: v, pixels });
        }

        Ok(Self {
            resolution,
            faces: faces.to_vec(),
            face_uvs,
            vertex_uvs,
            mask,
            seams,
            raster,
            sampler,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn mask(&self) -> &Arc<UvMask> {
        &self.mask
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_uvs(&self) -> &[[[f64; 2]; 3]] {
        &self.face_uvs
    }

    pub fn vertex_uvs(&self) -> &[Vec<[f64; 2]>] {
        &self.vertex_uvs
    }

    pub fn seam_groups(&self) -> &[SeamGroup] {
        &self.seams
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_uvs.len()
    }

    /// Bilinear sampling weights of a vertex over masked pixels
    /// (dense index, weight); weights sum to 1.
    pub fn vertex_weights(&self, vertex: usize) -> &[(u32, f64)] {
        &self.sampler[vertex]
    }

    /// Rasterizes per-vertex displacements onto the UV grid: each masked
    /// pixel takes the barycentric blend of its claiming face's corners.
    pub fn rasterize(
        &self,
        displacements: &[Vector3<f64>],
    ) -> Result<DisplacementGrid, GeometryError> {
        if displacements.len() != self.vertex_count() {
            return Err(GeometryError::DisplacementCountMismatch {
                expected: self.vertex_count(),
                got: displacements.len(),
            });
        }
        let mut grid = DisplacementGrid::zeros(self.mask.clone());
        let pixels = self.mask.pixels().to_vec();
        for (i, &(x, y)) in pixels.iter().enumerate() {
            let (f, bary) = self.raster[i];
            let [a, b, c] = self.faces[f as usize];
            let v = bary[0] * displacements[a]
                + bary[1] * displacements[b]
                + bary[2] * displacements[c];
            grid.set(x, y, [v.x, v.y, v.z]);
        }
        Ok(grid)
    }

    /// Samples per-vertex displacements from the grid: the mean over the
    /// vertex's UV points of masked-renormalized bilinear samples.
    pub fn sample(&self, grid: &DisplacementGrid) -> Result<Vec<Vector3<f64>>, GeometryError> {
        self.check_mask(grid)?;
        let pixels = self.mask.pixels();
        let mut out = Vec::with_capacity(self.vertex_count());
        for weights in &self.sampler {
            let mut acc = Vector3::zeros();
            for &(d, w) in weights {
                let (x, y) = pixels[d as usize];
                let val = grid.get(x, y);
                acc += w * Vector3::new(val[0], val[1], val[2]);
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Transpose of [`UvAtlas::sample`]: scatters per-vertex cotangents back
    /// onto the grid through the same weights.
    pub fn sample_transpose(
        &self,
        vertex_cotangents: &[Vector3<f64>],
    ) -> Result<DisplacementGrid, GeometryError> {
        if vertex_cotangents.len() != self.vertex_count() {
            return Err(GeometryError::DisplacementCountMismatch {
                expected: self.vertex_count(),
                got: vertex_cotangents.len(),
            });
        }
        let mut grid = DisplacementGrid::zeros(self.mask.clone());
        let pixels = self.mask.pixels().to_vec();
        for (v, weights) in self.sampler.iter().enumerate() {
            let g = vertex_cotangents[v];
            for &(d, w) in weights {
                let (x, y) = pixels[d as usize];
                let mut cur = grid.get(x, y);
                cur[0] += w * g.x;
                cur[1] += w * g.y;
                cur[2] += w * g.z;
                grid.set(x, y, cur);
            }
        }
        Ok(grid)
    }

    /// Replaces every seam group's pixels by the group mean, making the grid
    /// consistent across seams. Idempotent: a group whose members are already
    /// bit-identical is left untouched.
    pub fn seam_project(&self, grid: &mut DisplacementGrid) -> Result<(), GeometryError> {
        self.check_mask(grid)?;
        for group in &self.seams {
            let vals: Vec<[f64; 3]> = group.pixels.iter().map(|&(x, y)| grid.get(x, y)).collect();
            let all_equal = vals
                .windows(2)
                .all(|w| (0..3).all(|c| w[0][c].to_bits() == w[1][c].to_bits()));
            if all_equal {
                continue;
            }
            let n = vals.len() as f64;
            let mut mean = [0.0; 3];
            for v in &vals {
                for c in 0..3 {
                    mean[c] += v[c];
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            for &(x, y) in &group.pixels {
                grid.set(x, y, mean);
            }
        }
        Ok(())
    }

    fn check_mask(&self, grid: &DisplacementGrid) -> Result<(), GeometryError> {
        if Arc::ptr_eq(&self.mask, grid.mask()) || **grid.mask() == *self.mask {
            Ok(())
        } else {
            Err(GeometryError::MaskMismatch)
        }
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Inclusive pixel range whose centers can fall inside [min, max].
fn pixel_span(coords: impl Iterator<Item = f64>, r: usize) -> (usize, usize) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in coords {
        lo = lo.min(c);
        hi = hi.max(c);
    }
    let a = (lo - 0.5).ceil().max(0.0) as usize;
    let b = ((hi - 0.5).floor().max(0.0) as usize).min(r - 1);
    (a.min(r - 1), b)
}

/// Nearest pixel center to a UV point.
fn snap_to_pixel(u: f64, v: f64, r: usize) -> (usize, usize) {
    let x = (u * r as f64 - 0.5).round().max(0.0) as usize;
    let y = (v * r as f64 - 0.5).round().max(0.0) as usize;
    (x.min(r - 1), y.min(r - 1))
}

/// Masked pixel representing a UV point: the nearest pixel center when that
/// pixel is masked (always the case when UV points sit on pixel centers),
/// otherwise the masked footprint pixel with the largest bilinear weight.
/// The caller guarantees the footprint has masked support.
fn masked_snap(u: f64, v: f64, r: usize, mask: &UvMask) -> (usize, usize) {
    let (sx, sy) = snap_to_pixel(u, v, r);
    if mask.contains(sx, sy) {
        return (sx, sy);
    }
    let mut best: Option<(usize, usize, f64)> = None;
    for (x, y, w) in bilinear_footprint(u, v, r) {
        if mask.contains(x, y) && best.map_or(true, |b| w > b.2) {
            best = Some((x, y, w));
        }
    }
    let (x, y, _) = best.expect("UV point validated to have masked support");
    (x, y)
}

/// Up to four (pixel, weight) pairs of the bilinear stencil UV point;
/// zero-weight and out-of-bounds entries are dropped.
fn bilinear_footprint(u: f64, v: f64, r: usize) -> Vec<(usize, usize, f64)> {
    let px = u * r as f64 - 0.5;
    let py = v * r as f64 - 0.5;
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let mut out = Vec::with_capacity(4);
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let w = wx * wy;
            if w <= 0.0 {
                continue;
            }
            let x = x0 + dx;
            let y = y0 + dy;
            if x < 0.0 || y < 0.0 || x >= r as f64 || y >= r as f64 {
                continue;
            }
            out.push((x as usize, y as usize, w));
        }
    }
    out
}
