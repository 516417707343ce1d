//! Partial scans: area-uniform surface sampling, multi-viewpoint occlusion
//! culling, and per-axis sensor noise.

use std::f64::consts::TAU;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{vertex_normals, TriangleMesh};
use crate::guidance::ScanPointCloud;

use super::SynthError;

// Capture ring geometry: viewpoint distance in bounding radii, and the
// alternating elevation above/below the equator.
const VIEW_DISTANCE_FACTOR: f64 = 20.0;
const VIEW_ELEVATION_RAD: f64 = 0.35;

// Noise draws use their own stream so the clean geometry at a given seed is
// identical across noise levels.
const NOISE_STREAM: u64 = 0x4e4f_4953;

/// Virtual capture rig: how many depth cameras ring the subject, how many
/// surface samples each frame draws, and the injected position noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Virtual viewpoints on a ring around the subject, at alternating
    /// elevations.
    pub viewpoints: usize,
    /// Surface samples per frame, drawn before occlusion culling.
    pub samples_per_frame: usize,
    /// Gaussian position noise: standard deviation per axis, millimeters.
    pub gaussian_sigma_mm: f64,
    /// Laplace position noise: scale per axis, millimeters.
    pub laplace_b_mm: f64,
    /// Keep only points visible from at least one viewpoint.
    pub occlusion: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            viewpoints: 7,
            samples_per_frame: 4096,
            gaussian_sigma_mm: 0.0,
            laplace_b_mm: 0.0,
            occlusion: true,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.viewpoints == 0 {
            return Err(SynthError::NoViewpoints);
        }
        if self.samples_per_frame == 0 {
            return Err(SynthError::NoSamples);
        }
        for scale in [self.gaussian_sigma_mm, self.laplace_b_mm] {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(SynthError::BadNoiseScale(scale));
            }
        }
        Ok(())
    }
}

/// Viewpoints on a ring around the mesh's bounding sphere.
fn viewpoints(mesh: &TriangleMesh, count: usize) -> (Vec<Point3<f64>>, f64) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for v in mesh.vertices() {
        lo = lo.inf(&v.coords);
        hi = hi.sup(&v.coords);
    }
    let center = (lo + hi) / 2.0;
    let radius = ((hi - lo).norm() / 2.0).max(1e-6);
    let views = (0..count)
        .map(|k| {
            let azimuth = TAU * k as f64 / count as f64;
            let elevation = if k % 2 == 0 {
                VIEW_ELEVATION_RAD
            } else {
                -VIEW_ELEVATION_RAD
            };
            let dir = Vector3::new(
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
                elevation.cos() * azimuth.cos(),
            );
            Point3::from(center + VIEW_DISTANCE_FACTOR * radius * dir)
        })
        .collect();
    (views, radius)
}

/// Simulates one partial scan of a mesh.
///
/// Samples the surface area-uniformly, assigns each point the interpolated
/// vertex normal, culls points hidden from every viewpoint (when occlusion
/// is on), then adds the configured per-axis noise. Deterministic in
/// `(mesh, cfg, seed)`.
pub fn synth_scan(
    mesh: &TriangleMesh,
    cfg: &ScanConfig,
    seed: u64,
) -> Result<ScanPointCloud, SynthError> {
    cfg.validate()?;
    let tris: Vec<[Point3<f64>; 3]> = mesh
        .faces()
        .iter()
        .map(|f| {
            [
                mesh.vertices()[f[0]],
                mesh.vertices()[f[1]],
                mesh.vertices()[f[2]],
            ]
        })
        .collect();
    let mut cumulative = Vec::with_capacity(tris.len());
    let mut total = 0.0;
    for t in &tris {
        total += 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
        cumulative.push(total);
    }
    if total <= 0.0 {
        return Err(SynthError::ZeroAreaMesh);
    }
    let normals = vertex_normals(mesh).normals;
    let (views, radius) = viewpoints(mesh, cfg.viewpoints);
    let bvh = cfg.occlusion.then(|| Bvh::build(&tris));
    let eps = 1e-6 * radius;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points = Vec::new();
    let mut point_normals = Vec::new();
    for _ in 0..cfg.samples_per_frame {
        let target = rng.gen::<f64>() * total;
        let face = cumulative
            .partition_point(|&a| a <= target)
            .min(tris.len() - 1);
        let (r1, r2) = (rng.gen::<f64>(), rng.gen::<f64>());
        let su = r1.sqrt();
        let (b0, b1, b2) = (1.0 - su, su * (1.0 - r2), su * r2);
        let t = &tris[face];
        let p = Point3::from(b0 * t[0].coords + b1 * t[1].coords + b2 * t[2].coords);
        let f = mesh.faces()[face];
        let mut n = b0 * normals[f[0]] + b1 * normals[f[1]] + b2 * normals[f[2]];
        if n.norm() < 1e-9 {
            n = (t[1] - t[0]).cross(&(t[2] - t[0]));
        }
        if let Some(bvh) = &bvh {
            let visible = views.iter().any(|vp| !bvh.segment_blocked(&p, vp, eps));
            if !visible {
                continue;
            }
        }
        points.push(p);
        point_normals.push(n.normalize());
    }
    if points.is_empty() {
        return Err(SynthError::AllPointsOccluded);
    }

    let mut noise_rng = ChaCha12Rng::seed_from_u64(seed ^ NOISE_STREAM);
    if cfg.gaussian_sigma_mm > 0.0 {
        let normal = Normal::new(0.0, cfg.gaussian_sigma_mm * 1e-3).expect("validated sigma");
        for p in &mut points {
            for k in 0..3 {
                p[k] += normal.sample(&mut noise_rng);
            }
        }
    }
    if cfg.laplace_b_mm > 0.0 {
        // Laplace(b) as a signed exponential: density (1/2b) exp(-|x|/b)
        let exp = Exp::new(1.0 / (cfg.laplace_b_mm * 1e-3)).expect("validated scale");
        for p in &mut points {
            for k in 0..3 {
                let magnitude = exp.sample(&mut noise_rng);
                p[k] += if noise_rng.gen::<bool>() {
                    magnitude
                } else {
                    -magnitude
                };
            }
        }
    }
    Ok(ScanPointCloud::new(points, point_normals)?)
}

/// Axis-aligned BVH over triangles for any-hit segment queries.
struct Bvh {
    tris: Vec<[Point3<f64>; 3]>,
    nodes: Vec<BvhNode>,
}

struct BvhNode {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    /// Leaf: `[a, b)` range into `tris`. Internal: `a`, `b` are child nodes.
    a: u32,
    b: u32,
    leaf: bool,
}

const BVH_LEAF_SIZE: usize = 8;

impl Bvh {
    fn build(tris: &[[Point3<f64>; 3]]) -> Self {
        let centroids: Vec<Vector3<f64>> = tris
            .iter()
            .map(|t| (t[0].coords + t[1].coords + t[2].coords) / 3.0)
            .collect();
        let mut order: Vec<usize> = (0..tris.len()).collect();
        let mut bvh = Bvh {
            tris: Vec::with_capacity(tris.len()),
            nodes: Vec::new(),
        };
        bvh.subdivide(&mut order, tris, &centroids);
        bvh
    }

    fn subdivide(
        &mut self,
        order: &mut [usize],
        tris: &[[Point3<f64>; 3]],
        centroids: &[Vector3<f64>],
    ) -> u32 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &i in order.iter() {
            for p in &tris[i] {
                lo = lo.inf(&p.coords);
                hi = hi.sup(&p.coords);
            }
            clo = clo.inf(&centroids[i]);
            chi = chi.sup(&centroids[i]);
        }
        let node = self.nodes.len();
        self.nodes.push(BvhNode {
            lo,
            hi,
            a: 0,
            b: 0,
            leaf: true,
        });
        let extent = chi - clo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        if order.len() <= BVH_LEAF_SIZE || extent[axis] <= 0.0 {
            let start = self.tris.len() as u32;
            self.tris.extend(order.iter().map(|&i| tris[i]));
            self.nodes[node].a = start;
            self.nodes[node].b = self.tris.len() as u32;
            return node as u32;
        }
        order.sort_unstable_by(|&x, &y| centroids[x][axis].total_cmp(&centroids[y][axis]));
        let mid = order.len() / 2;
        let (left_half, right_half) = order.split_at_mut(mid);
        let left = self.subdivide(left_half, tris, centroids);
        let right = self.subdivide(right_half, tris, centroids);
        self.nodes[node].a = left;
        self.nodes[node].b = right;
        self.nodes[node].leaf = false;
        node as u32
    }

    /// True when any triangle blocks the open segment between `from` and
    /// `to`, excluding `eps`-neighborhoods of the endpoints.
    fn segment_blocked(&self, from: &Point3<f64>, to: &Point3<f64>, eps: f64) -> bool {
        let dir = to - from;
        let len = dir.norm();
        let d = dir / len;
        let inv = Vector3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let (t0, t1) = (eps, len - eps);
        let mut stack = vec![0u32];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            if !slab_hit(&node.lo, &node.hi, from, &inv, t0, t1) {
                continue;
            }
            if node.leaf {
                for tri in &self.tris[node.a as usize..node.b as usize] {
                    if ray_hits_triangle(from, &d, tri, t0, t1) {
                        return true;
                    }
                }
            } else {
                stack.push(node.a);
                stack.push(node.b);
            }
        }
        false
    }
}

fn slab_hit(
    lo: &Vector3<f64>,
    hi: &Vector3<f64>,
    origin: &Point3<f64>,
    inv: &Vector3<f64>,
    t0: f64,
    t1: f64,
) -> bool {
    let mut a = t0;
    let mut b = t1;
    for k in 0..3 {
        let ta = (lo[k] - origin[k]) * inv[k];
        let tb = (hi[k] - origin[k]) * inv[k];
        // NaN from 0 * inf falls out of min/max, leaving the axis unbounded
        a = a.max(ta.min(tb));
        b = b.min(ta.max(tb));
        if a > b {
            return false;
        }
    }
    true
}

fn ray_hits_triangle(
    origin: &Point3<f64>,
    d: &Vector3<f64>,
    tri: &[Point3<f64>; 3],
    t0: f64,
    t1: f64,
) -> bool {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pv = d.cross(&e2);
    let det = e1.dot(&pv);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let tv = origin - tri[0];
    let u = tv.dot(&pv) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return false;
    }
    let qv = tv.cross(&e1);
    let v = d.dot(&qv) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return false;
    }
    let t = e2.dot(&qv) * inv;
    t > t0 && t < t1
}
