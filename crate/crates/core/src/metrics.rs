//! Registration error metrics, reported in millimeters.
//!
//! `e_v` is the mean per-vertex distance between two meshes of identical
//! topology and measures alignment directly. `e_pt` and `e_ps` are the two
//! directions of the mean point-to-plane distance between vertex sets and
//! measure only surface agreement: a surface sliding within itself keeps
//! them near zero while `e_v` grows, and conversely a low `e_v` with high
//! plane errors signals deviation from the true surface.

use thiserror::Error;

use crate::geometry::{vertex_normals, GeometryError, PointIndex, TriangleMesh};

const MM_PER_M: f64 = 1e3;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("vertex error needs identical topology, got {0} vs {1} vertices")]
    TopologyMismatch(usize, usize),
    #[error("{count} vertices have degenerate normals (no incident face area)")]
    DegenerateNormals { count: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Mean Euclidean vertex distance in millimeters. The meshes must share
/// topology; vertices are compared index by index.
pub fn e_v(estimate: &TriangleMesh, truth: &TriangleMesh) -> Result<f64, MetricsError> {
    if estimate.vertex_count() != truth.vertex_count() {
        return Err(MetricsError::TopologyMismatch(
            estimate.vertex_count(),
            truth.vertex_count(),
        ));
    }
    let sum: f64 = estimate
        .vertices()
        .iter()
        .zip(truth.vertices())
        .map(|(a, b)| (a - b).norm())
        .sum();
    Ok(MM_PER_M * sum / truth.vertex_count() as f64)
}

/// Point-to-plane error of the estimate against the ground truth: for each
/// ground-truth vertex, the distance to its nearest estimate vertex along
/// the ground-truth vertex normal, averaged. Millimeters.
pub fn e_pt(estimate: &TriangleMesh, truth: &TriangleMesh) -> Result<f64, MetricsError> {
    plane_error(truth, estimate)
}

/// The reverse direction: estimate vertices against their nearest
/// ground-truth vertices, along the estimate's own normals. Millimeters.
pub fn e_ps(estimate: &TriangleMesh, truth: &TriangleMesh) -> Result<f64, MetricsError> {
    plane_error(estimate, truth)
}

/// Mean of |(v - nearest(to, v)) . n_v| over the vertices of `from`.
fn plane_error(from: &TriangleMesh, to: &TriangleMesh) -> Result<f64, MetricsError> {
    let normals = vertex_normals(from);
    if !normals.degenerate.is_empty() {
        return Err(MetricsError::DegenerateNormals {
            count: normals.degenerate.len(),
        });
    }
    let index = PointIndex::build(to.vertices().to_vec())?;
    let sum: f64 = from
        .vertices()
        .iter()
        .zip(&normals.normals)
        .map(|(v, n)| {
            let (j, _) = index.nearest(v);
            (v - to.vertices()[j]).dot(n).abs()
        })
        .sum();
    Ok(MM_PER_M * sum / from.vertex_count() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::nearest_brute_force;
    use crate::synth::{build_template, generate_frame, ClothSpec, DeformationParams};
    use nalgebra::{Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    /// Flat grid in the z = 0 plane, `n` vertices per side, 0.1 m spacing.
    fn flat_sheet(n: usize) -> TriangleMesh {
        let mut verts = Vec::new();
        for j in 0..n {
            for i in 0..n {
                verts.push(Point3::new(0.1 * i as f64, 0.1 * j as f64, 0.0));
            }
        }
        let mut faces = Vec::new();
        for j in 0..n - 1 {
            for i in 0..n - 1 {
                let a = j * n + i;
                faces.push([a, a + 1, a + n + 1]);
                faces.push([a, a + n + 1, a + n]);
            }
        }
        TriangleMesh::new(verts, faces).unwrap()
    }

    fn translated(mesh: &TriangleMesh, offset: Vector3<f64>) -> TriangleMesh {
        mesh.with_vertices(mesh.vertices().iter().map(|v| v + offset).collect())
            .unwrap()
    }

    #[test]
    fn identical_meshes_score_zero_on_all_metrics() {
        let mesh = flat_sheet(6);
        assert_eq!(e_v(&mesh, &mesh).unwrap(), 0.0);
        assert_eq!(e_pt(&mesh, &mesh).unwrap(), 0.0);
        assert_eq!(e_ps(&mesh, &mesh).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_reads_back_in_millimeters() {
        let truth = flat_sheet(6);
        let estimate = translated(&truth, Vector3::new(0.0, 0.0, 0.003));
        let v = e_v(&estimate, &truth).unwrap();
        assert!((v - 3.0).abs() <= 1e-12, "e_v {v} mm, expected 3");
    }

    #[test]
    fn normal_offset_of_a_flat_sheet_is_the_plane_error() {
        // 2 mm along every normal, far below the 100 mm vertex spacing, so
        // each vertex's nearest neighbor is its own displaced copy
        let truth = flat_sheet(6);
        let estimate = translated(&truth, Vector3::new(0.0, 0.0, 0.002));
        let pt = e_pt(&estimate, &truth).unwrap();
        let ps = e_ps(&estimate, &truth).unwrap();
        assert!((pt - 2.0).abs() <= 1e-9, "e_pt {pt} mm, expected 2");
        assert!((ps - 2.0).abs() <= 1e-9, "e_ps {ps} mm, expected 2");
    }

    #[test]
    fn in_plane_sliding_is_invisible_to_plane_errors() {
        let truth = flat_sheet(6);
        let estimate = translated(&truth, Vector3::new(0.001, 0.0, 0.0));
        assert!(e_pt(&estimate, &truth).unwrap() <= 1e-12);
        assert!(e_ps(&estimate, &truth).unwrap() <= 1e-12);
        assert!((e_v(&estimate, &truth).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn metrics_match_a_brute_force_recomputation() {
        // a deformed garment frame against a perturbed copy, on the
        // full-size template
        let spec = ClothSpec::default();
        let params = DeformationParams {
            seed: 21,
            ..DeformationParams::default()
        };
        let template = build_template(&spec).unwrap();
        let truth = template
            .mesh()
            .with_vertices(generate_frame(&spec, &params, 12))
            .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let estimate = truth
            .with_vertices(
                truth
                    .vertices()
                    .iter()
                    .map(|v| {
                        v + 0.004
                            * Vector3::new(
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(-1.0..1.0),
                            )
                    })
                    .collect(),
            )
            .unwrap();

        let v = e_v(&estimate, &truth).unwrap();
        let mut direct = 0.0;
        for (a, b) in estimate.vertices().iter().zip(truth.vertices()) {
            direct += (a - b).norm();
        }
        direct *= 1e3 / truth.vertex_count() as f64;
        assert!((v - direct).abs() <= 1e-9);

        let brute = |from: &TriangleMesh, to: &TriangleMesh| {
            let normals = vertex_normals(from).normals;
            let mut sum = 0.0;
            for (p, n) in from.vertices().iter().zip(&normals) {
                let (j, _) = nearest_brute_force(to.vertices(), p);
                sum += (p - to.vertices()[j]).dot(n).abs();
            }
            1e3 * sum / from.vertex_count() as f64
        };
        let pt = e_pt(&estimate, &truth).unwrap();
        let ps = e_ps(&estimate, &truth).unwrap();
        assert!((pt - brute(&truth, &estimate)).abs() <= 1e-9);
        assert!((ps - brute(&estimate, &truth)).abs() <= 1e-9);
        assert!(pt > 0.0 && ps > 0.0 && v > 0.0);
    }

    #[test]
    fn topology_mismatch_and_degenerate_normals_are_flagged() {
        let a = flat_sheet(6);
        let b = flat_sheet(5);
        assert!(matches!(
            e_v(&a, &b),
            Err(MetricsError::TopologyMismatch(36, 25))
        ));

        // collinear triangle: zero area everywhere, so no vertex normal
        let degenerate = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(matches!(
            e_pt(&a, &degenerate),
            Err(MetricsError::DegenerateNormals { count: 3 })
        ));
    }
}
