use nalgebra::{Point3, Vector3};

use crate::geometry::{huber, point_to_plane, ClothTemplate, DisplacementGrid, PointIndex};

use super::config::{GuidanceConfig, Stage};
use super::scan::{CoarseGuide, ScanPointCloud};
use super::GuidanceError;

/// Nearest current-estimate vertex for every scan point. Assignments are
/// made once per reverse step and then held fixed, so the fine-stage
/// distance below is smooth in the estimate while its gradient is taken.
pub fn assign_correspondences(
    vertices: &[Point3<f64>],
    scan: &ScanPointCloud,
) -> Result<Vec<usize>, GuidanceError> {
    let index = PointIndex::build(vertices.to_vec())?;
    Ok(scan.points().iter().map(|y| index.nearest(y).0).collect())
}

/// Coarse-stage misfit: robust distance from each guided vertex to its
/// target, with the gradient scattered back onto the displacement grid
/// through the vertex sampling weights. Grid and value are in meters.
pub fn coarse_distance(
    x0_hat: &DisplacementGrid,
    guide: &CoarseGuide,
    delta: f64,
    template: &ClothTemplate,
) -> Result<(f64, DisplacementGrid), GuidanceError> {
    guide.validate(template.vertex_count())?;
    let verts = template.apply(x0_hat)?;
    let mut value = 0.0;
    let mut vertex_grads = vec![Vector3::zeros(); verts.len()];
    for (i, target) in guide.constraints() {
        let diff = verts[i] - target;
        let r = diff.norm();
        let (v, dv) = huber(r, delta)?;
        value += v;
        // ∇ϱ(‖v − ṽ‖) = ϱ'(r)·(v − ṽ)/r, taken as zero at the target
        if r > 1e-12 {
            vertex_grads[i] += (dv / r) * diff;
        }
    }
    let grad = template.atlas().sample_transpose(&vertex_grads)?;
    Ok((value, grad))
}

/// Fine-stage misfit: robust point-to-plane residual from every scan point
/// to its corresponding estimate vertex, measured along the scan's normal,
/// with the grid gradient. `correspondences[i]` is the vertex assigned to
/// scan point i and is treated as constant.
pub fn fine_distance(
    x0_hat: &DisplacementGrid,
    scan: &ScanPointCloud,
    correspondences: &[usize],
    delta: f64,
    template: &ClothTemplate,
) -> Result<(f64, DisplacementGrid), GuidanceError> {
    if correspondences.len() != scan.len() {
        return Err(GuidanceError::CorrespondenceCountMismatch {
            expected: scan.len(),
            got: correspondences.len(),
        });
    }
    let verts = template.apply(x0_hat)?;
    let mut value = 0.0;
    let mut vertex_grads = vec![Vector3::zeros(); verts.len()];
    for (i, (y, n)) in scan.points().iter().zip(scan.normals()).enumerate() {
        let j = correspondences[i];
        if j >= verts.len() {
            return Err(GuidanceError::CorrespondenceOutOfRange {
                index: i,
                vertex: j,
                count: verts.len(),
            });
        }
        // residual along the scan normal, not the estimate's own normal
        let r = point_to_plane(y, &verts[j], n)?;
        let (v, dv) = huber(r, delta)?;
        value += v;
        // ∂r/∂v_j = −n
        vertex_grads[j] -= dv * n;
    }
    let grad = template.atlas().sample_transpose(&vertex_grads)?;
    Ok((value, grad))
}

/// The stage-switched data distance and its gradient with respect to the
/// clean-state estimate, both in meters. Fine-stage correspondences are
/// assigned fresh from the estimate passed in.
pub fn stage_distance(
    x0_hat: &DisplacementGrid,
    scan: &ScanPointCloud,
    guide: &CoarseGuide,
    stage: Stage,
    cfg: &GuidanceConfig,
    template: &ClothTemplate,
) -> Result<(f64, DisplacementGrid), GuidanceError> {
    match stage {
        Stage::Coarse => coarse_distance(x0_hat, guide, cfg.huber_delta_coarse, template),
        Stage::Fine => {
            let verts = template.apply(x0_hat)?;
            let corr = assign_correspondences(&verts, scan)?;
            fine_distance(x0_hat, scan, &corr, cfg.huber_delta_fine, template)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::test_support::square_template;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_grid(template: &ClothTemplate, amp: f64, seed: u64) -> DisplacementGrid {
        let mask = template.atlas().mask().clone();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..mask.len() * 3)
            .map(|_| rng.gen_range(-amp..amp))
            .collect();
        DisplacementGrid::from_masked_vec(mask, &vals)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        if a.abs() < 1e-12 && b.abs() < 1e-12 {
            return 0.0;
        }
        (a - b).abs() / a.abs().max(b.abs()).max(1e-9)
    }

    /// Central finite difference of `f` in one grid coordinate.
    fn fd<F: Fn(&DisplacementGrid) -> f64>(
        f: &F,
        x: &DisplacementGrid,
        px: usize,
        py: usize,
        c: usize,
        h: f64,
    ) -> f64 {
        let mut plus = x.clone();
        let mut v = plus.get(px, py);
        v[c] += h;
        plus.set(px, py, v);
        let mut minus = x.clone();
        let mut v = minus.get(px, py);
        v[c] -= h;
        minus.set(px, py, v);
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    #[test]
    fn coarse_distance_is_zero_at_an_exact_fit() {
        let template = square_template(16);
        let x0 = random_grid(&template, 0.2, 3);
        let verts = template.apply(&x0).unwrap();
        let guide = CoarseGuide::Dense(verts);
        let (value, grad) = coarse_distance(&x0, &guide, 0.05, &template).unwrap();
        assert_eq!(value, 0.0);
        assert_eq!(grad.norm(), 0.0);
    }

    #[test]
    fn fine_distance_is_zero_for_points_on_the_estimate() {
        let template = square_template(16);
        let x0 = random_grid(&template, 0.2, 4);
        let verts = template.apply(&x0).unwrap();
        let normals: Vec<Vector3<f64>> = (0..verts.len()).map(|_| Vector3::z()).collect();
        let scan = ScanPointCloud::new(verts.clone(), normals).unwrap();
        let corr = assign_correspondences(&verts, &scan).unwrap();
        let (value, _) = fine_distance(&x0, &scan, &corr, 0.005, &template).unwrap();
        assert_eq!(value, 0.0);
    }

    #[test]
    fn coarse_gradient_matches_finite_differences() {
        let template = square_template(16);
        let x0 = random_grid(&template, 0.15, 5);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let targets: Vec<Point3<f64>> = template
            .apply(&DisplacementGrid::zeros(template.atlas().mask().clone()))
            .unwrap()
            .iter()
            .map(|p| {
                Point3::new(
                    p.x + rng.gen_range(-0.2..0.2),
                    p.y + rng.gen_range(-0.2..0.2),
                    p.z + rng.gen_range(-0.2..0.2),
                )
            })
            .collect();
        let guide = CoarseGuide::Dense(targets);
        let delta = 0.05;
        let (_, grad) = coarse_distance(&x0, &guide, delta, &template).unwrap();

        let f = |g: &DisplacementGrid| coarse_distance(g, &guide, delta, &template).unwrap().0;
        // every pixel with sampling support, plus a spread of pixels without
        let mut max_err = 0.0f64;
        let mut support_checked = 0usize;
        for v in 0..template.vertex_count() {
            for &(d, _) in template.atlas().vertex_weights(v) {
                let (px, py) = template.atlas().mask().pixels()[d as usize];
                for c in 0..3 {
                    let numeric = fd(&f, &x0, px, py, c, 1e-6);
                    max_err = max_err.max(rel_err(grad.get(px, py)[c], numeric));
                    support_checked += 1;
                }
            }
        }
        assert!(support_checked >= 12);
        assert!(max_err <= 1e-4, "max rel err {max_err}");
        // pixels no vertex samples from contribute nothing
        let numeric = fd(&f, &x0, 7, 8, 1, 1e-6);
        assert_eq!(numeric, 0.0);
        assert_eq!(grad.get(7, 8)[1], 0.0);
    }

    #[test]
    fn fine_gradient_matches_finite_differences_with_frozen_matches() {
        let template = square_template(16);
        let x0 = random_grid(&template, 0.1, 7);
        let verts = template.apply(&x0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut points = Vec::new();
        let mut normals = Vec::new();
        for v in &verts {
            for _ in 0..3 {
                points.push(Point3::new(
                    v.x + rng.gen_range(-0.03..0.03),
                    v.y + rng.gen_range(-0.03..0.03),
                    v.z + rng.gen_range(-0.03..0.03),
                ));
                let n = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                normals.push(n / n.norm());
            }
        }
        let scan = ScanPointCloud::new(points, normals).unwrap();
        let corr = assign_correspondences(&verts, &scan).unwrap();
        let delta = 0.005;
        let (_, grad) = fine_distance(&x0, &scan, &corr, delta, &template).unwrap();

        let f = |g: &DisplacementGrid| fine_distance(g, &scan, &corr, delta, &template).unwrap().0;
        let mut max_err = 0.0f64;
        for v in 0..template.vertex_count() {
            for &(d, _) in template.atlas().vertex_weights(v) {
                let (px, py) = template.atlas().mask().pixels()[d as usize];
                for c in 0..3 {
                    let numeric = fd(&f, &x0, px, py, c, 1e-6);
                    max_err = max_err.max(rel_err(grad.get(px, py)[c], numeric));
                }
            }
        }
        assert!(max_err <= 1e-4, "max rel err {max_err}");
    }

    #[test]
    fn fine_residual_is_measured_along_the_scan_normal() {
        let template = square_template(16);
        let x0 = DisplacementGrid::zeros(template.atlas().mask().clone());
        // nearest mean-shape vertex to y is the origin corner; the residual
        // along the scan normal x̂ is 0.3, while along the sheet's own
        // normal ẑ it would be 0.2 — the golden value locks in the former
        let scan =
            ScanPointCloud::new(vec![Point3::new(0.3, 0.4, 0.2)], vec![Vector3::x()]).unwrap();
        let guide = CoarseGuide::Dense(template.mesh().vertices().to_vec());
        let cfg = GuidanceConfig::default();
        let (value, grad) =
            stage_distance(&x0, &scan, &guide, Stage::Fine, &cfg, &template).unwrap();
        let expected = 0.005 * (0.3 - 0.5 * 0.005);
        assert!((value - expected).abs() < 1e-15, "value {value}");
        // gradient points along −x̂ and its weights sum to ϱ'(r) = delta
        let mut sums = [0.0; 3];
        for &(px, py) in x0.mask().pixels() {
            let g = grad.get(px, py);
            for c in 0..3 {
                sums[c] += g[c];
            }
        }
        assert!((sums[0] + 0.005).abs() < 1e-15);
        assert!(sums[1].abs() < 1e-15);
        assert!(sums[2].abs() < 1e-15);
    }

    #[test]
    fn sparse_guide_ignores_unconstrained_vertices() {
        let template = square_template(16);
        let guide = CoarseGuide::Sparse(vec![
            (0, Point3::new(0.1, 0.0, 0.3)),
            (1, Point3::new(1.0, 0.1, 0.0)),
            (2, Point3::new(0.9, 1.1, 0.2)),
        ]);
        let base = DisplacementGrid::zeros(template.atlas().mask().clone());
        let (v1, _) = coarse_distance(&base, &guide, 0.05, &template).unwrap();

        // move only pixels sampled by the unconstrained vertex 3
        let mut moved = base.clone();
        for &(d, _) in template.atlas().vertex_weights(3) {
            let (px, py) = template.atlas().mask().pixels()[d as usize];
            moved.set(px, py, [0.5, -0.2, 0.9]);
        }
        let (v2, _) = coarse_distance(&moved, &guide, 0.05, &template).unwrap();
        assert_eq!(v1, v2);
        assert!(v1 > 0.0);
    }

    #[test]
    fn correspondence_shape_errors_are_reported() {
        let template = square_template(16);
        let x0 = DisplacementGrid::zeros(template.atlas().mask().clone());
        let scan = ScanPointCloud::new(vec![Point3::new(0.0, 0.0, 0.1); 2], vec![Vector3::z(); 2])
            .unwrap();
        assert!(matches!(
            fine_distance(&x0, &scan, &[0], 0.005, &template),
            Err(GuidanceError::CorrespondenceCountMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            fine_distance(&x0, &scan, &[0, 99], 0.005, &template),
            Err(GuidanceError::CorrespondenceOutOfRange {
                index: 1,
                vertex: 99,
                ..
            })
        ));
    }
}
