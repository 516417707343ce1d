use nalgebra::{Matrix3, Point3, Vector3};

use super::GeometryError;

/// Rigid body transform: rotation (orthonormal, det +1) plus translation.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ORTHONORMALITY_TOL: f64 = 1e-6;

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        let det = rotation.determinant();
        if residual > ORTHONORMALITY_TOL || (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(GeometryError::NotARotation(residual.max((det - 1.0).abs())));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// Rotates a direction; translation does not apply.
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Composition: applies `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

/// Least-squares rigid alignment (Kabsch): returns the transform T that
/// minimizes sum_i ||T(source_i) - target_i||^2.
///
/// Errors when fewer than 3 pairs are given or when the centered source
/// cross-covariance is rank-deficient (alignment not unique).
pub fn procrustes_align(
    source: &[Point3<f64>],
    target: &[Point3<f64>],
) -> Result<RigidTransform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::PointCountMismatch(
            source.len(),
            target.len(),
        ));
    }
    if source.len() < 3 {
        return Err(GeometryError::TooFewPoints(source.len()));
    }
    let n = source.len() as f64;
    let s_mean = source.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let t_mean = target.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;

    let mut h = Matrix3::zeros();
    let mut scale = 0.0f64;
    for (s, t) in source.iter().zip(target) {
        let sc = s.coords - s_mean;
        let tc = t.coords - t_mean;
        h += sc * tc.transpose();
        scale = scale.max(sc.norm_squared()).max(tc.norm_squared());
    }

    let svd = h.svd(true, true);
    let u = svd.u.ok_or(GeometryError::DegenerateConfiguration)?;
    let v_t = svd.v_t.ok_or(GeometryError::DegenerateConfiguration)?;
    // Rank >= 2 is required for a unique rotation: collinear or coincident
    // points leave a free rotation about the degenerate axis.
    let sv = svd.singular_values;
    if !(sv[1] > scale.max(1e-300) * 1e-12) {
        return Err(GeometryError::DegenerateConfiguration);
    }

    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = t_mean - rotation * s_mean;
    RigidTransform::new(rotation, translation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cloud(rng: &mut impl Rng, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn rot_z_90() -> Matrix3<f64> {
        Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    #[test]
    fn recovers_synthetic_rigid_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let src = cloud(&mut rng, 40);
        let t_true = RigidTransform::new(rot_z_90(), Vector3::new(0.1, -0.2, 0.3)).unwrap();
        let dst: Vec<_> = src.iter().map(|p| t_true.apply_point(p)).collect();
        let t = procrustes_align(&src, &dst).unwrap();
        assert!((t.rotation() - t_true.rotation()).norm() <= 1e-9);
        assert!((t.translation() - t_true.translation()).norm() <= 1e-9);
        for (s, d) in src.iter().zip(&dst) {
            assert!((t.apply_point(s) - d).norm() <= 1e-9);
        }
    }

    #[test]
    fn noisy_alignment_beats_random_rigid_transforms() {
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let src = cloud(&mut rng, 60);
        let t_true = RigidTransform::new(rot_z_90(), Vector3::new(0.3, 0.0, -0.1)).unwrap();
        let dst: Vec<_> = src
            .iter()
            .map(|p| {
                let q = t_true.apply_point(p);
                Point3::new(
                    q.x + rng.gen_range(-0.01..0.01),
                    q.y + rng.gen_range(-0.01..0.01),
                    q.z + rng.gen_range(-0.01..0.01),
                )
            })
            .collect();
        let t = procrustes_align(&src, &dst).unwrap();
        let resid = |tr: &RigidTransform| -> f64 {
            src.iter()
                .zip(&dst)
                .map(|(s, d)| (tr.apply_point(s) - d).norm_squared())
                .sum()
        };
        let best = resid(&t);
        for _ in 0..100 {
            let axis = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let rot =
                nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
            let tr = RigidTransform::new(
                rot.into_inner(),
                Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
            )
            .unwrap();
            assert!(best <= resid(&tr) + 1e-12);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let src: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let dst = src.clone();
        let e = procrustes_align(&src, &dst).unwrap_err();
        assert!(matches!(e, GeometryError::DegenerateConfiguration));
    }

    #[test]
    fn reflection_is_corrected_to_a_proper_rotation() {
        // Mirrored targets must still yield det +1.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let src = cloud(&mut rng, 30);
        let dst: Vec<_> = src.iter().map(|p| Point3::new(-p.x, p.y, p.z)).collect();
        let t = procrustes_align(&src, &dst).unwrap();
        assert_relative_eq!(t.rotation().determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn inverse_and_compose_are_consistent() {
        let t = RigidTransform::new(rot_z_90(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let id = t.compose(&t.inverse());
        assert!((id.rotation() - Matrix3::identity()).norm() <= 1e-12);
        assert!(id.translation().norm() <= 1e-12);
    }
}
