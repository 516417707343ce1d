use nalgebra::{Point3, Vector3};

use super::GeometryError;

/// Huber penalty and its derivative: quadratic inside `delta`, linear outside.
///
/// value = r^2 / 2 for |r| <= delta, delta * (|r| - delta / 2) otherwise;
/// derivative = r inside, delta * sign(r) outside.
pub fn huber(r: f64, delta: f64) -> Result<(f64, f64), GeometryError> {
    if !(delta > 0.0) {
        return Err(GeometryError::NonPositiveDelta(delta));
    }
    if r.abs() <= delta {
        Ok((0.5 * r * r, r))
    } else {
        Ok((delta * (r.abs() - 0.5 * delta), delta * r.signum()))
    }
}

/// Signed point-to-plane distance (p - q) . n for a unit normal n.
pub fn point_to_plane(
    p: &Point3<f64>,
    q: &Point3<f64>,
    n: &Vector3<f64>,
) -> Result<f64, GeometryError> {
    let len = n.norm();
    if (len - 1.0).abs() > 1e-6 {
        return Err(GeometryError::NotUnitNormal(len));
    }
    Ok((p - q).dot(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn huber_branch_values() {
        // Quadratic branch: (0.5, 1) -> value 0.125, slope 0.5.
        let (v, d) = huber(0.5, 1.0).unwrap();
        assert_eq!((v, d), (0.125, 0.5));
        // Linear branch: (3, 1) -> value 2.5, slope 1.
        let (v, d) = huber(3.0, 1.0).unwrap();
        assert_eq!((v, d), (2.5, 1.0));
        let (v, d) = huber(-3.0, 1.0).unwrap();
        assert_eq!((v, d), (2.5, -1.0));
    }

    #[test]
    fn huber_is_continuous_at_delta() {
        let (a, da) = huber(1.0 - 1e-12, 1.0).unwrap();
        let (b, db) = huber(1.0 + 1e-12, 1.0).unwrap();
        assert!((a - b).abs() <= 1e-11);
        assert!((da - db).abs() <= 1e-11);
    }

    #[test]
    fn huber_derivative_matches_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let delta = 0.7;
        let h = 1e-6;
        for _ in 0..500 {
            let r: f64 = rng.gen_range(-3.0..3.0);
            // The kink at |r| = delta has no classical derivative.
            if (r.abs() - delta).abs() < 10.0 * h {
                continue;
            }
            let (_, d) = huber(r, delta).unwrap();
            let (vp, _) = huber(r + h, delta).unwrap();
            let (vm, _) = huber(r - h, delta).unwrap();
            let fd = (vp - vm) / (2.0 * h);
            assert!(
                (d - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                "r={r} d={d} fd={fd}"
            );
        }
    }

    #[test]
    fn huber_rejects_non_positive_delta() {
        assert!(huber(1.0, 0.0).is_err());
        assert!(huber(1.0, -2.0).is_err());
    }

    #[test]
    fn point_to_plane_is_signed() {
        let q = Point3::origin();
        let n = Vector3::new(0.0, 0.0, 1.0);
        let above = Point3::new(5.0, -3.0, 2.0);
        let below = Point3::new(-1.0, 4.0, -0.5);
        assert_eq!(point_to_plane(&above, &q, &n).unwrap(), 2.0);
        assert_eq!(point_to_plane(&below, &q, &n).unwrap(), -0.5);
    }

    #[test]
    fn point_to_plane_rejects_non_unit_normal() {
        let e = point_to_plane(
            &Point3::origin(),
            &Point3::origin(),
            &Vector3::new(0.0, 0.0, 2.0),
        )
        .unwrap_err();
        assert!(matches!(e, GeometryError::NotUnitNormal(_)));
    }
}
