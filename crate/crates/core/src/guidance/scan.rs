use nalgebra::{Point3, Vector3};

use crate::geometry::RigidTransform;

use super::GuidanceError;

/// A partial observation of the deformed cloth: 3D points with unit
/// normals, in meters.
#[derive(Debug, Clone)]
pub struct ScanPointCloud {
    points: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
}

impl ScanPointCloud {
    /// Normals must be unit within 1e-4 and are renormalized to exact unit
    /// length on construction.
    pub fn new(
        points: Vec<Point3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self, GuidanceError> {
        if points.is_empty() {
            return Err(GuidanceError::EmptyScan);
        }
        if normals.len() != points.len() {
            return Err(GuidanceError::NormalCountMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(GuidanceError::NonFinitePoint(i));
            }
        }
        let mut unit = Vec::with_capacity(normals.len());
        for (i, n) in normals.iter().enumerate() {
            let len = n.norm();
            if !len.is_finite() || (len - 1.0).abs() > 1e-4 {
                return Err(GuidanceError::BadNormal { index: i, len });
            }
            unit.push(n / len);
        }
        Ok(Self {
            points,
            normals: unit,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    /// The scan moved rigidly: points transformed, normals rotated.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| t.apply_point(p)).collect(),
            normals: self.normals.iter().map(|n| t.rotation() * n).collect(),
        }
    }
}

/// Target positions for template vertices, produced by an external coarse
/// tracker or by sparse keypoint annotations.
#[derive(Debug, Clone)]
pub enum CoarseGuide {
    /// One target per template vertex, in vertex order.
    Dense(Vec<Point3<f64>>),
    /// (vertex index, target) pairs for a subset of vertices.
    Sparse(Vec<(usize, Point3<f64>)>),
}

impl CoarseGuide {
    /// Number of constrained vertices.
    pub fn len(&self) -> usize {
        match self {
            CoarseGuide::Dense(t) => t.len(),
            CoarseGuide::Sparse(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, CoarseGuide::Sparse(_))
    }

    /// Checks the guide against a template's vertex count: dense guides
    /// must cover every vertex, sparse guides need at least 3 distinct
    /// valid indices, and all targets must be finite.
    pub fn validate(&self, vertex_count: usize) -> Result<(), GuidanceError> {
        match self {
            CoarseGuide::Dense(targets) => {
                if targets.len() != vertex_count {
                    return Err(GuidanceError::GuideSizeMismatch {
                        expected: vertex_count,
                        got: targets.len(),
                    });
                }
                for (i, p) in targets.iter().enumerate() {
                    check_finite(i, p)?;
                }
            }
            CoarseGuide::Sparse(pairs) => {
                if pairs.len() < 3 {
                    return Err(GuidanceError::TooFewConstraints(pairs.len()));
                }
                let mut seen = vec![false; vertex_count];
                for &(i, ref p) in pairs {
                    if i >= vertex_count {
                        return Err(GuidanceError::GuideIndexOutOfRange {
                            index: i,
                            count: vertex_count,
                        });
                    }
                    if seen[i] {
                        return Err(GuidanceError::DuplicateConstraint(i));
                    }
                    seen[i] = true;
                    check_finite(i, p)?;
                }
            }
        }
        Ok(())
    }

    /// (vertex index, target) pairs regardless of variant.
    pub fn constraints(&self) -> Box<dyn Iterator<Item = (usize, Point3<f64>)> + '_> {
        match self {
            CoarseGuide::Dense(targets) => {
                Box::new(targets.iter().enumerate().map(|(i, p)| (i, *p)))
            }
            CoarseGuide::Sparse(pairs) => Box::new(pairs.iter().copied()),
        }
    }

    /// The guide moved rigidly.
    pub fn transformed(&self, t: &RigidTransform) -> Self {
        match self {
            CoarseGuide::Dense(targets) => {
                CoarseGuide::Dense(targets.iter().map(|p| t.apply_point(p)).collect())
            }
            CoarseGuide::Sparse(pairs) => CoarseGuide::Sparse(
                pairs
                    .iter()
                    .map(|&(i, ref p)| (i, t.apply_point(p)))
                    .collect(),
            ),
        }
    }
}

fn check_finite(vertex: usize, p: &Point3<f64>) -> Result<(), GuidanceError> {
    if p.x.is_finite() && p.y.is_finite() && p.z.is_finite() {
        Ok(())
    } else {
        Err(GuidanceError::NonFiniteTarget(vertex))
    }
}
