use nalgebra::{Point3, Vector3};

use super::GeometryError;

/// Triangle mesh with fixed topology. Faces index into the vertex list.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if vertices.is_empty() {
            return Err(GeometryError::EmptyMesh);
        }
        if faces.is_empty() {
            return Err(GeometryError::NoFaces);
        }
        for (i, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(GeometryError::NonFiniteVertex(i));
            }
        }
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(GeometryError::FaceIndexOutOfRange {
                        face: f,
                        vertex: v,
                        count: vertices.len(),
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(GeometryError::DegenerateFace(f));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Same topology, new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point3<f64>>) -> Result<Self, GeometryError> {
        if vertices.len() != self.vertices.len() {
            return Err(GeometryError::PointCountMismatch(
                vertices.len(),
                self.vertices.len(),
            ));
        }
        Self::new(vertices, self.faces.clone())
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|&[a, b, c]| {
                let e1 = self.vertices[b] - self.vertices[a];
                let e2 = self.vertices[c] - self.vertices[a];
                0.5 * e1.cross(&e2).norm()
            })
            .sum()
    }
}

/// Area-weighted vertex normals plus the list of vertices whose weighted
/// accumulation was numerically zero (those get a fixed placeholder normal).
#[derive(Debug, Clone)]
pub struct VertexNormals {
    pub normals: Vec<Vector3<f64>>,
    pub degenerate: Vec<usize>,
}

const PLACEHOLDER_NORMAL: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Area-weighted vertex normals: each face contributes its area vector
/// (half the edge cross product) to its three corners.
pub fn vertex_normals(mesh: &TriangleMesh) -> VertexNormals {
    let mut acc = vec![Vector3::zeros(); mesh.vertex_count()];
    for &[a, b, c] in mesh.faces() {
        let e1 = mesh.vertices()[b] - mesh.vertices()[a];
        let e2 = mesh.vertices()[c] - mesh.vertices()[a];
        let area_vec = 0.5 * e1.cross(&e2);
        acc[a] += area_vec;
        acc[b] += area_vec;
        acc[c] += area_vec;
    }
    let mut degenerate = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let n = v.norm();
            if n <= 1e-300 {
                degenerate.push(i);
                PLACEHOLDER_NORMAL
            } else {
                v / n
            }
        })
        .collect();
    VertexNormals {
        normals,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_out_of_range_face_index() {
        let verts = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let e = TriangleMesh::new(verts, vec![[0, 1, 3]]).unwrap_err();
        assert!(matches!(e, GeometryError::FaceIndexOutOfRange { .. }));
    }

    #[test]
    fn rejects_repeated_vertex_in_face() {
        let verts = vec![
            Point3::origin(),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let e = TriangleMesh::new(verts, vec![[0, 1, 1]]).unwrap_err();
        assert!(matches!(e, GeometryError::DegenerateFace(0)));
    }

    #[test]
    fn flat_square_has_uniform_up_normals() {
        let verts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let vn = vertex_normals(&mesh);
        assert!(vn.degenerate.is_empty());
        for n in &vn.normals {
            assert_relative_eq!(n.z, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn zero_area_accumulation_gets_placeholder_and_flag() {
        // Two coincident opposite-orientation faces cancel exactly.
        let verts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let mesh = TriangleMesh::new(verts, vec![[0, 1, 2], [0, 2, 1]]).unwrap();
        let vn = vertex_normals(&mesh);
        assert_eq!(vn.degenerate, vec![0, 1, 2]);
        assert_eq!(vn.normals[0], PLACEHOLDER_NORMAL);
    }
}
