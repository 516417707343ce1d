//! Fixtures shared by in-crate tests.

use nalgebra::Point3;

use super::{ClothTemplate, TriangleMesh, UvAtlas};

/// A two-triangle unit-square template whose UV chart covers the whole
/// tile, so the validity mask is the full r×r grid.
pub fn square_template(r: usize) -> ClothTemplate {
    let vertices = vec![
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(1.0, 1.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
    ];
    let faces = vec![[0, 1, 2], [0, 2, 3]];
    let face_uvs = vec![
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
        [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
    ];
    let mesh = TriangleMesh::new(vertices, faces.clone()).unwrap();
    let atlas = UvAtlas::new(r, 4, &faces, face_uvs).unwrap();
    assert_eq!(
        atlas.mask().len(),
        r * r,
        "square chart should cover the grid"
    );
    ClothTemplate::new("unit-square", mesh, atlas).unwrap()
}
