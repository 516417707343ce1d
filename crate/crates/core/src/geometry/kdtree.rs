use nalgebra::Point3;

use super::GeometryError;

/// Exact nearest-neighbor index over a fixed point set (3-d kd-tree).
///
/// Queries return the exact Euclidean nearest point; distance ties are broken
/// by the lowest point index, so results match a brute-force scan with the
/// same tie rule regardless of tree layout.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Point3<f64>>,
    nodes: Vec<Node>,
    root: usize,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        // Indices into `points`, sorted ascending.
        members: Vec<usize>,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

const LEAF_SIZE: usize = 8;

impl PointIndex {
    pub fn build(points: Vec<Point3<f64>>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::EmptyPointIndex);
        }
        for (i, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(GeometryError::NonFinitePoint(i));
            }
        }
        let mut nodes = Vec::new();
        let mut idx: Vec<usize> = (0..points.len()).collect();
        let root = build_node(&points, &mut idx, &mut nodes);
        Ok(Self {
            points,
            nodes,
            root,
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

    /// Index and squared distance of the nearest point to `q`.
    pub fn nearest(&self, q: &Point3<f64>) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        best
    }

    fn search(&self, node: usize, q: &Point3<f64>, best: &mut (usize, f64)) {
        match &self.nodes[node] {
            Node::Leaf { members } => {
                for &i in members {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q[*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, q, best);
                // The far side can still hold an equal-distance lower index,
                // so prune strictly.
                if delta * delta <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node(points: &[Point3<f64>], idx: &mut [usize], nodes: &mut Vec<Node>) -> usize {
    if idx.len() <= LEAF_SIZE {
        let mut members = idx.to_vec();
        members.sort_unstable();
        nodes.push(Node::Leaf { members });
        return nodes.len() - 1;
    }
    // Split on the widest axis at the median.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in idx.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap();
    let mid = idx.len() / 2;
    idx.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[idx[mid]][axis];
    let (l, r) = idx.split_at_mut(mid);
    if l.is_empty() {
        // All coordinates equal on this axis; fall back to a leaf.
        let mut members = r.to_vec();
        members.sort_unstable();
        nodes.push(Node::Leaf { members });
        return nodes.len() - 1;
    }
    let left = build_node(points, l, nodes);
    let right = build_node(points, r, nodes);
    nodes.push(Node::Split {
        axis,
        value,
        left,
        right,
    });
    nodes.len() - 1
}

/// Brute-force reference with the same tie rule; used by tests as the oracle.
pub fn nearest_brute_force(points: &[Point3<f64>], q: &Point3<f64>) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = (p - q).norm_squared();
        if d2 < best.1 || (d2 == best.1 && i < best.0) {
            best = (i, d2);
        }
    }
    best
}
