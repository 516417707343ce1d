//! Laplacian-regularized ICP: the non-learned reference that guided
//! diffusion registration is measured against.
//!
//! Vertices start from the coarse guide (dense targets directly; sparse
//! keypoints blended over the mean shape by inverse squared distance) and
//! are refined by iterative closest point with a point-to-plane data term
//! plus a quadratic smoothness penalty λ‖L(V − V_init)‖² on the deformation
//! away from the initialization, where L is the uniform graph Laplacian.
//! Each iteration takes an explicit gradient step on the data term and then
//! applies the penalty's exact proximal map by solving
//! (I + 2sλL²)(V − V_init) = (W − V_init); treating the smoothness term
//! implicitly keeps it stable at step sizes where a plain joint gradient
//! step would diverge.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, Point3, Vector3};

use crate::geometry::{ClothTemplate, PointIndex, TriangleMesh};
use crate::guidance::{
    CoarseGuide, GuidanceError, RegistrationResult, ScanPointCloud, Stage, StepDiagnostic,
};

/// Baseline hyperparameters. Defaults: 200 iterations at step 10⁻³ with
/// smoothness weight 10³.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub iterations: usize,
    /// Gradient step on the data term.
    pub step: f64,
    /// Smoothness weight λ.
    pub lambda: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            step: 1e-3,
            lambda: 1e3,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(GuidanceError::BadStepSize(self.step));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(GuidanceError::BadLambda(self.lambda));
        }
        Ok(())
    }
}

/// Registers the template to a scan without a learned prior. Diagnostics
/// carry one entry per iteration with the data-term value and gradient
/// norm; `t` is always 0 since no diffusion chain is involved.
pub fn laplacian_icp(
    scan: &ScanPointCloud,
    guide: &CoarseGuide,
    template: &ClothTemplate,
    cfg: &BaselineConfig,
) -> Result<RegistrationResult, GuidanceError> {
    let start = Instant::now();
    cfg.validate()?;
    guide.validate(template.vertex_count())?;

    let mean = template.mesh().vertices();
    let init: Vec<Point3<f64>> = match guide {
        CoarseGuide::Dense(targets) => targets.clone(),
        CoarseGuide::Sparse(pairs) => inverse_distance_init(mean, pairs),
    };
    let n = init.len();

    // the prox system (I + 2sλL²) is fixed across iterations: factor once
    let lap = uniform_laplacian(template.mesh());
    let mut a = (&lap * &lap) * (2.0 * cfg.step * cfg.lambda);
    for i in 0..n {
        a[(i, i)] += 1.0;
    }
    // identity plus a PSD matrix, so the factorization cannot fail
    let chol = Cholesky::new(a).expect("I + 2sλL² is positive definite");

    let mut v = init.clone();
    let mut diagnostics = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let index = PointIndex::build(v.clone())?;
        let mut grad = vec![Vector3::zeros(); n];
        let mut distance = 0.0;
        for (p, normal) in scan.points().iter().zip(scan.normals()) {
            let (j, _) = index.nearest(p);
            let r = (v[j] - p).dot(normal);
            distance += r * r;
            grad[j] += 2.0 * r * *normal;
        }
        let grad_norm = grad.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();

        let mut rhs = DMatrix::<f64>::zeros(n, 3);
        for i in 0..n {
            let d = (v[i] - cfg.step * grad[i]) - init[i];
            rhs[(i, 0)] = d.x;
            rhs[(i, 1)] = d.y;
            rhs[(i, 2)] = d.z;
        }
        chol.solve_mut(&mut rhs);
        for i in 0..n {
            v[i] = init[i] + Vector3::new(rhs[(i, 0)], rhs[(i, 1)], rhs[(i, 2)]);
        }

        diagnostics.push(StepDiagnostic {
            position: iter,
            t: 0,
            stage: Stage::Fine,
            distance,
            grad_norm,
        });
    }

    let mesh = template.mesh().with_vertices(v.clone())?;
    let x0 = template.rasterize_frame(&v)?;
    Ok(RegistrationResult {
        mesh,
        x0,
        diagnostics,
        wall_time: start.elapsed(),
    })
}

/// Warps the mean shape by sparse constraints: each constrained vertex
/// lands exactly on its target, the rest receive the constraint offsets
/// blended with weights 1/(d² + ε²) measured in the rest pose.
fn inverse_distance_init(mean: &[Point3<f64>], pairs: &[(usize, Point3<f64>)]) -> Vec<Point3<f64>> {
    const EPS2: f64 = 1e-12; // μm-scale guard for coincident rest positions
    let anchors: Vec<(Point3<f64>, Vector3<f64>)> = pairs
        .iter()
        .map(|&(i, target)| (mean[i], target - mean[i]))
        .collect();
    let mut out: Vec<Point3<f64>> = mean
        .iter()
        .map(|m| {
            let mut total = 0.0;
            let mut blend = Vector3::zeros();
            for (rest, offset) in &anchors {
                let w = 1.0 / ((m - rest).norm_squared() + EPS2);
                total += w;
                blend += w * offset;
            }
            m + blend / total
        })
        .collect();
    for &(i, target) in pairs {
        out[i] = target;
    }
    out
}

/// Uniform (combinatorial) graph Laplacian of the mesh edge graph: degree
/// on the diagonal, −1 per undirected edge.
fn uniform_laplacian(mesh: &TriangleMesh) -> DMatrix<f64> {
    let n = mesh.vertex_count();
    let mut edges = BTreeSet::new();
    for f in mesh.faces() {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let mut l = DMatrix::zeros(n, n);
    for (a, b) in edges {
        l[(a, a)] += 1.0;
        l[(b, b)] += 1.0;
        l[(a, b)] = -1.0;
        l[(b, a)] = -1.0;
    }
    l
}
