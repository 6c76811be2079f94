//! Staged cloud alignment: trajectory similarity, rigid point-to-plane ICP,
//! then point-to-point ICP with scale.

use nalgebra::{Matrix6, UnitQuaternion, Vector3, Vector6};

use crate::geometry::{umeyama_similarity, RigidPose, SimilarityTransform};

use super::cloud::{estimate_normals, PointCloud};
use super::kdtree::KdTree;
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignParams {
    pub max_iterations: usize,
    /// Correspondence gate as a fraction of the ground-truth bounding-box diagonal.
    pub max_distance_ratio: f64,
    /// Normal gate for the point-to-plane stage, in degrees.
    pub max_normal_angle_deg: f64,
    /// Neighbours used when the ground truth has no normals.
    pub normal_neighbors: usize,
}

impl Default for AlignParams {
    fn default() -> Self {
        AlignParams {
            max_iterations: 50,
            max_distance_ratio: 0.05,
            max_normal_angle_deg: 45.0,
            normal_neighbors: 10,
        }
    }
}

/// Nearest-neighbour RMSE from every `est` point to the `gt` cloud.
pub fn cloud_rmse(est: &PointCloud, gt: &PointCloud) -> f64 {
    let tree = KdTree::new(&gt.points);
    nearest_rmse(&tree, &est.points)
}

fn nearest_rmse(tree: &KdTree, points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    if tree.is_empty() {
        return f64::INFINITY;
    }
    let sum: f64 = points.iter().map(|p| tree.nearest(p).unwrap().dist2).sum();
    (sum / points.len() as f64).sqrt()
}

struct Matches {
    est: Vec<usize>,
    gt: Vec<usize>,
    rmse: f64,
}

fn correspond(
    tree: &KdTree,
    points: &[Vector3<f64>],
    max_dist: f64,
    normal_gate: Option<(&[Vector3<f64>], &[Vector3<f64>], f64)>,
) -> Matches {
    let mut m = Matches {
        est: Vec::new(),
        gt: Vec::new(),
        rmse: 0.0,
    };
    let mut sum = 0.0;
    for (i, p) in points.iter().enumerate() {
        let Some(nn) = tree.nearest(p) else { break };
        if nn.dist2 > max_dist * max_dist {
            continue;
        }
        if let Some((en, gn, cos)) = normal_gate {
            if en[i].dot(&gn[nn.index]).abs() < cos {
                continue;
            }
        }
        m.est.push(i);
        m.gt.push(nn.index);
        sum += nn.dist2;
    }
    if !m.est.is_empty() {
        m.rmse = (sum / m.est.len() as f64).sqrt();
    }
    m
}

fn rigid(r: UnitQuaternion<f64>, t: Vector3<f64>) -> SimilarityTransform {
    SimilarityTransform {
        scale: 1.0,
        rigid: RigidPose::new(r, t),
    }
}

// Relative RMSE changes below this count as neither progress nor divergence.
const RMSE_TOLERANCE: f64 = 1e-6;

/// Tracks the divergence rule (three consecutive RMSE increases) and
/// reports convergence once the RMSE stops changing.
struct Divergence {
    last: f64,
    rising: usize,
}

impl Divergence {
    fn new() -> Self {
        Divergence {
            last: f64::INFINITY,
            rising: 0,
        }
    }

    fn update(&mut self, rmse: f64, stage: &str) -> Result<bool, EvalError> {
        if !self.last.is_finite() {
            self.last = rmse;
            return Ok(false);
        }
        let tol = RMSE_TOLERANCE * self.last;
        let converged = (rmse - self.last).abs() <= tol;
        if rmse > self.last + tol {
            self.rising += 1;
            if self.rising >= 3 {
                return Err(EvalError::Alignment(format!("{stage} ICP diverged")));
            }
        } else {
            self.rising = 0;
        }
        self.last = rmse;
        Ok(converged)
    }
}

fn point_to_plane(
    points: &[Vector3<f64>],
    est_normals: Option<&[Vector3<f64>]>,
    gt: &PointCloud,
    gt_normals: &[Vector3<f64>],
    tree: &KdTree,
    max_dist: f64,
    params: &AlignParams,
) -> Result<SimilarityTransform, EvalError> {
    let mut total = SimilarityTransform::identity();
    let mut current: Vec<Vector3<f64>> = points.to_vec();
    let mut normals: Option<Vec<Vector3<f64>>> = est_normals.map(|n| n.to_vec());
    let cos = params.max_normal_angle_deg.to_radians().cos();
    let mut divergence = Divergence::new();
    for _ in 0..params.max_iterations {
        let gate = normals.as_deref().map(|en| (en, gt_normals, cos));
        let m = correspond(tree, &current, max_dist, gate);
        if m.est.len() < 6 {
            return Err(EvalError::Alignment(format!(
                "only {} valid correspondences",
                m.est.len()
            )));
        }
        if divergence.update(m.rmse, "point-to-plane")? {
            break;
        }
        let c = m.est.iter().map(|&i| current[i]).sum::<Vector3<f64>>() / m.est.len() as f64;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (&i, &j) in m.est.iter().zip(&m.gt) {
            let p = current[i];
            let n = gt_normals[j];
            let r = n.dot(&(p - gt.points[j]));
            let a = (p - c).cross(&n);
            let jac = Vector6::new(a.x, a.y, a.z, n.x, n.y, n.z);
            h += jac * jac.transpose();
            g += jac * r;
        }
        // in-plane motions of planar scenes are unobservable: take the minimum-norm step
        let x = h.svd(true, true).solve(&(-g), 1e-12 * h.norm().max(1e-300)).map_err(|e| EvalError::Alignment(e.into()))?;
        let omega = Vector3::new(x[0], x[1], x[2]);
        let t = Vector3::new(x[3], x[4], x[5]);
        let r = UnitQuaternion::from_scaled_axis(omega);
        let step = rigid(r, c - r * c + t);
        for p in current.iter_mut() {
            *p = step.apply(p);
        }
        if let Some(n) = normals.as_mut() {
            for v in n.iter_mut() {
                *v = r * *v;
            }
        }
        total = step.compose(&total);
        if omega.norm() < 1e-10 && t.norm() < 1e-10 * (1.0 + c.norm()) {
            break;
        }
    }
    Ok(total)
}

fn scaled_point_to_point(
    points: &[Vector3<f64>],
    gt: &PointCloud,
    tree: &KdTree,
    max_dist: f64,
    params: &AlignParams,
) -> Result<SimilarityTransform, EvalError> {
    let mut total = SimilarityTransform::identity();
    let mut current: Vec<Vector3<f64>> = points.to_vec();
    let mut divergence = Divergence::new();
    for _ in 0..params.max_iterations {
        let m = correspond(tree, &current, max_dist, None);
        if m.est.len() < 3 {
            return Err(EvalError::Alignment(format!(
                "only {} valid correspondences",
                m.est.len()
            )));
        }
        if divergence.update(m.rmse, "scaled point-to-point")? {
            break;
        }
        let src: Vec<_> = m.est.iter().map(|&i| current[i]).collect();
        let dst: Vec<_> = m.gt.iter().map(|&j| gt.points[j]).collect();
        let step = umeyama_similarity(&src, &dst)?;
        for p in current.iter_mut() {
            *p = step.apply(p);
        }
        total = step.compose(&total);
        let small = (step.scale - 1.0).abs() < 1e-10
            && step.rigid.quaternion().angle() < 1e-10
            && step.rigid.translation().norm() < 1e-10 * (1.0 + max_dist);
        if small {
            break;
        }
    }
    Ok(total)
}

/// Aligns `est` onto `gt`. Returns the aligned cloud and the composite
/// transform (applied to the original `est`).
pub fn align_clouds(
    est: &PointCloud,
    gt: &PointCloud,
    traj_sim: &SimilarityTransform,
    params: &AlignParams,
) -> Result<(PointCloud, SimilarityTransform), EvalError> {
    if est.is_empty() || gt.is_empty() {
        return Err(EvalError::Alignment("both clouds must be non-empty".into()));
    }
    let gt_normals = match &gt.normals {
        Some(n) => n.clone(),
        None => estimate_normals(gt, params.normal_neighbors),
    };
    let tree = KdTree::new(&gt.points);
    let max_dist = params.max_distance_ratio * gt.diagonal();

    let rough = est.transformed(traj_sim);
    let step2 = point_to_plane(
        &rough.points,
        rough.normals.as_deref(),
        gt,
        &gt_normals,
        &tree,
        max_dist,
        params,
    )?;
    let mid = rough.transformed(&step2);
    let step3 = scaled_point_to_point(&mid.points, gt, &tree, max_dist, params)?;
    let total = step3.compose(&step2).compose(traj_sim);
    Ok((est.transformed(&total), total))
}
