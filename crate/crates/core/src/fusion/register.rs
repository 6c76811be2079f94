//! Frame-to-model registration: point-to-plane ICP plus a photometric term,
//! solved by Gauss-Newton coarse to fine.

use nalgebra::{Matrix2x3, Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3, Vector6};

use crate::geometry::{CameraIntrinsics, RigidPose};
use crate::image::GrayImage;

use super::render::{render_model_view, ModelView};
use super::{FusionError, RgbdFrame, SurfelMap};

const LEVELS: usize = 3;
// Smallest accepted eigenvalue of the normal equations, relative to the largest.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub pose: RigidPose,
    /// Share of frame points with a model correspondence at the last
    /// finest-level iteration.
    pub inlier_fraction: f64,
    pub iterations: usize,
}

struct Normal {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    inliers: usize,
    candidates: usize,
}

impl Normal {
    fn new() -> Self {
        Normal {
            h: Matrix6::zeros(),
            g: Vector6::zeros(),
            inliers: 0,
            candidates: 0,
        }
    }

    /// Adds a residual whose gradient with respect to a world-space point
    /// displacement is `grad`, for the point at offset `arm` from the
    /// rotation center.
    fn add(&mut self, arm: &Vector3<f64>, grad: &Vector3<f64>, residual: f64, weight: f64) {
        let rot = arm.cross(grad);
        let j = Vector6::new(rot.x, rot.y, rot.z, grad.x, grad.y, grad.z);
        self.h += j * j.transpose() * weight;
        self.g += j * (residual * weight);
    }
}

/// Refines the world pose of `frame` against the map, starting at `init`.
///
/// The model is re-rendered at the current estimate before each level.
/// The pose update rotates about the current camera center. A level stops
/// as soon as an increment falls below the convergence threshold; that
/// increment is not applied, so a frame already at its optimum returns
/// `init` unchanged.
pub fn register_frame(map: &SurfelMap, frame: &RgbdFrame, init: &RigidPose) -> Result<Registration, FusionError> {
    if map.is_empty() {
        return Err(FusionError::Registration("the model is empty".into()));
    }
    let cfg = map.config();
    let k = *frame.intrinsics();
    let cos_gate = cfg.normal_tolerance_deg.to_radians().cos();
    let frame_pyr = to_unit_gray(&frame.color().to_gray()).pyramid(LEVELS);
    let mut ks = vec![k];
    for l in 1..LEVELS {
        ks.push(ks[l - 1].half_resolution());
    }

    let mut pose = *init;
    let mut total_iterations = 0;
    let mut inlier_fraction = 0.0;

    for level in (0..LEVELS).rev() {
        if cfg.iterations[level] == 0 {
            continue;
        }
        let stride = 1usize << level;
        let kl = &ks[level];
        let model = ModelPyramid::render(map, &pose, &k, level);
        for _ in 0..cfg.iterations[level] {
            total_iterations += 1;
            let center = *pose.translation();
            let mut ne = Normal::new();
            for y in (0..k.height).step_by(stride) {
                for x in (0..k.width).step_by(stride) {
                    let Some(d) = frame.depth().get(x, y) else {
                        continue;
                    };
                    let d = d as f64;
                    let world = pose.transform_point(&k.backproject(x as f64, y as f64, d));
                    let arm = world - center;
                    let in_model = model.world_to_cam.transform_point(&world);

                    if let Some(n_frame) = frame.normals().get(x, y) {
                        ne.candidates += 1;
                        let n_world = pose.transform_vector(&n_frame);
                        if let Some(s) = model_surfel(&model.view.index, &k, &in_model).map(|i| &map.surfels()[i]) {
                            let diff = world - s.position;
                            if diff.norm() < cfg.max_point_distance * d && n_world.dot(&s.normal) > cos_gate {
                                ne.inliers += 1;
                                ne.add(&arm, &s.normal, s.normal.dot(&diff), 1.0);
                            }
                        }
                    }

                    if cfg.photometric_weight > 0.0 {
                        if let Some((value, grad_uv)) = sample_model(&model.gray, &model.mask, kl, &in_model) {
                            let residual = value - frame_pyr[level].get(x / stride, y / stride) as f64;
                            let grad_world = model.rotation * projection_jacobian(kl, &in_model).transpose() * grad_uv;
                            ne.add(&arm, &grad_world, residual, cfg.photometric_weight);
                        }
                    }
                }
            }
            if level == 0 {
                inlier_fraction = if ne.candidates == 0 {
                    0.0
                } else {
                    ne.inliers as f64 / ne.candidates as f64
                };
            }
            let delta = solve(&ne)?;
            if delta.norm() < cfg.convergence {
                break;
            }
            pose = apply_increment(&pose, &center, &delta);
        }
    }

    if inlier_fraction < cfg.min_inlier_fraction {
        return Err(FusionError::Registration(format!(
            "inlier fraction {inlier_fraction:.3} below {}",
            cfg.min_inlier_fraction
        )));
    }
    Ok(Registration {
        pose,
        inlier_fraction,
        iterations: total_iterations,
    })
}

/// The model rendered at one pose, with intensity and coverage images at the
/// working pyramid level.
struct ModelPyramid {
    view: ModelView,
    world_to_cam: RigidPose,
    rotation: Matrix3<f64>,
    gray: GrayImage,
    mask: GrayImage,
}

impl ModelPyramid {
    fn render(map: &SurfelMap, pose: &RigidPose, k: &CameraIntrinsics, level: usize) -> Self {
        let view = render_model_view(map, pose, k);
        let mask = GrayImage::from_fn(k.width, k.height, |x, y| if view.depth.is_valid(x, y) { 1.0 } else { 0.0 });
        let gray = to_unit_gray(&view.color.to_gray());
        ModelPyramid {
            gray: gray.pyramid(level + 1).pop().unwrap(),
            mask: mask.pyramid(level + 1).pop().unwrap(),
            world_to_cam: pose.inverse(),
            rotation: pose.rotation(),
            view,
        }
    }
}

fn to_unit_gray(img: &GrayImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|v| v / 255.0).collect(),
    }
}

fn model_surfel(index: &[Option<usize>], k: &CameraIntrinsics, p: &Vector3<f64>) -> Option<usize> {
    let uv = k.project(p)?;
    let (x, y) = (uv.x.round(), uv.y.round());
    if x < 0.0 || y < 0.0 || x >= k.width as f64 || y >= k.height as f64 {
        return None;
    }
    index[y as usize * k.width + x as usize]
}

/// Bilinear model intensity and its image gradient, where the model covers
/// the whole difference stencil.
fn sample_model(img: &GrayImage, mask: &GrayImage, k: &CameraIntrinsics, p: &Vector3<f64>) -> Option<(f64, Vector2<f64>)> {
    let uv = k.project(p)?;
    let (u, v) = (uv.x, uv.y);
    if u < 1.0 || v < 1.0 || u > (k.width - 2) as f64 || v > (k.height - 2) as f64 {
        return None;
    }
    let covered = [(0.0, 0.0), (-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)]
        .iter()
        .all(|(dx, dy)| mask.sample(u + dx, v + dy) > 0.999);
    if !covered {
        return None;
    }
    let s = |x: f64, y: f64| img.sample(x, y) as f64;
    let grad = Vector2::new((s(u + 1.0, v) - s(u - 1.0, v)) * 0.5, (s(u, v + 1.0) - s(u, v - 1.0)) * 0.5);
    Some((s(u, v), grad))
}

fn projection_jacobian(k: &CameraIntrinsics, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    )
}

fn solve(ne: &Normal) -> Result<Vector6<f64>, FusionError> {
    let eig = ne.h.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= RANK_TOLERANCE * max {
        return Err(FusionError::Registration(format!(
            "rank-deficient normal equations ({} correspondences)",
            ne.inliers
        )));
    }
    let chol = ne
        .h
        .cholesky()
        .ok_or_else(|| FusionError::Registration("normal equations are not positive definite".into()))?;
    Ok(-chol.solve(&ne.g))
}

/// `x ↦ c + R(x − c) + t` applied after `pose`.
fn apply_increment(pose: &RigidPose, center: &Vector3<f64>, delta: &Vector6<f64>) -> RigidPose {
    let omega = Vector3::new(delta[0], delta[1], delta[2]);
    let t = Vector3::new(delta[3], delta[4], delta[5]);
    let rot = UnitQuaternion::from_scaled_axis(omega);
    let step = RigidPose::new(rot, center + t - rot * center);
    step.compose(pose)
}
