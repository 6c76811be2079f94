use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{CameraIntrinsics, RigidPose, SimilarityTransform};
use crate::image::RgbImage;
use crate::maps::DepthMap;

use super::kdtree::KdTree;
use super::EvalError;

/// 3D points with optional per-point colors and unit normals.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            colors: None,
            normals: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(EvalError::Data("non-finite point coordinate".into()));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.points.len() {
                return Err(EvalError::Data("color count differs from point count".into()));
            }
        }
        if let Some(n) = &self.normals {
            if n.len() != self.points.len() {
                return Err(EvalError::Data("normal count differs from point count".into()));
            }
            if n.iter().any(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(EvalError::Data("normals must have unit length".into()));
            }
        }
        Ok(())
    }

    /// Keeps the points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Appends `other`; per-point attributes survive only if both clouds carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        let was_empty = self.points.is_empty();
        self.points.extend_from_slice(&other.points);
        self.colors = match (self.colors.take(), &other.colors) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
        self.normals = match (self.normals.take(), &other.normals) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
    }

    pub fn transformed(&self, sim: &SimilarityTransform) -> PointCloud {
        let r = sim.rigid.quaternion();
        PointCloud {
            points: self.points.iter().map(|p| sim.apply(p)).collect(),
            colors: self.colors.clone(),
            normals: self.normals.as_ref().map(|n| n.iter().map(|v| r * v).collect()),
        }
    }

    /// Axis-aligned bounds `(min, max)`; `None` when empty.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }
}

/// Lifts every valid depth pixel into world coordinates, carrying color.
pub fn backproject_depth(
    depth: &DepthMap,
    color: Option<&RgbImage>,
    k: &CameraIntrinsics,
    pose: &RigidPose,
) -> PointCloud {
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for y in 0..depth.height {
        for x in 0..depth.width {
            if let Some(d) = depth.get(x, y) {
                points.push(pose.transform_point(&k.backproject(x as f64, y as f64, d as f64)));
                if let Some(c) = color {
                    colors.push(c.get(x, y));
                }
            }
        }
    }
    PointCloud {
        points,
        colors: color.map(|_| colors),
        normals: None,
    }
}

/// One centroid per occupied voxel. The grid is anchored at the cloud's
/// minimum corner; output order follows the voxel keys.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud, EvalError> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(EvalError::Config(format!("voxel size must be positive, got {voxel}")));
    }
    let Some((lo, _)) = cloud.bounds() else {
        return Ok(cloud.clone());
    };
    #[derive(Default)]
    struct Acc {
        n: usize,
        sum: Vector3<f64>,
        color: [u64; 3],
        normal: Vector3<f64>,
    }
    let mut cells: BTreeMap<(i64, i64, i64), Acc> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = voxel_key(p, &lo, voxel);
        let acc = cells.entry(key).or_default();
        acc.n += 1;
        acc.sum += p;
        if let Some(c) = &cloud.colors {
            for ch in 0..3 {
                acc.color[ch] += c[i][ch] as u64;
            }
        }
        if let Some(n) = &cloud.normals {
            acc.normal += n[i];
        }
    }
    let mut out = PointCloud::new(Vec::with_capacity(cells.len()));
    let mut colors = Vec::new();
    let mut normals = Vec::new();
    for acc in cells.values() {
        let n = acc.n as f64;
        out.points.push(acc.sum / n);
        colors.push(acc.color.map(|c| ((c as f64 / n).round()) as u8));
        let len = acc.normal.norm();
        normals.push(if len > 0.0 { acc.normal / len } else { Vector3::z() });
    }
    if cloud.colors.is_some() {
        out.colors = Some(colors);
    }
    if cloud.normals.is_some() {
        out.normals = Some(normals);
    }
    Ok(out)
}

fn voxel_key(p: &Vector3<f64>, origin: &Vector3<f64>, voxel: f64) -> (i64, i64, i64) {
    let q = (p - origin) / voxel;
    (q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64)
}

/// Removes points whose mean distance to their `k` nearest neighbours
/// exceeds `μ + std_ratio·σ` of those means.
pub fn statistical_outlier_removal(cloud: &PointCloud, k: usize, std_ratio: f64) -> Result<PointCloud, EvalError> {
    if cloud.len() <= k {
        return Err(EvalError::TooFewPoints {
            needed: k + 1,
            found: cloud.len(),
        });
    }
    let tree = KdTree::new(&cloud.points);
    let means: Vec<f64> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.knn(p, k + 1);
            nn.iter()
                .filter(|n| n.index != i)
                .take(k)
                .map(|n| n.dist2.sqrt())
                .sum::<f64>()
                / k as f64
        })
        .collect();
    let n = means.len() as f64;
    let mu = means.iter().sum::<f64>() / n;
    let sigma = (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / n).sqrt();
    let limit = mu + std_ratio * sigma;
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| means[i] <= limit).collect();
    Ok(cloud.select(&keep))
}

/// Normals from the smallest principal axis of each point's `k` nearest
/// neighbours. Orientation is arbitrary.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Vec<Vector3<f64>> {
    let tree = KdTree::new(&cloud.points);
    cloud
        .points
        .iter()
        .map(|p| {
            let nn = tree.knn(p, k.max(3));
            let mean = nn.iter().map(|n| cloud.points[n.index]).sum::<Vector3<f64>>() / nn.len() as f64;
            let mut cov = Matrix3::zeros();
            for n in &nn {
                let d = cloud.points[n.index] - mean;
                cov += d * d.transpose();
            }
            let eig = cov.symmetric_eigen();
            let n = eig.eigenvectors.column(eig.eigenvalues.imin()).into_owned();
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vector3::z()
            }
        })
        .collect()
}
