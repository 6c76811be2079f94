//! On-disk dataset layout:
//!
//! ```text
//! intrinsics.txt      fx fy cx cy width height
//! poses.txt           input camera poses (TUM text), one per image
//! groundtruth.txt     optional ground-truth poses
//! rgb/000000.ppm      one color image per pose
//! depth/000000.pfm    optional ground-truth depth per image
//! gt_cloud.ply        optional ground-truth point cloud
//! ```

use std::path::Path;
use std::sync::Arc;

use crate::eval::PointCloud;
use crate::geometry::{CameraIntrinsics, Trajectory};
use crate::image::RgbImage;
use crate::maps::DepthMap;
use crate::sampler::Keyframe;
use crate::synth::{SyntheticData, SyntheticScene};

use super::{
    create_dir, read_bytes, read_depth, read_image, read_ply, read_trajectory, write_bytes, write_depth, write_image,
    write_ply, write_trajectory, IoError,
};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub intrinsics: CameraIntrinsics,
    pub poses: Trajectory,
    pub images: Vec<RgbImage>,
    pub groundtruth: Option<Trajectory>,
    /// Empty, or one map per image.
    pub depth: Vec<DepthMap>,
    pub gt_cloud: Option<PointCloud>,
}

fn frame_name(i: usize, ext: &str) -> String {
    format!("{i:06}.{ext}")
}

fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics, IoError> {
    let (line, row) = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .find(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .ok_or_else(|| IoError::Format("intrinsics file is empty".into()))?;
    let t: Vec<&str> = row.split_whitespace().collect();
    if t.len() != 6 {
        return Err(IoError::Parse {
            line,
            message: format!("expected fx fy cx cy width height, found {} values", t.len()),
        });
    }
    let f = |s: &str| {
        s.parse::<f64>().map_err(|_| IoError::Parse {
            line,
            message: format!("not a number: {s:?}"),
        })
    };
    let n = |s: &str| {
        s.parse::<usize>().map_err(|_| IoError::Parse {
            line,
            message: format!("not an image size: {s:?}"),
        })
    };
    Ok(CameraIntrinsics::new(f(t[0])?, f(t[1])?, f(t[2])?, f(t[3])?, n(t[4])?, n(t[5])?)?)
}

impl Dataset {
    pub fn from_synthetic(data: &SyntheticData) -> Result<Dataset, IoError> {
        let traj = data.trajectory()?;
        Ok(Dataset {
            intrinsics: data.intrinsics,
            poses: traj.clone(),
            images: data.frames.iter().map(|f| f.image.clone()).collect(),
            groundtruth: Some(traj),
            depth: data.frames.iter().map(|f| f.depth.clone()).collect(),
            gt_cloud: Some(data.gt_cloud()?),
        })
    }

    pub fn load(dir: &Path) -> Result<Dataset, IoError> {
        let text = String::from_utf8(read_bytes(&dir.join("intrinsics.txt"))?)
            .map_err(|_| IoError::Format("intrinsics.txt is not UTF-8".into()))?;
        let intrinsics = parse_intrinsics(&text)?;
        let poses = read_trajectory(&dir.join("poses.txt"))?;
        let gt_path = dir.join("groundtruth.txt");
        let groundtruth = if gt_path.exists() { Some(read_trajectory(&gt_path)?) } else { None };
        let mut images = Vec::with_capacity(poses.len());
        for i in 0..poses.len() {
            let img = read_image(&dir.join("rgb").join(frame_name(i, "ppm")))?;
            if img.width != intrinsics.width || img.height != intrinsics.height {
                return Err(IoError::Data(format!(
                    "image {i} is {}x{}, intrinsics say {}x{}",
                    img.width, img.height, intrinsics.width, intrinsics.height
                )));
            }
            images.push(img);
        }
        let mut depth = Vec::new();
        if dir.join("depth").is_dir() {
            for i in 0..poses.len() {
                depth.push(read_depth(&dir.join("depth").join(frame_name(i, "pfm")))?);
            }
        }
        let cloud_path = dir.join("gt_cloud.ply");
        let gt_cloud = if cloud_path.exists() { Some(read_ply(&cloud_path)?) } else { None };
        Ok(Dataset {
            intrinsics,
            poses,
            images,
            groundtruth,
            depth,
            gt_cloud,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Every image as a keyframe at its input pose.
    pub fn keyframes(&self) -> Vec<Keyframe> {
        self.poses
            .entries()
            .iter()
            .zip(&self.images)
            .enumerate()
            .map(|(i, (e, img))| Keyframe {
                id: i as u64,
                timestamp: e.timestamp,
                image: Arc::new(img.clone()),
                pose: e.pose,
            })
            .collect()
    }
}

pub fn write_dataset(data: &Dataset, dir: &Path) -> Result<(), IoError> {
    if data.images.len() != data.poses.len() || !(data.depth.is_empty() || data.depth.len() == data.images.len()) {
        return Err(IoError::Data("dataset needs one pose (and optionally one depth map) per image".into()));
    }
    create_dir(&dir.join("rgb"))?;
    let k = &data.intrinsics;
    let intr = format!(
        "# fx fy cx cy width height\n{} {} {} {} {} {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    );
    write_bytes(&dir.join("intrinsics.txt"), intr.as_bytes())?;
    write_trajectory(&data.poses, &dir.join("poses.txt"))?;
    if let Some(gt) = &data.groundtruth {
        write_trajectory(gt, &dir.join("groundtruth.txt"))?;
    }
    for (i, img) in data.images.iter().enumerate() {
        write_image(img, &dir.join("rgb").join(frame_name(i, "ppm")))?;
    }
    if !data.depth.is_empty() {
        create_dir(&dir.join("depth"))?;
        for (i, d) in data.depth.iter().enumerate() {
            write_depth(d, &dir.join("depth").join(frame_name(i, "pfm")))?;
        }
    }
    if let Some(cloud) = &data.gt_cloud {
        write_ply(cloud, &dir.join("gt_cloud.ply"))?;
    }
    Ok(())
}

/// Renders `scene` and writes it to `out_dir`. The input poses are the
/// ground-truth poses.
pub fn generate_synthetic(scene: &SyntheticScene, out_dir: &Path) -> Result<Dataset, IoError> {
    let data = Dataset::from_synthetic(&scene.render_all()?)?;
    write_dataset(&data, out_dir)?;
    Ok(data)
}
