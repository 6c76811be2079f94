//! Disc splatting of the surfel model into a virtual camera.

use nalgebra::Vector3;

use crate::geometry::{CameraIntrinsics, RigidPose};
use crate::image::RgbImage;
use crate::maps::{DepthMap, NormalMap};

use super::SurfelMap;

/// Model rasters seen from one pose. Normals are in the camera frame.
#[derive(Debug, Clone)]
pub struct ModelView {
    pub depth: DepthMap,
    pub color: RgbImage,
    pub normals: NormalMap,
    pub index: Vec<Option<usize>>,
}

impl ModelView {
    pub fn surfel_at(&self, x: usize, y: usize) -> Option<usize> {
        self.index[y * self.depth.width + x]
    }
}

// Pixels whose tangent-plane depth strays further than this (relative)
// from the surfel center are left uncovered by that surfel.
const MAX_EXTRAPOLATION: f64 = 0.25;

/// Splats every surfel as a disc of pixel radius `max(1, fx·radius/z)`.
/// Each covered pixel takes the depth where its ray meets the surfel's
/// tangent plane. The nearest surface wins; among surfels within the map's
/// depth tolerance of the nearest, the one whose center projects closest to
/// the pixel is drawn.
pub fn render_model_view(map: &SurfelMap, pose: &RigidPose, k: &CameraIntrinsics) -> ModelView {
    let (w, h) = (k.width, k.height);
    let world_to_cam = pose.inverse();
    let band = 1.0 + map.config().depth_tolerance;
    let mut nearest = vec![f64::INFINITY; w * h];
    splat(map, &world_to_cam, k, |j, z, _, _| {
        nearest[j] = nearest[j].min(z);
    });
    let mut best: Vec<Option<(f64, f64, usize)>> = vec![None; w * h];
    splat(map, &world_to_cam, k, |j, z, d2, i| {
        if z > nearest[j] * band {
            return;
        }
        let better = match best[j] {
            None => true,
            Some((bd2, bz, _)) => d2 < bd2 || (d2 == bd2 && z < bz),
        };
        if better {
            best[j] = Some((d2, z, i));
        }
    });
    let zbuf: Vec<f64> = best.iter().map(|b| b.map_or(f64::INFINITY, |(_, z, _)| z)).collect();
    let index: Vec<Option<usize>> = best.iter().map(|b| b.map(|(_, _, i)| i)).collect();

    let mut depth = DepthMap::invalid(w, h);
    let mut color = RgbImage::new(w, h);
    let mut normals = NormalMap::invalid(w, h);
    for (j, idx) in index.iter().enumerate() {
        if let Some(i) = *idx {
            let s = &map.surfels()[i];
            depth.data[j] = zbuf[j] as f32;
            color.data[j] = s.color_u8();
            normals.data[j] = Some(world_to_cam.transform_vector(&s.normal));
        }
    }
    ModelView {
        depth,
        color,
        normals,
        index,
    }
}

/// Calls `visit(pixel, depth, squared pixel distance to the center, surfel)`
/// for every pixel covered by a disc.
fn splat(map: &SurfelMap, world_to_cam: &RigidPose, k: &CameraIntrinsics, mut visit: impl FnMut(usize, f64, f64, usize)) {
    let (w, h) = (k.width, k.height);
    for (i, s) in map.surfels().iter().enumerate() {
        let p = world_to_cam.transform_point(&s.position);
        let Some(uv) = k.project(&p) else {
            continue;
        };
        let n = world_to_cam.transform_vector(&s.normal);
        let r = (k.fx * s.radius / p.z).max(1.0);
        let x0 = (uv.x - r).ceil().max(0.0);
        let y0 = (uv.y - r).ceil().max(0.0);
        let x1 = (uv.x + r).floor().min((w - 1) as f64);
        let y1 = (uv.y + r).floor().min((h - 1) as f64);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let offset = n.dot(&p);
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                let (dx, dy) = (x as f64 - uv.x, y as f64 - uv.y);
                let d2 = dx * dx + dy * dy;
                if d2 > r * r {
                    continue;
                }
                let z = offset / n.dot(&k.ray(x as f64, y as f64));
                if (z - p.z).abs() <= MAX_EXTRAPOLATION * p.z {
                    visit(y * w + x, z, d2, i);
                }
            }
        }
    }
}

/// One entry per surfel at its rounded projection, nearest first.
pub(crate) fn point_index_map(map: &SurfelMap, pose: &RigidPose, k: &CameraIntrinsics) -> Vec<Option<(usize, f64)>> {
    let (w, h) = (k.width, k.height);
    let world_to_cam = pose.inverse();
    let mut out: Vec<Option<(usize, f64)>> = vec![None; w * h];
    for (i, s) in map.surfels().iter().enumerate() {
        let p: Vector3<f64> = world_to_cam.transform_point(&s.position);
        let Some(uv) = k.project(&p) else {
            continue;
        };
        let (x, y) = (uv.x.round(), uv.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let j = y as usize * w + x as usize;
        if out[j].is_none_or(|(_, z)| p.z < z) {
            out[j] = Some((i, p.z));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{FusionConfig, Surfel};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0, 128, 96).unwrap()
    }

    fn surfel(p: Vector3<f64>, color: f64) -> Surfel {
        Surfel {
            position: p,
            normal: -Vector3::z(),
            radius: 0.01,
            color: [color; 3],
            confidence: 1.0,
            last_seen: 0,
        }
    }

    #[test]
    fn single_surfel_projects_to_principal_point() {
        let mut map = SurfelMap::new(FusionConfig::default()).unwrap();
        map.push(surfel(Vector3::new(0.0, 0.0, 10.0), 50.0)).unwrap();
        let v = render_model_view(&map, &RigidPose::identity(), &k());
        assert_eq!(v.depth.get(64, 48), Some(10.0));
        assert_eq!(v.surfel_at(64, 48), Some(0));
        // radius 0.1 px is raised to one pixel
        assert_eq!(v.depth.valid_count(), 5);
    }

    #[test]
    fn empty_map_renders_nothing() {
        let map = SurfelMap::new(FusionConfig::default()).unwrap();
        let v = render_model_view(&map, &RigidPose::identity(), &k());
        assert_eq!(v.depth.valid_count(), 0);
        assert!(v.index.iter().all(Option::is_none));
    }

    #[test]
    fn nearer_surfel_wins() {
        let mut map = SurfelMap::new(FusionConfig::default()).unwrap();
        map.push(surfel(Vector3::new(0.0, 0.0, 10.0), 50.0)).unwrap();
        map.push(surfel(Vector3::new(0.0, 0.0, 5.0), 200.0)).unwrap();
        let v = render_model_view(&map, &RigidPose::identity(), &k());
        assert_eq!(v.depth.get(64, 48), Some(5.0));
        assert_eq!(v.color.get(64, 48), [200; 3]);
    }

    #[test]
    fn slanted_disc_follows_its_plane() {
        let mut map = SurfelMap::new(FusionConfig::default()).unwrap();
        let n = Vector3::new(0.5, 0.0, -1.0).normalize();
        map.push(Surfel {
            normal: n,
            radius: 0.5,
            ..surfel(Vector3::new(0.0, 0.0, 10.0), 0.0)
        })
        .unwrap();
        let k = k();
        let v = render_model_view(&map, &RigidPose::identity(), &k);
        let d = v.depth.get(66, 48).unwrap() as f64;
        let ray = k.ray(66.0, 48.0);
        let expected = n.dot(&Vector3::new(0.0, 0.0, 10.0)) / n.dot(&ray);
        assert!((d - expected).abs() < 1e-5);
    }
}
