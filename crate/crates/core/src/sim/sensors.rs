use crate::apf::{Beam, PointCloud};
use crate::tracking::{BoundingBox, CameraModel, DetectionFrame};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::scenario::{CameraSpec, LidarSpec};
use super::world::{cast_disc, cast_ray, World};
use super::{BODY_HEIGHT, BODY_WIDTH, LIDAR_RADIUS};

/// Synthetic person detector: pinhole projection of a fixed-size body.
#[derive(Debug, Clone)]
pub struct CameraSensor {
    pub spec: CameraSpec,
    pub model: CameraModel,
    /// Detector id per pedestrian slot and whether it was seen last frame.
    ids: Vec<u64>,
    visible: Vec<bool>,
    next_id: u64,
}

impl CameraSensor {
    pub fn new(
        spec: CameraSpec,
        pedestrian_ids: &[u64],
    ) -> Result<Self, crate::tracking::TrackingError> {
        Ok(CameraSensor {
            model: CameraModel::new(&spec.intrinsics)?,
            spec,
            ids: pedestrian_ids.to_vec(),
            visible: vec![false; pedestrian_ids.len()],
            next_id: pedestrian_ids.iter().max().map_or(1, |m| m + 1),
        })
    }

    fn camera_position(&self, world: &World) -> [f64; 2] {
        let off = self.spec.intrinsics.mount_offset;
        let (s, c) = world.robot.theta.sin_cos();
        [
            world.robot.x + c * off[0] - s * off[1],
            world.robot.y + s * off[0] + c * off[1],
        ]
    }

    /// Body-frame center of pedestrian `i` at chest height.
    fn body_point(&self, world: &World, i: usize) -> Vector3<f64> {
        let p = world.pedestrians[i].position;
        let (dx, dy) = (p[0] - world.robot.x, p[1] - world.robot.y);
        let (s, c) = world.robot.theta.sin_cos();
        Vector3::new(c * dx + s * dy, -s * dx + c * dy, 0.5 * BODY_HEIGHT)
    }

    fn occluded(&self, world: &World, i: usize) -> bool {
        let from = self.camera_position(world);
        let to = world.pedestrians[i].position;
        let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
        let dist = dx.hypot(dy);
        if dist == 0.0 {
            return false;
        }
        let dir = [dx / dist, dy / dist];
        if cast_ray(&world.map, from, dir, dist).is_some_and(|t| t < dist) {
            return true;
        }
        self.spec.pedestrian_occlusion
            && world.pedestrians.iter().enumerate().any(|(j, q)| {
                j != i
                    && cast_disc(from, dir, q.position, 0.5 * BODY_WIDTH)
                        .is_some_and(|t| t < dist - 0.5 * BODY_WIDTH)
            })
    }

    /// Detections for the current world state. Noise is drawn in
    /// pedestrian order, three samples per visible pedestrian.
    pub fn sense(&mut self, world: &World, rng: &mut impl Rng) -> DetectionFrame {
        let k = self.model.intrinsics();
        let (fx, fy) = (k[(0, 0)], k[(1, 1)]);
        let mut boxes = Vec::new();
        for i in 0..world.pedestrians.len() {
            let body = self.body_point(world, i);
            let optical = self.model.camera_from_body(&body);
            let ground = body.x.hypot(body.y);
            let seen = self
                .model
                .project(&optical)
                .filter(|px| self.model.in_image(*px))
                .filter(|_| ground <= self.spec.range && !self.occluded(world, i));
            let Some(px) = seen else {
                self.visible[i] = false;
                continue;
            };
            if !self.visible[i] && self.spec.reassign_ids && world.tick > 0 {
                self.ids[i] = self.next_id;
                self.next_id += 1;
            }
            self.visible[i] = true;
            let nu: f64 = rng.sample(StandardNormal);
            let nv: f64 = rng.sample(StandardNormal);
            let nd: f64 = rng.sample(StandardNormal);
            boxes.push(BoundingBox {
                x: px[0] + self.spec.pixel_noise * nu,
                y: px[1] + self.spec.pixel_noise * nv,
                width: fx * BODY_WIDTH / optical.z,
                height: fy * BODY_HEIGHT / optical.z,
                depth: optical.z + self.spec.depth_noise * nd,
                detector_id: Some(self.ids[i]),
            });
        }
        DetectionFrame {
            tick: world.tick,
            boxes,
            pose: world.robot,
        }
    }
}

/// Beam azimuths across the scan arc; a full circle has no duplicate end.
pub fn beam_azimuths(spec: &LidarSpec) -> Vec<f64> {
    let n = spec.beams;
    let full = spec.arc >= std::f64::consts::TAU - 1e-9;
    if n == 1 {
        return vec![0.0];
    }
    let step = if full {
        spec.arc / n as f64
    } else {
        spec.arc / (n - 1) as f64
    };
    (0..n).map(|i| -0.5 * spec.arc + i as f64 * step).collect()
}

/// Planar scan against occupied cells and pedestrian discs. Beams without
/// a return inside the range are dropped.
pub fn sense_lidar(world: &World, spec: &LidarSpec) -> PointCloud {
    let origin = [world.robot.x, world.robot.y];
    let beams = beam_azimuths(spec)
        .into_iter()
        .filter_map(|azimuth| {
            let a = world.robot.theta + azimuth;
            let dir = [a.cos(), a.sin()];
            let wall = cast_ray(&world.map, origin, dir, spec.range);
            let person = world
                .pedestrians
                .iter()
                .filter_map(|p| cast_disc(origin, dir, p.position, LIDAR_RADIUS))
                .min_by(f64::total_cmp);
            let range = match (wall, person) {
                (Some(a), Some(b)) => a.min(b),
                (a, b) => a.or(b)?,
            };
            (range > 0.0 && range <= spec.range).then_some(Beam { range, azimuth })
        })
        .collect();
    PointCloud { beams }
}
