use super::{BoundingBox, TrackingError};
use crate::nmpc::RobotState;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Pinhole camera rigidly mounted on the robot body.
///
/// The optical frame has +z along the optical axis, +x right and +y down in
/// the image. The body frame has +x forward, +y left and +z up.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    intrinsics: Matrix3<f64>,
    intrinsics_inv: Matrix3<f64>,
    pub image_width: u32,
    pub image_height: u32,
    /// Rotation taking optical-frame vectors into the body frame.
    pub body_from_camera: Matrix3<f64>,
    /// Optical center in body coordinates, meters.
    pub camera_in_body: Vector3<f64>,
    /// Full horizontal field of view, radians.
    pub horizontal_fov: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub image_width: u32,
    pub image_height: u32,
    #[serde(default)]
    pub mount_offset: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        // 87° horizontal field of view on a 640×480 sensor.
        let fx = 320.0 / (87f64.to_radians() / 2.0).tan();
        CameraConfig {
            fx,
            fy: fx,
            cx: 320.0,
            cy: 240.0,
            image_width: 640,
            image_height: 480,
            mount_offset: [0.0; 3],
        }
    }
}

/// A back-projected detection in optical-frame meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricDetection {
    pub point: Vector3<f64>,
    pub width: f64,
    pub height: f64,
}

impl CameraModel {
    pub fn new(cfg: &CameraConfig) -> Result<Self, TrackingError> {
        if !(cfg.fx > 0.0 && cfg.fy > 0.0) {
            return Err(TrackingError::Camera(format!(
                "focal lengths must be positive (fx={}, fy={})",
                cfg.fx, cfg.fy
            )));
        }
        if cfg.image_width == 0 || cfg.image_height == 0 {
            return Err(TrackingError::Camera("image size must be non-zero".into()));
        }
        let k = Matrix3::new(cfg.fx, 0.0, cfg.cx, 0.0, cfg.fy, cfg.cy, 0.0, 0.0, 1.0);
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| TrackingError::Camera("intrinsic matrix is singular".into()))?;
        #[rustfmt::skip]
        let body_from_camera = Matrix3::new(
            0.0,  0.0, 1.0,
           -1.0,  0.0, 0.0,
            0.0, -1.0, 0.0,
        );
        let left = cfg.cx.max(0.0);
        let right = (cfg.image_width as f64 - cfg.cx).max(0.0);
        let horizontal_fov = (left / cfg.fx).atan() + (right / cfg.fx).atan();
        Ok(CameraModel {
            intrinsics: k,
            intrinsics_inv: k_inv,
            image_width: cfg.image_width,
            image_height: cfg.image_height,
            body_from_camera,
            camera_in_body: Vector3::from(cfg.mount_offset),
            horizontal_fov,
        })
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    /// Projects an optical-frame point to pixels; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        let h = self.intrinsics * p;
        Some([h.x / h.z, h.y / h.z])
    }

    pub fn in_image(&self, px: [f64; 2]) -> bool {
        px[0] >= 0.0
            && px[1] >= 0.0
            && px[0] < self.image_width as f64
            && px[1] < self.image_height as f64
    }

    /// Body-frame point to optical frame.
    pub fn camera_from_body(&self, p_body: &Vector3<f64>) -> Vector3<f64> {
        self.body_from_camera.transpose() * (p_body - self.camera_in_body)
    }
}

/// Back-projects a box center and its edges using its depth reading.
pub fn pixel_to_metric(bb: &BoundingBox, cam: &CameraModel) -> MetricDetection {
    let back = |u: f64, v: f64| cam.intrinsics_inv * Vector3::new(u, v, 1.0) * bb.depth;
    let point = back(bb.x, bb.y);
    let left = back(bb.x - 0.5 * bb.width, bb.y);
    let right = back(bb.x + 0.5 * bb.width, bb.y);
    let top = back(bb.x, bb.y - 0.5 * bb.height);
    let bottom = back(bb.x, bb.y + 0.5 * bb.height);
    MetricDetection {
        point,
        width: (right - left).norm(),
        height: (bottom - top).norm(),
    }
}

/// Optical-frame point to planar global coordinates through the body frame.
pub fn image_to_global(p: &Vector3<f64>, pose: &RobotState, cam: &CameraModel) -> [f64; 2] {
    let b = image_to_body(p, cam);
    let (s, c) = pose.theta.sin_cos();
    [pose.x + c * b.x - s * b.y, pose.y + s * b.x + c * b.y]
}

pub fn image_to_body(p: &Vector3<f64>, cam: &CameraModel) -> Vector3<f64> {
    cam.body_from_camera * p + cam.camera_in_body
}
