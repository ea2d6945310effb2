//! Detections to tracked obstacles.
//!
//! Bounding boxes with depth are back-projected through the camera, moved
//! into the global frame with the robot pose, associated with existing
//! tracks and filtered per axis with a constant-velocity Kalman filter.

mod association;
mod camera;
mod kalman;

pub use association::{associate_by_id, greedy_match, Assignment, IdentifiedDetection};
pub use camera::{
    image_to_body, image_to_global, pixel_to_metric, CameraConfig, CameraModel, MetricDetection,
};
pub use kalman::{FilterConfig, KalmanAxisFilter};

use crate::nmpc::RobotState;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackingError {
    #[error("camera configuration: {0}")]
    Camera(String),
}

/// Detector output in pixels plus the depth read at the box center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub depth: f64,
    pub detector_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub tick: u64,
    pub boxes: Vec<BoundingBox>,
    /// Robot pose at capture time.
    pub pose: RobotState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssociationMode {
    #[default]
    Greedy,
    ById,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub association: AssociationMode,
    /// Maximum match distance for greedy association, meters.
    pub gate: f64,
    /// Frames an unmatched track is kept before removal.
    pub keep_ticks: u32,
    /// Detection period, seconds.
    pub frame_period: f64,
    pub filter: FilterConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            association: AssociationMode::Greedy,
            gate: 1.0,
            keep_ticks: 30,
            frame_period: 1.0 / 30.0,
            filter: FilterConfig::default(),
        }
    }
}

/// A tracked obstacle: filtered planar position and velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub id: u64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub width: f64,
    pub height: f64,
    /// Per-axis (position, velocity) covariance for x and y.
    pub covariance: [[[f64; 2]; 2]; 2],
    pub last_seen: u64,
}

/// Constant-velocity extrapolation `b + v·τ·n`.
pub fn predict_obstacle(o: &Obstacle, n: usize, tau: f64) -> [f64; 2] {
    let t = tau * n as f64;
    [
        o.position[0] + o.velocity[0] * t,
        o.position[1] + o.velocity[1] * t,
    ]
}

#[derive(Debug, Clone)]
struct Track {
    id: u64,
    axes: [KalmanAxisFilter; 3],
    width: f64,
    height: f64,
    last_seen: u64,
    misses: u32,
}

impl Track {
    fn position(&self) -> [f64; 2] {
        [self.axes[0].position, self.axes[1].position]
    }

    fn to_obstacle(&self) -> Obstacle {
        Obstacle {
            id: self.id,
            position: self.position(),
            velocity: [self.axes[0].velocity, self.axes[1].velocity],
            width: self.width,
            height: self.height,
            covariance: [self.axes[0].covariance, self.axes[1].covariance],
            last_seen: self.last_seen,
        }
    }
}

/// A measurement in the global frame derived from one bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalMeasurement {
    pub position: [f64; 3],
    pub width: f64,
    pub height: f64,
    pub detector_id: Option<u64>,
    pub box_area: f64,
}

/// Single-writer multi-object tracker. Frames must arrive in order.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    camera: CameraModel,
    tracks: Vec<Track>,
    next_id: u64,
    last_tick: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig, camera: CameraModel) -> Self {
        Tracker {
            cfg,
            camera,
            tracks: Vec::new(),
            next_id: 1,
            last_tick: None,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn measure(&self, frame: &DetectionFrame) -> Vec<GlobalMeasurement> {
        frame
            .boxes
            .iter()
            .filter(|b| b.depth > 0.0 && b.depth.is_finite())
            .map(|b| {
                let m = pixel_to_metric(b, &self.camera);
                let body = image_to_body(&m.point, &self.camera);
                let g = image_to_global(&m.point, &frame.pose, &self.camera);
                GlobalMeasurement {
                    position: [g[0], g[1], body.z],
                    width: m.width,
                    height: m.height,
                    detector_id: b.detector_id,
                    box_area: b.width * b.height,
                }
            })
            .collect()
    }

    /// Advances every track by one detection period and folds in `frame`.
    pub fn process_frame(&mut self, frame: &DetectionFrame) {
        if let Some(last) = self.last_tick {
            debug_assert!(frame.tick >= last, "frames must be processed in order");
        }
        self.last_tick = Some(frame.tick);

        for t in &mut self.tracks {
            for axis in &mut t.axes {
                axis.predict();
            }
        }
        let meas = self.measure(frame);
        let assignment = match self.cfg.association {
            AssociationMode::Greedy => {
                let predicted: Vec<(u64, [f64; 2])> =
                    self.tracks.iter().map(|t| (t.id, t.position())).collect();
                let planar: Vec<[f64; 2]> = meas
                    .iter()
                    .map(|m| [m.position[0], m.position[1]])
                    .collect();
                greedy_match(&planar, &predicted, self.cfg.gate)
            }
            AssociationMode::ById => {
                let dets: Vec<IdentifiedDetection> = meas
                    .iter()
                    .map(|m| IdentifiedDetection {
                        detector_id: m.detector_id,
                        box_area: m.box_area,
                    })
                    .collect();
                let ids: Vec<u64> = self.tracks.iter().map(|t| t.id).collect();
                associate_by_id(&dets, &ids)
            }
        };

        for &(ti, mi) in &assignment.pairs {
            let t = &mut self.tracks[ti];
            let m = &meas[mi];
            for (axis, z) in t.axes.iter_mut().zip(m.position) {
                if z.is_finite() {
                    axis.update(z);
                }
            }
            t.width = m.width;
            t.height = m.height;
            t.last_seen = frame.tick;
            t.misses = 0;
        }
        for &ti in &assignment.unmatched_tracks {
            self.tracks[ti].misses += 1;
        }
        let keep = self.cfg.keep_ticks;
        self.tracks.retain(|t| t.misses <= keep);

        for &mi in &assignment.births {
            let m = &meas[mi];
            let id = match (self.cfg.association, m.detector_id) {
                (AssociationMode::ById, Some(id)) => id,
                _ => {
                    let id = self.next_id;
                    self.next_id += 1;
                    id
                }
            };
            let dt = self.cfg.frame_period;
            let f = &self.cfg.filter;
            self.tracks.push(Track {
                id,
                axes: [
                    KalmanAxisFilter::new(m.position[0], dt, f),
                    KalmanAxisFilter::new(m.position[1], dt, f),
                    KalmanAxisFilter::new(m.position[2], dt, f),
                ],
                width: m.width,
                height: m.height,
                last_seen: frame.tick,
                misses: 0,
            });
        }
    }

    /// Immutable copy of the current obstacle set.
    pub fn snapshot(&self) -> Vec<Obstacle> {
        let mut out: Vec<Obstacle> = self.tracks.iter().map(Track::to_obstacle).collect();
        out.sort_by_key(|o| o.id);
        out
    }

    /// Estimated height of the object center above the body origin.
    pub fn height_estimate(&self, id: u64) -> Option<f64> {
        self.tracks
            .iter()
            .find(|t| t.id == id)
            .map(|t| t.axes[2].position)
    }
}
