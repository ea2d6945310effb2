//! Repulsive shift of the reference path from close lidar returns.

use crate::nmpc::RobotState;
use crate::planner::ReferencePath;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub range: f64,
    /// Body-frame angle, counter-clockwise from the heading.
    pub azimuth: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub beams: Vec<Beam>,
}

impl PointCloud {
    /// Global endpoints of all beams for a robot at `robot`.
    pub fn points(&self, robot: &RobotState) -> Vec<[f64; 2]> {
        self.beams
            .iter()
            .map(|b| {
                let a = robot.theta + b.azimuth;
                [robot.x + b.range * a.cos(), robot.y + b.range * a.sin()]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApfConfig {
    /// Largest displacement, m.
    pub gain: f64,
    /// Number of leading reference points displaced.
    pub shift_points: usize,
}

impl Default for ApfConfig {
    fn default() -> Self {
        ApfConfig {
            gain: 0.5,
            shift_points: 10,
        }
    }
}

/// Summed repulsion from beams shorter than `margin`, capped at the gain.
pub fn repulsion(cloud: &PointCloud, robot: &RobotState, margin: f64, cfg: &ApfConfig) -> [f64; 2] {
    assert!(margin > 0.0, "safety margin must be positive");
    let mut f = [0.0; 2];
    for b in cloud.beams.iter().filter(|b| b.range < margin) {
        let a = robot.theta + b.azimuth;
        let mag = cfg.gain * (margin - b.range) / margin;
        // From the return back toward the robot.
        f[0] -= mag * a.cos();
        f[1] -= mag * a.sin();
    }
    let norm = f[0].hypot(f[1]);
    if norm > cfg.gain {
        f = [f[0] * cfg.gain / norm, f[1] * cfg.gain / norm];
    }
    f
}

/// Displaces the first `shift_points` points of `path` by the repulsion,
/// weighted `1 - i / shift_points`.
pub fn shift_reference(
    path: &ReferencePath,
    cloud: &PointCloud,
    robot: &RobotState,
    margin: f64,
    cfg: &ApfConfig,
) -> ReferencePath {
    let f = repulsion(cloud, robot, margin, cfg);
    let mut out = path.clone();
    if f == [0.0, 0.0] {
        return out;
    }
    for (i, p) in out.points.iter_mut().take(cfg.shift_points).enumerate() {
        let w = 1.0 - i as f64 / cfg.shift_points as f64;
        p[0] += w * f[0];
        p[1] += w * f[1];
    }
    out
}
