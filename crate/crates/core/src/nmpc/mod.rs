//! Receding-horizon controller: planar kinematics, ellipse avoidance and
//! field-of-view penalties, cluster prioritization and the penalty-method
//! solver.

mod solver;

pub use solver::{NmpcSolver, Solution};

use crate::geometry::{membership_margin, propagate, UnsafeSet};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Planar robot state in the global frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub(crate) fn to_array(self) -> [f64; 5] {
        [self.x, self.y, self.vx, self.vy, self.theta]
    }

    pub(crate) fn from_array(a: [f64; 5]) -> Self {
        RobotState {
            x: a[0],
            y: a[1],
            vx: a[2],
            vy: a[3],
            theta: a[4],
        }
    }
}

/// Body-frame velocity command and heading rate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub vx: f64,
    pub vy: f64,
    pub w: f64,
}

impl ControlInput {
    pub fn to_array(self) -> [f64; 3] {
        [self.vx, self.vy, self.w]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        ControlInput {
            vx: a[0],
            vy: a[1],
            w: a[2],
        }
    }

    pub fn clamp(self, lo: [f64; 3], hi: [f64; 3]) -> Self {
        let a = self.to_array();
        ControlInput::from_array([0, 1, 2].map(|i| a[i].clamp(lo[i], hi[i])))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub position: f64,
    pub velocity: f64,
    pub heading: f64,
    pub input: f64,
    pub input_rate: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            position: 10.0,
            velocity: 1.0,
            heading: 2.0,
            input: 1.0,
            input_rate: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineMode {
    /// Budget of inner solver iterations; reproducible.
    #[default]
    Iterations,
    /// Wall-clock limit.
    Wallclock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmpcConfig {
    pub horizon: usize,
    /// Seconds per prediction step.
    pub step: f64,
    /// Velocity response time constant, seconds.
    pub velocity_lag: f64,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    pub weights: CostWeights,
    /// Field-of-view margin `1 − cos(half_fov − guard)`.
    pub fov_margin: f64,
    pub deadline_mode: DeadlineMode,
    pub deadline_ms: f64,
    pub iteration_budget: usize,
    pub max_obstacles: usize,
    pub ignore_distance: f64,
    pub penalty_schedule: Vec<f64>,
    /// Outer iterations; the last multiplier repeats past the schedule.
    pub max_outer_iterations: usize,
    pub inner_tolerance: f64,
    pub constraint_tolerance: f64,
}

impl Default for NmpcConfig {
    fn default() -> Self {
        NmpcConfig {
            horizon: 40,
            step: 0.1,
            velocity_lag: 0.3,
            u_min: [-1.5, -0.5, -1.0],
            u_max: [1.5, 0.5, 1.0],
            weights: CostWeights::default(),
            fov_margin: 1.0 - 35f64.to_radians().cos(),
            deadline_mode: DeadlineMode::Iterations,
            deadline_ms: 100.0,
            iteration_budget: 500,
            max_obstacles: 2,
            ignore_distance: 8.0,
            penalty_schedule: vec![10.0, 100.0, 1000.0, 10000.0],
            max_outer_iterations: 10,
            inner_tolerance: 1e-4,
            constraint_tolerance: 1e-3,
        }
    }
}

impl NmpcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.horizon < 1 {
            return Err("horizon must be at least 1".into());
        }
        if !(self.step > 0.0) {
            return Err("step must be positive".into());
        }
        if !(self.velocity_lag >= self.step) {
            return Err("velocity_lag must be at least one step".into());
        }
        if !(self.deadline_ms > 0.0) || self.iteration_budget == 0 {
            return Err("deadline must be positive".into());
        }
        if !(self.fov_margin > 0.0 && self.fov_margin < 2.0) {
            return Err("fov_margin must lie in (0, 2)".into());
        }
        if self.max_obstacles < 1 {
            return Err("max_obstacles must be at least 1".into());
        }
        if self.penalty_schedule.is_empty() || self.penalty_schedule.iter().any(|m| !(*m > 0.0)) {
            return Err("penalty_schedule must hold positive multipliers".into());
        }
        for i in 0..3 {
            if !(self.u_min[i] <= self.u_max[i]) {
                return Err(format!("u_min[{i}] exceeds u_max[{i}]"));
            }
        }
        Ok(())
    }
}

pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// One Euler step: heading integrates `w`, velocity lags toward the rotated
/// command, position integrates the new velocity.
pub fn dynamics(x: &RobotState, u: &ControlInput, tau: f64, lag: f64) -> RobotState {
    let alpha = tau / lag;
    let (s, c) = x.theta.sin_cos();
    let gx = c * u.vx - s * u.vy;
    let gy = s * u.vx + c * u.vy;
    let vx = x.vx + alpha * (gx - x.vx);
    let vy = x.vy + alpha * (gy - x.vy);
    RobotState {
        x: x.x + tau * vx,
        y: x.y + tau * vy,
        vx,
        vy,
        theta: normalize_angle(x.theta + tau * u.w),
    }
}

/// `[m]₊` of the membership margin against the set propagated `n` steps.
pub fn obstacle_penalty(p: [f64; 2], set: &UnsafeSet, n: usize, tau: f64) -> f64 {
    membership_margin(&propagate(set, n, tau), p).0.max(0.0)
}

pub fn tracking_penalty(theta: f64, theta_ref: f64, fov_margin: f64) -> f64 {
    (-(theta_ref - theta).cos() + 1.0 - fov_margin).max(0.0)
}

/// Result of ranking unsafe sets by predicted closest approach.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Prioritized {
    /// Set kept in the camera view, if any is within range.
    pub tracked: Option<UnsafeSet>,
    /// Sets imposed as avoidance constraints, nearest first.
    pub active: Vec<UnsafeSet>,
    /// Every in-range set with its distance filled in, nearest first.
    pub ranked: Vec<UnsafeSet>,
    /// `(set index, distance, step)` for every input set.
    pub distances: Vec<(usize, f64, usize)>,
}

/// Ranks sets by the minimum distance between the predicted robot path and
/// the propagated set centers. Ties go to the earlier step, then to the
/// lower set index.
pub fn prioritize(
    sets: &[UnsafeSet],
    predicted: &[[f64; 2]],
    tau: f64,
    max_obstacles: usize,
    ignore_distance: f64,
) -> Prioritized {
    let mut distances = Vec::with_capacity(sets.len());
    let mut ranked: Vec<(f64, usize, UnsafeSet)> = Vec::new();
    for set in sets {
        let mut best = (f64::INFINITY, 0usize);
        for (n, p) in predicted.iter().enumerate() {
            let c = propagate(set, n, tau).center;
            let d = (p[0] - c[0]).hypot(p[1] - c[1]);
            if d < best.0 {
                best = (d, n);
            }
        }
        distances.push((set.index, best.0, best.1));
        if best.0 <= ignore_distance {
            let mut s = set.clone();
            s.priority_distance = Some(best.0);
            ranked.push((best.0, best.1, s));
        }
    }
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.index.cmp(&b.2.index))
    });
    let ranked: Vec<UnsafeSet> = ranked.into_iter().map(|r| r.2).collect();
    Prioritized {
        tracked: ranked.first().cloned(),
        active: ranked.iter().take(max_obstacles).cloned().collect(),
        ranked,
        distances,
    }
}
