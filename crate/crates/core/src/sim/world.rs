use crate::nmpc::{dynamics, ControlInput, RobotState};
use crate::planner::{Cell, GridMap};
use serde::Serialize;

use super::scenario::Scenario;

#[derive(Debug, Clone, PartialEq)]
pub struct Pedestrian {
    pub id: u64,
    pub position: [f64; 2],
    /// Velocity over the last step.
    pub velocity: [f64; 2],
    waypoints: Vec<[f64; 2]>,
    next: usize,
    speed: f64,
    start_time: f64,
}

impl Pedestrian {
    pub fn new(
        id: u64,
        start: [f64; 2],
        waypoints: Vec<[f64; 2]>,
        speed: f64,
        start_time: f64,
    ) -> Self {
        Pedestrian {
            id,
            position: start,
            velocity: [0.0; 2],
            waypoints,
            next: 0,
            speed,
            start_time,
        }
    }

    fn advance(&mut self, time: f64, dt: f64) {
        let before = self.position;
        if time + 1e-9 >= self.start_time {
            let mut budget = self.speed * dt;
            while budget > 0.0 && self.next < self.waypoints.len() {
                let to = self.waypoints[self.next];
                let d = (to[0] - self.position[0]).hypot(to[1] - self.position[1]);
                if d <= budget {
                    self.position = to;
                    budget -= d;
                    self.next += 1;
                } else {
                    let k = budget / d;
                    self.position[0] += k * (to[0] - self.position[0]);
                    self.position[1] += k * (to[1] - self.position[1]);
                    budget = 0.0;
                }
            }
        }
        self.velocity = [
            (self.position[0] - before[0]) / dt,
            (self.position[1] - before[1]) / dt,
        ];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub tick: u64,
    pub step: f64,
    pub robot: RobotState,
    pub velocity_lag: f64,
    pub pedestrians: Vec<Pedestrian>,
    pub map: GridMap,
}

impl World {
    pub fn new(scenario: &Scenario, map: GridMap) -> World {
        let ids = scenario.pedestrian_ids();
        World {
            tick: 0,
            step: scenario.sim_step(),
            robot: RobotState {
                x: scenario.robot.start[0],
                y: scenario.robot.start[1],
                theta: scenario.robot.heading,
                ..RobotState::default()
            },
            velocity_lag: scenario.nmpc.velocity_lag,
            pedestrians: scenario
                .pedestrians
                .iter()
                .zip(ids)
                .map(|(p, id)| {
                    Pedestrian::new(id, p.start, p.waypoints.clone(), p.speed, p.start_time)
                })
                .collect(),
            map,
        }
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.step
    }

    /// True distance from the robot to the nearest pedestrian center.
    pub fn nearest_pedestrian(&self) -> Option<f64> {
        self.pedestrians
            .iter()
            .map(|p| (p.position[0] - self.robot.x).hypot(p.position[1] - self.robot.y))
            .min_by(f64::total_cmp)
    }
}

/// Advances the robot under `u` and every pedestrian along its script by
/// one step of `dt`.
pub fn step_world(world: &mut World, u: ControlInput, dt: f64) {
    let t = world.time();
    world.robot = dynamics(&world.robot, &u, dt, world.velocity_lag);
    for p in &mut world.pedestrians {
        p.advance(t, dt);
    }
    world.tick += 1;
}

/// Distance from `origin` along unit `dir` to the first occupied cell,
/// if one is met within `max_range`. Cells outside the map are free.
pub fn cast_ray(map: &GridMap, origin: [f64; 2], dir: [f64; 2], max_range: f64) -> Option<f64> {
    let res = map.resolution();
    let o = map.origin();
    // Continuous cell coordinates: cell c spans [c, c + 1).
    let gx = (origin[0] - o[0]) / res + 0.5;
    let gy = (origin[1] - o[1]) / res + 0.5;
    let mut cx = gx.floor() as i64;
    let mut cy = gy.floor() as i64;
    let axis = |g: f64, c: i64, d: f64| -> (i64, f64, f64) {
        if d > 0.0 {
            (1, ((c + 1) as f64 - g) * res / d, res / d)
        } else if d < 0.0 {
            (-1, (g - c as f64) * res / -d, res / -d)
        } else {
            (0, f64::INFINITY, f64::INFINITY)
        }
    };
    let (sx, mut tx, dx) = axis(gx, cx, dir[0]);
    let (sy, mut ty, dy) = axis(gy, cy, dir[1]);
    let (w, h) = (map.width() as i64, map.height() as i64);
    let mut t = 0.0;
    loop {
        if cx >= 0
            && cy >= 0
            && cx < w
            && cy < h
            && map.get(cx as usize, cy as usize) == Cell::Occupied
        {
            return Some(t);
        }
        if tx < ty {
            t = tx;
            tx += dx;
            cx += sx;
        } else {
            t = ty;
            ty += dy;
            cy += sy;
        }
        if t > max_range {
            return None;
        }
    }
}

/// First positive intersection of a ray with a disc.
pub fn cast_disc(origin: [f64; 2], dir: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let m = [origin[0] - center[0], origin[1] - center[1]];
    let b = m[0] * dir[0] + m[1] * dir[1];
    let c = m[0] * m[0] + m[1] * m[1] - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - c;
    if disc < 0.0 || b > 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct PedestrianRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl From<&Pedestrian> for PedestrianRecord {
    fn from(p: &Pedestrian) -> Self {
        PedestrianRecord {
            id: p.id,
            x: p.position[0],
            y: p.position[1],
            vx: p.velocity[0],
            vy: p.velocity[1],
        }
    }
}
