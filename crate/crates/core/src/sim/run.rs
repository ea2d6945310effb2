use crate::apf::{repulsion, shift_reference};
use crate::clustering::{build_unsafe_sets, cluster, ClusterParams};
use crate::geometry::UnsafeSet;
use crate::nmpc::{
    obstacle_penalty, prioritize, ControlInput, DeadlineMode, NmpcConfig, NmpcSolver, Prioritized,
    RobotState, Solution,
};
use crate::planner::{plan_reference, ReferencePath};
use crate::tracking::{DetectionFrame, Tracker};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::VecDeque;
use std::io::{self, Write};
use std::path::Path;

use super::scenario::{LoadedScenario, Mode, Scenario, ScenarioError};
use super::sensors::{sense_lidar, CameraSensor};
use super::world::{step_world, PedestrianRecord, World};
use super::{CONTROL_DIVIDER, WAYPOINT_RADIUS};

pub const SCHEMA: &str = "dtaa-runlog/1";

/// Reference points kept per control tick for horizon replays.
pub const REPLAY_WINDOW: usize = 201;

#[derive(Debug, Clone, Serialize)]
pub struct ClusterRecord {
    pub index: usize,
    pub members: Vec<u64>,
    pub center: [f64; 2],
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rotation: f64,
    pub velocity: [f64; 2],
    /// Closest predicted approach to the propagated center, and its step.
    pub delta_min: f64,
    pub delta_step: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ControlRecord {
    pub waypoint: usize,
    pub clusters: Vec<ClusterRecord>,
    pub tracked: Option<usize>,
    pub active: Vec<usize>,
    pub apf_force: [f64; 2],
    /// Wall-clock solve time; absent in iteration-budget mode so that logs
    /// stay reproducible.
    pub solve_time_ms: Option<f64>,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    pub timeout: bool,
    pub failed: bool,
    /// Residual against the buffered sets the solver saw.
    pub max_obstacle_violation: f64,
    pub max_tracking_violation: f64,
    /// Residual of the predicted states against the sets inflated by the
    /// safety margin alone.
    pub margin_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub robot: RobotState,
    pub input: ControlInput,
    pub pedestrians: Vec<PedestrianRecord>,
    /// True distance to the nearest pedestrian.
    pub delta: Option<f64>,
    pub violation: bool,
    pub detections: Option<usize>,
    pub tracks: Option<usize>,
    pub control: Option<ControlRecord>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub deadline_mode: DeadlineMode,
    pub ticks: u64,
    pub control_ticks: usize,
    pub min_delta: Option<f64>,
    pub violation_count: usize,
    pub timeout_count: usize,
    pub failed_count: usize,
    pub unconverged_count: usize,
    pub mean_solve_time_ms: Option<f64>,
    pub mean_iterations: f64,
    /// Largest obstacle residual over solutions that were applied.
    pub max_accepted_obstacle_violation: f64,
    /// Same, against the sets inflated by the safety margin alone.
    pub max_accepted_margin_violation: f64,
    pub waypoints_reached: usize,
    pub goal_reached: bool,
    pub effective_config: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Tick(TickRecord),
    Summary(Summary),
}

/// Inputs of one control tick, enough to re-solve it offline.
#[derive(Debug, Clone)]
pub struct ReplayTick {
    pub state: RobotState,
    pub window: Vec<[f64; 2]>,
    pub sets: Vec<UnsafeSet>,
    pub fallback_heading: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub ticks: Vec<TickRecord>,
    pub summary: Summary,
    /// Wall-clock solve times of every control tick, ms.
    pub solve_times_ms: Vec<f64>,
    pub replay: Vec<ReplayTick>,
}

impl RunOutput {
    pub fn write_ndjson(&self, mut out: impl Write) -> io::Result<()> {
        for t in &self.ticks {
            serde_json::to_writer(&mut out, &Record::Tick(t.clone()))?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &Record::Summary(self.summary.clone()))?;
        out.write_all(b"\n")
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        buf
    }
}

/// NMPC reference states from path points: one point per step, velocity by
/// forward difference, heading along the segment. Past the end the last
/// point is held with zero velocity.
pub fn reference_states(
    points: &[[f64; 2]],
    count: usize,
    tau: f64,
    fallback_heading: f64,
) -> Vec<RobotState> {
    let mut out = Vec::with_capacity(count);
    let mut heading = fallback_heading;
    if points.is_empty() {
        return out;
    }
    let last = points.len() - 1;
    for k in 0..count {
        let p = points[k.min(last)];
        let (vx, vy) = if k < last {
            let q = points[k + 1];
            let (dx, dy) = (q[0] - p[0], q[1] - p[1]);
            if dx != 0.0 || dy != 0.0 {
                heading = dy.atan2(dx);
            }
            (dx / tau, dy / tau)
        } else {
            (0.0, 0.0)
        };
        out.push(RobotState {
            x: p[0],
            y: p[1],
            vx,
            vy,
            theta: heading,
        });
    }
    out
}

fn shifted<T: Copy>(v: &[T]) -> Vec<T> {
    let mut s: Vec<T> = v.iter().skip(1).copied().collect();
    if let Some(&l) = v.last() {
        s.push(l);
    }
    s
}

/// Predicted robot positions for prioritization: the previous plan moved
/// one step on, or the reference when there is none.
fn predicted_positions(previous: Option<&Solution>, refs: &[RobotState]) -> Vec<[f64; 2]> {
    match previous {
        Some(s) if s.states.len() == refs.len() => {
            shifted(&s.states).iter().map(|x| x.position()).collect()
        }
        _ => refs.iter().map(|x| x.position()).collect(),
    }
}

struct Controller {
    mode: Mode,
    margin: f64,
    solver: NmpcSolver,
    waypoints: Vec<[f64; 2]>,
    waypoint: usize,
    path: ReferencePath,
    path_index: usize,
    previous: Option<Solution>,
    applied: ControlInput,
}

impl Controller {
    fn replan(&mut self, from: [f64; 2], loaded: &LoadedScenario) {
        let s = &loaded.scenario;
        self.path_index = 0;
        self.path = match self.waypoints.get(self.waypoint) {
            Some(&goal) => {
                plan_reference(&loaded.map, from, goal, &s.planner).unwrap_or_else(|e| {
                    log::warn!(
                        "replanning to waypoint {} failed: {e}; holding",
                        self.waypoint
                    );
                    ReferencePath {
                        points: vec![from],
                        step_length: s.planner.step_length,
                    }
                })
            }
            None => ReferencePath {
                points: vec![*self.waypoints.last().unwrap_or(&from)],
                step_length: s.planner.step_length,
            },
        };
    }
}

pub fn run(loaded: &LoadedScenario) -> RunOutput {
    run_scenario(loaded, false)
}

/// Full closed loop. With `record_replay`, per-tick solver inputs are kept
/// for offline horizon sweeps.
pub fn run_scenario(loaded: &LoadedScenario, record_replay: bool) -> RunOutput {
    let s: &Scenario = &loaded.scenario;
    let mut world = World::new(s, loaded.map.clone());
    let ids = s.pedestrian_ids();
    let mut camera = CameraSensor::new(s.camera, &ids).expect("camera validated at load");
    let mut tracker = Tracker::new(s.tracker, camera.model.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut pending: VecDeque<(f64, DetectionFrame)> = VecDeque::new();
    let dt = s.sim_step();
    let substeps = s.substeps as u64;
    let n = s.nmpc.horizon;
    let tau = s.nmpc.step;
    let cluster_params = ClusterParams {
        margin: s.safety_margin,
        horizon: n,
        step: tau,
    };

    let mut ctl = Controller {
        mode: s.mode,
        margin: s.safety_margin,
        solver: NmpcSolver::new(s.nmpc.clone()),
        waypoints: s.robot.waypoints.clone(),
        waypoint: 0,
        path: ReferencePath {
            points: vec![],
            step_length: s.planner.step_length,
        },
        path_index: 0,
        previous: None,
        applied: ControlInput::default(),
    };
    ctl.replan(world.robot.position(), loaded);

    let mut ticks = Vec::with_capacity(s.ticks() as usize);
    let mut solve_times = Vec::new();
    let mut replay = Vec::new();
    let mut stats = Stats::default();

    for _ in 0..s.ticks() {
        let t = world.time();
        let mut detections = None;
        let mut tracks = None;
        if world.tick % substeps == 0 {
            let frame = camera.sense(&world, &mut rng);
            detections = Some(frame.boxes.len());
            pending.push_back((t + s.camera.latency, frame));
            while pending.front().is_some_and(|(due, _)| *due <= t + 1e-9) {
                let (_, f) = pending.pop_front().expect("front checked");
                tracker.process_frame(&f);
            }
            tracks = Some(tracker.snapshot().len());
        }

        let mut control = None;
        if world.tick % (substeps * CONTROL_DIVIDER) == 0 {
            let pos = world.robot.position();
            if ctl.waypoint < ctl.waypoints.len() {
                let wp = ctl.waypoints[ctl.waypoint];
                if (wp[0] - pos[0]).hypot(wp[1] - pos[1]) < WAYPOINT_RADIUS {
                    ctl.waypoint += 1;
                    ctl.replan(pos, loaded);
                }
            }
            let window_len = if record_replay {
                REPLAY_WINDOW.max(n + 1)
            } else {
                n + 1
            };
            ctl.path_index = ctl.path.nearest_index(pos, ctl.path_index, 40);
            let end = (ctl.path_index + window_len).min(ctl.path.len());
            let window = ReferencePath {
                points: ctl.path.points[ctl.path_index..end].to_vec(),
                step_length: ctl.path.step_length,
            };

            let mut apf_force = [0.0; 2];
            let psi = if ctl.mode == Mode::NoAvoidance {
                window
            } else {
                let cloud = sense_lidar(&world, &s.lidar);
                apf_force = repulsion(&cloud, &world.robot, ctl.margin, &s.apf);
                shift_reference(&window, &cloud, &world.robot, ctl.margin, &s.apf)
            };

            let (sets, margin_sets) = if ctl.mode == Mode::Dtaa {
                let obstacles = tracker.snapshot();
                let clusters = cluster(&obstacles, &cluster_params);
                let build = |margin| {
                    build_unsafe_sets(&clusters, &obstacles, margin).unwrap_or_else(|e| {
                        log::warn!("unsafe set construction failed: {e}");
                        Vec::new()
                    })
                };
                (build(ctl.margin + s.avoidance_buffer), build(ctl.margin))
            } else {
                (Vec::new(), Vec::new())
            };

            let fallback_heading = world.robot.theta;
            let refs = reference_states(&psi.points, n + 1, tau, fallback_heading);
            let (sol, prio) = solve_tick(
                &ctl.solver,
                &world.robot,
                &refs,
                &sets,
                ctl.previous.as_ref(),
                ctl.applied,
            );
            if record_replay {
                replay.push(ReplayTick {
                    state: world.robot,
                    window: psi.points.clone(),
                    sets: sets.clone(),
                    fallback_heading,
                });
            }
            let margin_violation = margin_residual(&sol.states, &margin_sets, tau);
            ctl.applied = sol.applied;
            solve_times.push(sol.solve_time_ms);
            stats.add(&sol, margin_violation);
            control = Some(ControlRecord {
                waypoint: ctl.waypoint,
                clusters: sets
                    .iter()
                    .map(|set| {
                        let d = prio.distances.iter().find(|d| d.0 == set.index);
                        ClusterRecord {
                            index: set.index,
                            members: set.member_ids.clone(),
                            center: set.ellipse.center,
                            semi_major: set.ellipse.semi_major,
                            semi_minor: set.ellipse.semi_minor,
                            rotation: set.ellipse.rotation,
                            velocity: set.velocity,
                            delta_min: d.map_or(f64::INFINITY, |d| d.1),
                            delta_step: d.map_or(0, |d| d.2),
                        }
                    })
                    .collect(),
                tracked: prio.tracked.as_ref().map(|t| t.index),
                active: prio.active.iter().map(|a| a.index).collect(),
                apf_force,
                solve_time_ms: (s.nmpc.deadline_mode == DeadlineMode::Wallclock)
                    .then_some(sol.solve_time_ms),
                iterations: sol.inner_iterations,
                outer_iterations: sol.outer_iterations,
                converged: sol.converged,
                timeout: sol.timeout,
                failed: sol.failed,
                max_obstacle_violation: sol.max_obstacle_violation,
                max_tracking_violation: sol.max_tracking_violation,
                margin_violation,
            });
            ctl.previous = Some(sol);
        }

        let delta = world.nearest_pedestrian();
        let violation = delta.is_some_and(|d| d <= s.safety_margin);
        stats.observe(delta, violation);
        ticks.push(TickRecord {
            tick: world.tick,
            time: t,
            robot: world.robot,
            input: ctl.applied,
            pedestrians: world
                .pedestrians
                .iter()
                .map(PedestrianRecord::from)
                .collect(),
            delta,
            violation,
            detections,
            tracks,
            control,
        });
        step_world(&mut world, ctl.applied, dt);
    }

    let waypoints_reached = ctl.waypoint;
    let summary = Summary {
        schema: SCHEMA,
        scenario: s.name.clone(),
        seed: s.seed,
        mode: s.mode,
        deadline_mode: s.nmpc.deadline_mode,
        ticks: s.ticks(),
        control_ticks: stats.control_ticks,
        min_delta: stats.min_delta,
        violation_count: stats.violations,
        timeout_count: stats.timeouts,
        failed_count: stats.failed,
        unconverged_count: stats.unconverged,
        mean_solve_time_ms: (s.nmpc.deadline_mode == DeadlineMode::Wallclock)
            .then(|| mean(&solve_times)),
        mean_iterations: stats.iterations as f64 / stats.control_ticks.max(1) as f64,
        max_accepted_obstacle_violation: stats.max_accepted_violation,
        max_accepted_margin_violation: stats.max_accepted_margin_violation,
        waypoints_reached,
        goal_reached: waypoints_reached == s.robot.waypoints.len(),
        effective_config: serde_json::to_value(s).expect("scenario serializes"),
    };
    RunOutput {
        ticks,
        summary,
        solve_times_ms: solve_times,
        replay,
    }
}

fn solve_tick(
    solver: &NmpcSolver,
    state: &RobotState,
    refs: &[RobotState],
    sets: &[UnsafeSet],
    previous: Option<&Solution>,
    u_prev: ControlInput,
) -> (Solution, Prioritized) {
    let cfg = solver.config();
    let prio = if sets.is_empty() {
        Prioritized::default()
    } else {
        let predicted = predicted_positions(previous, refs);
        prioritize(
            sets,
            &predicted,
            cfg.step,
            cfg.max_obstacles,
            cfg.ignore_distance,
        )
    };
    let warm = previous
        .filter(|p| p.inputs.len() == cfg.horizon && !p.failed)
        .map(|p| shifted(&p.inputs));
    let sol = solver.solve(state, refs, &prio, u_prev, warm.as_deref());
    (sol, prio)
}

/// Worst obstacle penalty of predicted states `1..` against `sets`.
fn margin_residual(states: &[RobotState], sets: &[UnsafeSet], tau: f64) -> f64 {
    states
        .iter()
        .enumerate()
        .skip(1)
        .flat_map(|(n, x)| {
            sets.iter()
                .map(move |set| obstacle_penalty(x.position(), set, n, tau))
        })
        .fold(0.0, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Default)]
struct Stats {
    control_ticks: usize,
    timeouts: usize,
    failed: usize,
    unconverged: usize,
    iterations: usize,
    max_accepted_violation: f64,
    max_accepted_margin_violation: f64,
    min_delta: Option<f64>,
    violations: usize,
}

impl Stats {
    fn add(&mut self, sol: &Solution, margin_violation: f64) {
        self.control_ticks += 1;
        self.timeouts += sol.timeout as usize;
        self.failed += sol.failed as usize;
        self.unconverged += (!sol.converged) as usize;
        self.iterations += sol.inner_iterations;
        if !sol.timeout && !sol.failed {
            self.max_accepted_violation =
                self.max_accepted_violation.max(sol.max_obstacle_violation);
            self.max_accepted_margin_violation =
                self.max_accepted_margin_violation.max(margin_violation);
        }
    }

    fn observe(&mut self, delta: Option<f64>, violation: bool) {
        if let Some(d) = delta {
            self.min_delta = Some(self.min_delta.map_or(d, |m: f64| m.min(d)));
        }
        self.violations += violation as usize;
    }
}

/// One row of a parameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub ticks: usize,
    pub mean_solve_time_ms: f64,
    pub timeouts: usize,
    pub mean_iterations: f64,
}

/// Re-solves recorded control ticks open loop with horizon `horizon`,
/// warm-starting each tick from the replay's own previous solution.
pub fn replay_horizon(base: &NmpcConfig, replay: &[ReplayTick], horizon: usize) -> SweepRow {
    let cfg = NmpcConfig {
        horizon,
        ..base.clone()
    };
    let solver = NmpcSolver::new(cfg);
    let mut previous: Option<Solution> = None;
    let mut times = Vec::with_capacity(replay.len());
    let mut timeouts = 0;
    let mut iterations = 0;
    for r in replay {
        let refs = reference_states(&r.window, horizon + 1, base.step, r.fallback_heading);
        let u_prev = previous
            .as_ref()
            .map_or_else(ControlInput::default, |p| p.applied);
        let (sol, _) = solve_tick(&solver, &r.state, &refs, &r.sets, previous.as_ref(), u_prev);
        times.push(sol.solve_time_ms);
        timeouts += sol.timeout as usize;
        iterations += sol.inner_iterations;
        previous = Some(sol);
    }
    SweepRow {
        value: horizon as f64,
        ticks: replay.len(),
        mean_solve_time_ms: mean(&times),
        timeouts,
        mean_iterations: iterations as f64 / replay.len().max(1) as f64,
    }
}

/// Parameter names that select the offline horizon replay.
pub fn is_horizon(param: &str) -> bool {
    matches!(param, "N" | "horizon" | "nmpc.horizon")
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        v.to_string()
    }
}

/// Sweeps `param` over `values`. The horizon is swept by replaying one
/// recorded closed-loop run; any other scenario field is swept by full
/// closed-loop runs with that field overridden.
pub fn sweep(
    path: &Path,
    overrides: &[String],
    param: &str,
    values: &[f64],
) -> Result<Vec<SweepRow>, ScenarioError> {
    if is_horizon(param) {
        let base = LoadedScenario::from_path(path, overrides)?;
        let recorded = run_scenario(&base, true);
        return Ok(values
            .iter()
            .map(|&v| replay_horizon(&base.scenario.nmpc, &recorded.replay, v as usize))
            .collect());
    }
    values
        .iter()
        .map(|&v| {
            let mut o = overrides.to_vec();
            o.push(format!("{param}={}", format_value(v)));
            let loaded = LoadedScenario::from_path(path, &o)?;
            let out = run(&loaded);
            let s = &out.summary;
            Ok(SweepRow {
                value: v,
                ticks: s.control_ticks,
                mean_solve_time_ms: mean(&out.solve_times_ms),
                timeouts: s.timeout_count,
                mean_iterations: s.mean_iterations,
            })
        })
        .collect()
}
