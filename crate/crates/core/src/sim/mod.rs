//! Deterministic 2D world with scripted pedestrians, synthetic sensors and
//! the full sense-plan-act loop.

mod run;
mod scenario;
mod sensors;
mod world;

pub use run::{
    is_horizon, reference_states, replay_horizon, run, run_scenario, sweep, ClusterRecord,
    ControlRecord, Record, ReplayTick, RunOutput, Summary, SweepRow, TickRecord, REPLAY_WINDOW,
    SCHEMA,
};
pub use scenario::{
    apply_overrides, CameraSpec, Diagnostic, LidarSpec, LoadedScenario, MapSpec, Mode,
    PedestrianSpec, RobotSpec, Scenario, ScenarioError,
};
pub use sensors::{beam_azimuths, sense_lidar, CameraSensor};
pub use world::{cast_disc, cast_ray, step_world, Pedestrian, PedestrianRecord, World};

/// Camera frame rate, Hz.
pub const CAMERA_RATE: f64 = 30.0;
/// Camera frames per control tick (10 Hz control).
pub const CONTROL_DIVIDER: u64 = 3;
/// Pedestrian body model for projection, m.
pub const BODY_WIDTH: f64 = 0.5;
pub const BODY_HEIGHT: f64 = 1.7;
/// Pedestrian cross-section seen by the lidar, m.
pub const LIDAR_RADIUS: f64 = 0.25;
/// A waypoint counts as reached within this distance, m.
pub const WAYPOINT_RADIUS: f64 = 0.3;
