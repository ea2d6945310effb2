use crate::apf::ApfConfig;
use crate::nmpc::NmpcConfig;
use crate::planner::{plan, GridMap, PlanError, PlannerConfig};
use crate::tracking::{CameraConfig, CameraModel, TrackerConfig};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::fmt;
use std::path::{Path, PathBuf};
use thiserror::Error;

use super::CAMERA_RATE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Clustered unsafe sets in the NMPC plus the lidar field.
    #[default]
    Dtaa,
    /// Lidar field only; the NMPC ignores obstacles.
    ApfOnly,
    NoAvoidance,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "dtaa" => Some(Mode::Dtaa),
            "apf_only" => Some(Mode::ApfOnly),
            "no_avoidance" => Some(Mode::NoAvoidance),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Dtaa => "dtaa",
            Mode::ApfOnly => "apf_only",
            Mode::NoAvoidance => "no_avoidance",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSpec {
    /// Map file, relative to the scenario file.
    pub file: Option<String>,
    /// Inline rows, top row first. Used when `file` is absent.
    pub rows: Option<Vec<String>>,
    pub resolution: Option<f64>,
    pub origin: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub start: [f64; 2],
    #[serde(default)]
    pub heading: f64,
    pub waypoints: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    /// Defaults to the 1-based position in the list.
    #[serde(default)]
    pub id: Option<u64>,
    pub start: [f64; 2],
    /// Visited in order at `speed`; the pedestrian holds at the last one.
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default = "default_walking_speed")]
    pub speed: f64,
    /// Seconds spent standing at `start` before walking.
    #[serde(default)]
    pub start_time: f64,
}

fn default_walking_speed() -> f64 {
    1.4
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub intrinsics: CameraConfig,
    /// Detection range along the ground, m.
    pub range: f64,
    /// Box-center noise, pixels.
    pub pixel_noise: f64,
    /// Depth noise, m.
    pub depth_noise: f64,
    /// Delay between capture and delivery to the tracker, s.
    pub latency: f64,
    /// Hand out a fresh detector id whenever a pedestrian re-enters view.
    pub reassign_ids: bool,
    /// Let pedestrians hide each other from the camera.
    pub pedestrian_occlusion: bool,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            intrinsics: CameraConfig {
                mount_offset: [0.0, 0.0, 0.6],
                ..CameraConfig::default()
            },
            range: 10.0,
            pixel_noise: 1.0,
            depth_noise: 0.02,
            latency: 0.03,
            reassign_ids: false,
            pedestrian_occlusion: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarSpec {
    /// Scan arc centered on the heading, rad.
    pub arc: f64,
    pub beams: usize,
    pub range: f64,
}

impl Default for LidarSpec {
    fn default() -> Self {
        LidarSpec {
            arc: TAU,
            beams: 360,
            range: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated time, s.
    pub duration: f64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_margin")]
    pub safety_margin: f64,
    /// Extra inflation of the unsafe sets handed to the NMPC, m. Absorbs
    /// tracking error and the gap between horizon samples.
    #[serde(default = "default_buffer")]
    pub avoidance_buffer: f64,
    /// Simulation substeps per camera frame.
    #[serde(default = "default_substeps")]
    pub substeps: u32,
    pub map: MapSpec,
    pub robot: RobotSpec,
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub lidar: LidarSpec,
    #[serde(default)]
    pub nmpc: NmpcConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub apf: ApfConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
}

fn default_margin() -> f64 {
    1.0
}

fn default_buffer() -> f64 {
    0.3
}

fn default_substeps() -> u32 {
    1
}

impl Scenario {
    pub fn sim_step(&self) -> f64 {
        1.0 / (CAMERA_RATE * self.substeps as f64)
    }

    /// Total simulation ticks.
    pub fn ticks(&self) -> u64 {
        (self.duration / self.sim_step()).round() as u64
    }

    pub fn pedestrian_ids(&self) -> Vec<u64> {
        self.pedestrians
            .iter()
            .enumerate()
            .map(|(i, p)| p.id.unwrap_or(i as u64 + 1))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        f.write_str(&self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {}", join(.diagnostics))]
    Invalid {
        path: String,
        diagnostics: Vec<Diagnostic>,
    },
}

fn join(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl ScenarioError {
    pub fn diagnostics(&self) -> &[Diagnostic] {
        match self {
            ScenarioError::Io { .. } => &[],
            ScenarioError::Invalid { diagnostics, .. } => diagnostics,
        }
    }
}

/// A validated scenario with its map.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub map: GridMap,
    pub source: Option<PathBuf>,
}

/// Applies `key=value` overrides, with dotted keys and numeric indices
/// into arrays (`pedestrians.0.speed=1.0`). Values are TOML literals; bare
/// words are taken as strings.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), Diagnostic> {
    for o in overrides {
        let bad = |message: String| Diagnostic {
            line: None,
            field: Some(o.clone()),
            message,
        };
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| bad("override must look like key=value".into()))?;
        let key = key.trim();
        let value = parse_value(raw.trim());
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(bad("empty key segment".into()));
        }
        set_path(table, &parts, value).map_err(bad)?;
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, parts: &[&str], value: toml::Value) -> Result<(), String> {
    let (head, rest) = parts.split_first().expect("non-empty path");
    if rest.is_empty() {
        table.insert(head.to_string(), value);
        return Ok(());
    }
    let child = table
        .entry(head.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    set_value(child, rest, value, head)
}

fn set_value(
    node: &mut toml::Value,
    parts: &[&str],
    value: toml::Value,
    at: &str,
) -> Result<(), String> {
    match node {
        toml::Value::Table(t) => set_path(t, parts, value),
        toml::Value::Array(items) => {
            let (head, rest) = parts.split_first().expect("non-empty path");
            let i: usize = head
                .parse()
                .map_err(|_| format!("`{at}` is a list; expected an index, got `{head}`"))?;
            let len = items.len();
            let item = items
                .get_mut(i)
                .ok_or_else(|| format!("index {i} out of range for `{at}` (length {len})"))?;
            if rest.is_empty() {
                *item = value;
                Ok(())
            } else {
                set_value(item, rest, value, head)
            }
        }
        _ => Err(format!("`{at}` is not a table")),
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `path` (dotted, with indices for `[[arrays]]`) in TOML source.
fn locate_key(text: &str, path: &str) -> Option<usize> {
    let parts: Vec<&str> = path.split('.').collect();
    let (key, tables) = parts.split_last()?;
    let mut want_header: Vec<String> = Vec::new();
    let mut array_index: Option<(String, usize)> = None;
    for p in tables {
        if let Ok(i) = p.parse::<usize>() {
            array_index = Some((want_header.join("."), i));
        } else {
            want_header.push(p.to_string());
        }
    }
    let header = want_header.join(".");
    let mut current = String::new();
    let mut seen_array = 0usize;
    let mut in_target_array = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix("[[").and_then(|l| l.strip_suffix("]]")) {
            current = name.trim().to_string();
            in_target_array = match &array_index {
                Some((arr, idx)) if *arr == current => {
                    seen_array += 1;
                    seen_array == idx + 1
                }
                _ => false,
            };
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let header_ok = match &array_index {
            Some((arr, _)) => in_target_array && (current == header || current == *arr),
            None => current == header,
        };
        if header_ok {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == *key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl LoadedScenario {
    pub fn from_path(path: &Path, overrides: &[String]) -> Result<LoadedScenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str_at(&text, Some(path), overrides)
    }

    pub fn from_str_at(
        text: &str,
        path: Option<&Path>,
        overrides: &[String],
    ) -> Result<LoadedScenario, ScenarioError> {
        let label = path.map_or("<scenario>".to_string(), |p| p.display().to_string());
        let invalid = |diagnostics: Vec<Diagnostic>| ScenarioError::Invalid {
            path: label.clone(),
            diagnostics,
        };
        let from_toml = |e: toml::de::Error| Diagnostic {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            field: None,
            message: e.message().trim().to_string(),
        };
        // Parse the file on its own first so errors carry line numbers.
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| invalid(vec![from_toml(e)]))?;
        if let Err(e) = toml::from_str::<Scenario>(text) {
            return Err(invalid(vec![from_toml(e)]));
        }
        apply_overrides(&mut table, overrides).map_err(|d| invalid(vec![d]))?;
        let scenario: Scenario = Scenario::deserialize(toml::Value::Table(table)).map_err(|e| {
            invalid(vec![Diagnostic {
                line: None,
                field: None,
                message: format!("after overrides: {}", e.message().trim()),
            }])
        })?;

        let overridden: Vec<String> = overrides
            .iter()
            .filter_map(|o| o.split_once('=').map(|(k, _)| k.trim().to_string()))
            .collect();
        let locate = |field: &str| {
            if overridden.iter().any(|k| k == field) {
                None
            } else {
                locate_key(text, field)
            }
        };
        let diag = |field: &str, message: String| Diagnostic {
            line: locate(field),
            field: Some(field.to_string()),
            message,
        };

        let base = path.and_then(|p| p.parent()).map(Path::to_path_buf);
        let map = load_map(&scenario.map, base.as_deref()).map_err(|d| {
            invalid(vec![Diagnostic {
                line: d.line.or_else(|| locate("map.file")),
                ..d
            }])
        })?;
        let mut issues = check(&scenario, &map, &diag);
        issues.sort_by_key(|d| d.line.unwrap_or(usize::MAX));
        if !issues.is_empty() {
            return Err(invalid(issues));
        }
        Ok(LoadedScenario {
            scenario,
            map,
            source: path.map(Path::to_path_buf),
        })
    }
}

fn load_map(spec: &MapSpec, base: Option<&Path>) -> Result<GridMap, Diagnostic> {
    let field = |f: &str, message: String| Diagnostic {
        line: None,
        field: Some(f.to_string()),
        message,
    };
    match (&spec.file, &spec.rows) {
        (Some(file), None) => {
            let p = base.map_or_else(|| PathBuf::from(file), |b| b.join(file));
            let text = std::fs::read_to_string(&p)
                .map_err(|e| field("map.file", format!("{}: {e}", p.display())))?;
            GridMap::parse(&text).map_err(|e| {
                field(
                    "map.file",
                    format!("{}:{}: {}", p.display(), e.line, e.message),
                )
            })
        }
        (None, Some(rows)) => {
            let resolution = spec
                .resolution
                .ok_or_else(|| field("map.resolution", "required with inline rows".into()))?;
            let origin = spec.origin.unwrap_or([0.0, 0.0]);
            let width = rows.first().map_or(0, |r| r.chars().count());
            let mut text = format!(
                "width {width}\nheight {}\nresolution {resolution}\norigin {} {}\n",
                rows.len(),
                origin[0],
                origin[1]
            );
            for r in rows {
                text.push_str(r);
                text.push('\n');
            }
            GridMap::parse(&text).map_err(|e| field("map.rows", e.message))
        }
        _ => Err(field("map", "give exactly one of `file` or `rows`".into())),
    }
}

fn finite2(p: [f64; 2]) -> bool {
    p[0].is_finite() && p[1].is_finite()
}

/// Field name that a config validation message starts with.
fn leading_field(message: &str) -> &str {
    message
        .split(|c: char| c.is_whitespace() || c == '[')
        .next()
        .unwrap_or("")
}

fn check(
    s: &Scenario,
    map: &GridMap,
    diag: &dyn Fn(&str, String) -> Diagnostic,
) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut need = |ok: bool, field: &str, message: &str| {
        if !ok {
            out.push(diag(field, message.to_string()));
        }
    };
    need(
        s.duration > 0.0 && s.duration.is_finite(),
        "duration",
        "must be positive",
    );
    need(
        s.safety_margin > 0.0 && s.safety_margin.is_finite(),
        "safety_margin",
        "must be positive",
    );
    need(
        s.avoidance_buffer >= 0.0 && s.avoidance_buffer.is_finite(),
        "avoidance_buffer",
        "must be non-negative",
    );
    need(s.substeps >= 1, "substeps", "must be at least 1");
    need(s.camera.range > 0.0, "camera.range", "must be positive");
    need(
        s.camera.pixel_noise >= 0.0,
        "camera.pixel_noise",
        "must be non-negative",
    );
    need(
        s.camera.depth_noise >= 0.0,
        "camera.depth_noise",
        "must be non-negative",
    );
    need(
        s.camera.latency >= 0.0 && s.camera.latency.is_finite(),
        "camera.latency",
        "must be non-negative",
    );
    need(s.lidar.beams >= 1, "lidar.beams", "must be at least 1");
    need(s.lidar.range > 0.0, "lidar.range", "must be positive");
    need(
        s.lidar.arc > 0.0 && s.lidar.arc <= TAU + 1e-9,
        "lidar.arc",
        "must lie in (0, 2π]",
    );
    need(
        s.apf.gain >= 0.0 && s.apf.gain.is_finite(),
        "apf.gain",
        "must be non-negative",
    );
    need(
        s.apf.shift_points >= 1,
        "apf.shift_points",
        "must be at least 1",
    );
    need(s.tracker.gate > 0.0, "tracker.gate", "must be positive");
    need(
        (s.tracker.frame_period - 1.0 / CAMERA_RATE).abs() < 1e-12,
        "tracker.frame_period",
        "must equal the camera period (1/30 s)",
    );
    need(finite2(s.robot.start), "robot.start", "must be finite");
    need(
        s.robot.heading.is_finite(),
        "robot.heading",
        "must be finite",
    );
    need(
        !s.robot.waypoints.is_empty(),
        "robot.waypoints",
        "at least one waypoint is required",
    );
    if let Err(e) = s.nmpc.validate() {
        out.push(diag(&format!("nmpc.{}", leading_field(&e)), e));
    }
    if let Err(e) = s.planner.validate() {
        out.push(diag(&format!("planner.{}", leading_field(&e)), e));
    }
    if let Err(e) = CameraModel::new(&s.camera.intrinsics) {
        out.push(diag("camera.intrinsics", e.to_string()));
    }
    let ids = s.pedestrian_ids();
    for (i, p) in s.pedestrians.iter().enumerate() {
        let f = |name: &str| format!("pedestrians.{i}.{name}");
        if !(p.speed >= 0.0 && p.speed.is_finite()) {
            out.push(diag(&f("speed"), "must be non-negative".into()));
        }
        if !(p.start_time >= 0.0 && p.start_time.is_finite()) {
            out.push(diag(&f("start_time"), "must be non-negative".into()));
        }
        if !finite2(p.start) || !p.waypoints.iter().all(|w| finite2(*w)) {
            out.push(diag(&f("waypoints"), "coordinates must be finite".into()));
        }
        if ids[..i].contains(&ids[i]) {
            out.push(diag(
                &f("id"),
                format!("duplicate pedestrian id {}", ids[i]),
            ));
        }
    }
    if !out.is_empty() {
        return out;
    }
    // Every waypoint must be reachable from the one before it.
    let mut from = s.robot.start;
    for (i, &wp) in s.robot.waypoints.iter().enumerate() {
        match plan(map, from, wp, &s.planner) {
            Ok(_) => {}
            Err(PlanError::StartOccupied) if i == 0 => {
                out.push(diag("robot.start", "start lies in an occupied cell".into()))
            }
            Err(e) => out.push(diag(
                "robot.waypoints",
                format!("waypoint {i} at ({}, {}): {e}", wp[0], wp[1]),
            )),
        }
        from = wp;
    }
    out
}
