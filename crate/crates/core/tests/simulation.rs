use dtaa::sim::{self, replay_horizon, run_scenario, LoadedScenario, SCHEMA};
use serde_json::Value;
use std::path::PathBuf;

fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn shipped() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths
}

fn load(name: &str, overrides: &[&str]) -> LoadedScenario {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    LoadedScenario::from_path(&scenarios_dir().join(name), &o).unwrap()
}

#[test]
fn every_shipped_scenario_loads() {
    let paths = shipped();
    assert!(paths.len() >= 5);
    for p in paths {
        let loaded =
            LoadedScenario::from_path(&p, &[]).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(loaded.scenario.duration > 0.0);
    }
}

#[test]
fn log_is_tick_records_then_one_summary() {
    let loaded = load("lab_head_on.toml", &["duration=3"]);
    let out = sim::run(&loaded);
    let text = String::from_utf8(out.to_ndjson()).unwrap();
    let lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let (last, ticks) = lines.split_last().unwrap();
    assert_eq!(last["kind"], "summary");
    assert_eq!(last["schema"], SCHEMA);
    assert_eq!(last["ticks"].as_u64().unwrap() as usize, ticks.len());
    for (i, t) in ticks.iter().enumerate() {
        assert_eq!(t["kind"], "tick");
        assert_eq!(t["tick"].as_u64().unwrap(), i as u64);
    }
    // Control runs on every third camera frame.
    let controls = ticks.iter().filter(|t| !t["control"].is_null()).count();
    assert_eq!(controls, last["control_ticks"].as_u64().unwrap() as usize);
    assert_eq!(controls, ticks.len().div_ceil(3));
}

#[test]
fn seed_changes_the_log_but_not_its_shape() {
    let a = sim::run(&load("crossing.toml", &["duration=4"]));
    let b = sim::run(&load("crossing.toml", &["duration=4", "seed=99"]));
    assert_eq!(a.ticks.len(), b.ticks.len());
    assert_ne!(a.to_ndjson(), b.to_ndjson());
}

#[test]
fn override_lands_in_effective_config() {
    let out = sim::run(&load(
        "lab_head_on.toml",
        &["duration=2", "nmpc.horizon=25"],
    ));
    assert_eq!(out.summary.effective_config["nmpc"]["horizon"], 25);
    assert_eq!(out.summary.effective_config["duration"], 2.0);
}

#[test]
fn replay_at_the_recorded_horizon_matches_the_closed_loop() {
    let loaded = load("lab_head_on.toml", &["duration=6"]);
    let out = run_scenario(&loaded, true);
    assert_eq!(out.replay.len(), out.summary.control_ticks);
    let row = replay_horizon(
        &loaded.scenario.nmpc,
        &out.replay,
        loaded.scenario.nmpc.horizon,
    );
    assert_eq!(row.ticks, out.summary.control_ticks);
    assert_eq!(row.timeouts, out.summary.timeout_count);
    assert!((row.mean_iterations - out.summary.mean_iterations).abs() < 1e-12);
}

#[test]
fn no_avoidance_walks_into_the_pedestrian() {
    let out = sim::run(&load("lab_head_on.toml", &["mode=\"no_avoidance\""]));
    assert!(out.summary.violation_count > 0);
    assert!(out.summary.min_delta.unwrap() < 1.0);
}
