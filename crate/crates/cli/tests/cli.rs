use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spawntrack::filter::predict_track;
use spawntrack::simulator::circular_orbit;
use spawntrack::tracker::hypothesis_count_bound;
use spawntrack::{ClutterModel, DynamicsConfig, Hypothesis, ScenarioConfig, Tracker, TrackerConfig};
use spawntrack_cli::io::{read_frames, read_truth};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_spawntrack"));
    c.env_remove("SPAWNTRACK_OUT").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn short_spawn_scenario(dir: &Path, duration: f64) -> PathBuf {
    let mut cfg = ScenarioConfig::preset("single-spawn").unwrap();
    cfg.duration = duration;
    let path = dir.join(format!("scenario_{duration}.json"));
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn simulate(dir: &Path, scenario: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    let o = run(&["simulate", "--scenario", s(scenario), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn outputs_except_manifest(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn negative_scan_interval_is_a_config_error_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let mut v = serde_json::to_value(ScenarioConfig::preset("single-spawn").unwrap()).unwrap();
    v["scan_interval"] = serde_json::json!(-60.0);
    let path = dir.path().join("bad.json");
    fs::write(&path, v.to_string()).unwrap();
    let o = run(&["simulate", "--scenario", s(&path), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("scan_interval"));
}

#[test]
fn unknown_tracker_config_field_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let scenario = short_spawn_scenario(dir.path(), 480.0);
    let sim = simulate(dir.path(), &scenario, "sim");
    let cfg = dir.path().join("tracker.json");
    fs::write(&cfg, r#"{"sampler": {"record_stepz": 5}}"#).unwrap();
    let o = run(&[
        "track", "--frames", s(&sim.join("frames.csv")), "--scenario", s(&scenario), "--config", s(&cfg),
        "--out", s(&dir.path().join("t")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sampler"));
}

#[test]
fn missing_frames_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "track", "--frames", s(&dir.path().join("absent.csv")), "--preset", "single-spawn", "--out",
        s(&dir.path().join("t")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn truth_with_wrong_scan_count_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let long = short_spawn_scenario(dir.path(), 600.0);
    let sim_long = simulate(dir.path(), &long, "long");
    let short = short_spawn_scenario(dir.path(), 480.0);
    let sim_short = simulate(dir.path(), &short, "short");
    let o = run(&[
        "track", "--frames", s(&sim_short.join("frames.csv")), "--scenario", s(&short), "--truth",
        s(&sim_long.join("truth.csv")), "--out", s(&dir.path().join("t")),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_is_byte_identical_across_reruns_and_spawn_adds_objects() {
    let dir = TempDir::new().unwrap();
    let scenario = short_spawn_scenario(dir.path(), 600.0);
    let a = simulate(dir.path(), &scenario, "a");
    let b = simulate(dir.path(), &scenario, "b");
    assert_eq!(outputs_except_manifest(&a), outputs_except_manifest(&b));
    let truth = read_truth(&a.join("truth.csv")).unwrap();
    let first = truth.snapshots.first().unwrap().len();
    let last = truth.snapshots.last().unwrap().len();
    assert_eq!(last, first + 2);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema_version"], 1);
    assert!(manifest["finished_at_unix_s"].is_number());
}

#[test]
fn output_directory_defaults_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("from_env");
    let o = bin()
        .args(["simulate", "--preset", "single-spawn"])
        .env("SPAWNTRACK_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("frames.csv").exists());
}

fn track(dir: &Path, scenario: &Path, frames: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["track", "--frames", s(frames), "--scenario", s(scenario), "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn mcmc_tracking_is_byte_identical_for_a_fixed_seed() {
    let dir = TempDir::new().unwrap();
    let scenario = short_spawn_scenario(dir.path(), 900.0);
    let sim = simulate(dir.path(), &scenario, "sim");
    let frames = sim.join("frames.csv");
    let truth = sim.join("truth.csv");
    let extra = ["--seed", "11", "--history", "--truth", s(&truth)];
    let a = track(dir.path(), &scenario, &frames, "a", &extra);
    let b = track(dir.path(), &scenario, &frames, "b", &extra);
    assert_eq!(outputs_except_manifest(&a), outputs_except_manifest(&b));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["scans"], 16);
    assert_eq!(summary["cardinality_error"].as_array().unwrap().len(), 16);
    let history = fs::read_to_string(a.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 17);
}

#[test]
fn exhaustive_tracking_does_not_depend_on_the_seed() {
    let dir = TempDir::new().unwrap();
    let mut cfg = ScenarioConfig::preset("single-spawn").unwrap();
    cfg.objects = vec![circular_orbit(18_000.0, -0.2), circular_orbit(26_000.0, -0.15)];
    cfg.spawn_events.clear();
    cfg.clutter = ClutterModel { expected_count: 0.3, ..cfg.clutter };
    cfg.duration = 600.0;
    let scenario = dir.path().join("scenario.json");
    fs::write(&scenario, serde_json::to_string(&cfg).unwrap()).unwrap();
    let sim = simulate(dir.path(), &scenario, "sim");
    let frames = sim.join("frames.csv");
    let read = |out: &Path| -> Vec<serde_json::Value> {
        fs::read_to_string(out.join("reports.jsonl"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    };
    let a = read(&track(dir.path(), &scenario, &frames, "a", &["--mode", "exhaustive", "--seed", "1"]));
    let b = read(&track(dir.path(), &scenario, &frames, "b", &["--mode", "exhaustive", "--seed", "999"]));
    assert_eq!(a.len(), b.len());
    for (ra, rb) in a.iter().zip(&b) {
        let wa = ra["top_weight"].as_f64().unwrap();
        let wb = rb["top_weight"].as_f64().unwrap();
        assert!((wa - wb).abs() <= 1e-9);
        assert_eq!(ra["estimates"], rb["estimates"]);
        assert_eq!(ra["hypothesis_count"], rb["hypothesis_count"]);
    }
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(false)
        .from_path(path)
        .unwrap();
    r.records().map(|r| r.unwrap().iter().map(str::to_owned).collect()).collect()
}

#[test]
fn figdata_counts_match_an_independent_recomputation() {
    let dir = TempDir::new().unwrap();
    let scenario_path = short_spawn_scenario(dir.path(), 720.0);
    let sim = simulate(dir.path(), &scenario_path, "sim");
    let frames_path = sim.join("frames.csv");
    let trk = track(dir.path(), &scenario_path, &frames_path, "trk", &["--seed", "4"]);
    let fig = dir.path().join("fig");
    let o = run(&[
        "figdata", "--reports", s(&trk.join("reports.jsonl")), "--truth", s(&sim.join("truth.csv")), "--out", s(&fig),
    ]);
    assert!(o.status.success());
    let table = read_csv(&fig.join("hypothesis_counts.csv"));
    assert_eq!(table[0], ["scan", "time", "returns", "hypothesis_count", "hypothesis_count_bound"]);

    // Replay the run, predicting each parent set by hand and bounding it.
    let scenario: ScenarioConfig = serde_json::from_str(&fs::read_to_string(&scenario_path).unwrap()).unwrap();
    let frames = read_frames(&frames_path, &scenario.scan_times()).unwrap();
    let mut config = TrackerConfig::default();
    config.sampler.seed = 4;
    let mut tracker = Tracker::for_scenario(config.clone(), &scenario).unwrap();
    assert_eq!(table.len() - 1, frames.len());
    for (row, frame) in table[1..].iter().zip(&frames) {
        let dynamics = DynamicsConfig {
            dt: frame.time - tracker.time(),
            ..scenario.dynamics
        };
        let predicted: Vec<Hypothesis> = tracker
            .hypotheses()
            .iter()
            .map(|h| {
                let tracks = h.tracks.iter().map(|t| predict_track(t, &dynamics).unwrap()).collect();
                Hypothesis::new(h.id, h.log_weight, tracks)
            })
            .collect();
        let bound = hypothesis_count_bound(&predicted, frame.len(), &config.birth_death, &scenario.sensor).unwrap();
        assert_eq!(row[4], bound.to_string(), "scan {}", row[0]);
        assert_eq!(row[2], frame.len().to_string());
        tracker.step(frame).unwrap();
    }

    let positions = read_csv(&fig.join("positions.csv"));
    assert_eq!(positions[0], ["scan", "time", "source", "id", "x_km", "y_km"]);
    assert!(positions.iter().any(|r| r[2] == "truth"));
    assert!(positions.iter().any(|r| r[2] == "estimate"));
}

#[test]
fn figdata_on_empty_reports_writes_header_only_tables() {
    let dir = TempDir::new().unwrap();
    let reports = dir.path().join("reports.jsonl");
    fs::write(&reports, "").unwrap();
    let fig = dir.path().join("fig");
    let o = run(&["figdata", "--reports", s(&reports), "--out", s(&fig)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&fig.join("positions.csv")).len(), 1);
    assert_eq!(read_csv(&fig.join("hypothesis_counts.csv")).len(), 1);
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
}
