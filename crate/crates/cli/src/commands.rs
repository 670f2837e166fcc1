//! Subcommand implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use serde::Serialize;
use spawntrack::combinatorics::count_associations;
use spawntrack::simulator::{simulate, PRESETS};
use spawntrack::{
    Hypothesis, HypothesisId, MeasurementFrame, ScenarioConfig, Tracker, TrackerConfig, TrackerMode, TrackerReport,
    Truth,
};

use crate::error::{CliError, CliResult};
use crate::io::{self, FileKind, RecordWriter, RunManifest};

pub const OUT_ENV: &str = "SPAWNTRACK_OUT";

#[derive(Debug, Parser)]
#[command(name = "spawntrack", version, about = "Multi-target tracking through spawn events")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate truth trajectories and measurement frames for a scenario.
    Simulate(SimulateArgs),
    /// Run the tracker over a frames file.
    Track(TrackArgs),
    /// Turn a reports file into plot-ready tables.
    Figdata(FigdataArgs),
    /// Quick internal consistency checks.
    Selftest,
}

/// Where the scenario comes from.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Built-in scenario name.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    pub preset: Option<String>,
}

impl ScenarioSource {
    fn load(&self) -> CliResult<(ScenarioConfig, String)> {
        let cfg: ScenarioConfig = match (&self.scenario, &self.preset) {
            (Some(path), _) => io::load_json(path, FileKind::Config)?,
            (None, Some(name)) => ScenarioConfig::preset(name)
                .ok_or_else(|| CliError::Config(format!("unknown preset `{name}`")))?,
            (None, None) => return Err(CliError::Config("no scenario given".into())),
        };
        cfg.validate()?;
        let origin = match (&self.scenario, &self.preset) {
            (Some(p), _) => p.display().to_string(),
            (_, Some(n)) => format!("preset:{n}"),
            _ => unreachable!(),
        };
        Ok((cfg, origin))
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Mcmc,
    Exhaustive,
}

impl From<ModeArg> for TrackerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mcmc => TrackerMode::Mcmc,
            ModeArg::Exhaustive => TrackerMode::Exhaustive,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Frames CSV.
    #[arg(long)]
    pub frames: PathBuf,
    /// Sensor, dynamics, clutter and initial objects.
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Tracker configuration JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Truth CSV for the summary metrics.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Sampler seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub h_inf: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub adapt_rates: bool,
    /// Also write every hypothesis of every scan.
    #[arg(long)]
    pub history: bool,
}

impl TrackArgs {
    fn tracker_config(&self) -> CliResult<TrackerConfig> {
        let mut cfg: TrackerConfig = match &self.config {
            Some(p) => io::load_json(p, FileKind::Config)?,
            None => TrackerConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.sampler.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m.into();
        }
        if let Some(h) = self.h_inf {
            cfg.h_inf = h;
        }
        if let Some(a) = self.alpha {
            cfg.birth_death.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.birth_death.beta = b;
        }
        cfg.adapt_rates |= self.adapt_rates;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct FigdataArgs {
    /// Reports file written by `track`.
    #[arg(long)]
    pub reports: PathBuf,
    /// Truth CSV; adds truth rows to the positions table.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, env = OUT_ENV, default_value = "out")]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Track(a) => cmd_track(&a),
        Command::Figdata(a) => cmd_figdata(&a),
        Command::Selftest => selftest(),
    }
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let (mut cfg, origin) = args.source.load()?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let mut manifest = RunManifest::start("simulate", &args.out)?;
    manifest.scenario = Some(origin);
    manifest.seed = Some(cfg.seed);
    manifest.save(&args.out)?;

    let (truth, frames) = simulate(&cfg)?;
    io::write_json(&args.out.join("scenario.json"), &cfg)?;
    io::write_truth(&args.out.join("truth.csv"), &truth)?;
    io::write_frames(&args.out.join("frames.csv"), &frames)?;
    log::info!("simulated {} scans into {}", frames.len(), args.out.display());
    manifest.finish(&args.out)
}

#[derive(Serialize)]
struct HistoryEntry {
    id: HypothesisId,
    parent_id: Option<HypothesisId>,
    weight: f64,
    labels: Vec<u64>,
    event: Option<String>,
}

#[derive(Serialize)]
struct HistoryScan {
    scan: u64,
    time: f64,
    hypotheses: Vec<HistoryEntry>,
}

/// Final metrics of a tracking run.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub scans: usize,
    pub final_estimated_count: Option<usize>,
    pub final_truth_count: Option<usize>,
    /// Estimated minus true object count, per scan.
    pub cardinality_error: Vec<i64>,
    /// Root mean square distance from each truth object to the nearest
    /// top-hypothesis estimate, per scan (km). Null without estimates.
    pub position_rmse_km: Vec<Option<f64>>,
    pub degenerate_scans: usize,
}

fn summarize(reports: &[TrackerReport], truth: Option<&Truth>) -> CliResult<Summary> {
    let mut cardinality_error = Vec::new();
    let mut position_rmse_km = Vec::new();
    let mut final_truth_count = None;
    if let Some(truth) = truth {
        if truth.times.len() != reports.len() {
            return Err(CliError::Input(format!(
                "truth has {} scans but frames have {}",
                truth.times.len(),
                reports.len()
            )));
        }
        for (r, (t, objs)) in reports.iter().zip(truth.times.iter().zip(&truth.snapshots)) {
            if (r.time - t).abs() > 1e-9 {
                return Err(CliError::Input(format!("truth scan at t = {t} does not match frame at t = {}", r.time)));
            }
            cardinality_error.push(r.estimated_count as i64 - objs.len() as i64);
            let rmse = if r.estimates.is_empty() || objs.is_empty() {
                None
            } else {
                let sq: f64 = objs
                    .iter()
                    .map(|o| {
                        r.estimates
                            .iter()
                            .map(|e| (e.mean.position() - o.state.position()).norm_squared())
                            .fold(f64::INFINITY, f64::min)
                    })
                    .sum();
                Some((sq / objs.len() as f64).sqrt())
            };
            position_rmse_km.push(rmse);
        }
        final_truth_count = truth.snapshots.last().map(Vec::len);
    }
    Ok(Summary {
        scans: reports.len(),
        final_estimated_count: reports.last().map(|r| r.estimated_count),
        final_truth_count,
        cardinality_error,
        position_rmse_km,
        degenerate_scans: reports.iter().filter(|r| r.degenerate).count(),
    })
}

pub fn cmd_track(args: &TrackArgs) -> CliResult<()> {
    let (scenario, origin) = args.source.load()?;
    let config = args.tracker_config()?;
    let mut manifest = RunManifest::start("track", &args.out)?;
    manifest.scenario = Some(origin);
    manifest.frames = Some(args.frames.display().to_string());
    manifest.tracker_config = Some(config.clone());
    manifest.seed = Some(config.sampler.seed);
    manifest.save(&args.out)?;

    let frames = io::read_frames(&args.frames, &scenario.scan_times())?;
    let truth = args.truth.as_deref().map(io::read_truth).transpose()?;
    let mut tracker = Tracker::for_scenario(config, &scenario)?;
    let reports = run_frames(&mut tracker, &frames, &args.out, args.history)?;
    let summary = summarize(&reports, truth.as_ref())?;
    io::write_json(&args.out.join("summary.json"), &summary)?;
    log::info!("tracked {} scans into {}", reports.len(), args.out.display());
    manifest.finish(&args.out)
}

fn run_frames(tracker: &mut Tracker, frames: &[MeasurementFrame], out: &Path, history: bool) -> CliResult<Vec<TrackerReport>> {
    let mut reports_out = RecordWriter::create(&out.join("reports.jsonl"))?;
    let mut history_out = if history {
        Some(RecordWriter::create(&out.join("history.jsonl"))?)
    } else {
        None
    };
    let mut reports = Vec::with_capacity(frames.len());
    for frame in frames {
        let report = tracker.step(frame)?;
        if report.degenerate {
            log::warn!("scan {}: every child had zero likelihood", report.scan);
        }
        reports_out.record("report", &report)?;
        if let Some(h) = history_out.as_mut() {
            let events = tracker.last_events();
            let hypotheses = tracker
                .hypotheses()
                .iter()
                .map(|hyp| HistoryEntry {
                    id: hyp.id,
                    parent_id: hyp.parent_id,
                    weight: hyp.weight(),
                    labels: hyp.labels().into_iter().map(|l| l.0).collect(),
                    event: events
                        .iter()
                        .find(|(id, _)| *id == hyp.id)
                        .and_then(|(_, e)| e.as_ref().map(|e| e.to_string())),
                })
                .collect();
            h.record(
                "hypotheses",
                &HistoryScan {
                    scan: report.scan,
                    time: report.time,
                    hypotheses,
                },
            )?;
        }
        reports.push(report);
    }
    reports_out.finish()?;
    if let Some(h) = history_out {
        h.finish()?;
    }
    Ok(reports)
}

#[derive(Serialize)]
struct PositionRow {
    scan: u64,
    time: f64,
    source: &'static str,
    id: u64,
    x_km: f64,
    y_km: f64,
}

#[derive(Serialize)]
struct CountRow {
    scan: u64,
    time: f64,
    returns: usize,
    hypothesis_count: usize,
    hypothesis_count_bound: String,
}

pub fn cmd_figdata(args: &FigdataArgs) -> CliResult<()> {
    let mut manifest = RunManifest::start("figdata", &args.out)?;
    manifest.frames = Some(args.reports.display().to_string());
    manifest.save(&args.out)?;
    let reports = io::read_reports(&args.reports)?;
    let truth = args.truth.as_deref().map(io::read_truth).transpose()?;

    let mut positions = Vec::new();
    for r in &reports {
        if let Some(t) = &truth {
            if let Some(k) = t.times.iter().position(|tt| (tt - r.time).abs() <= 1e-9) {
                for o in &t.snapshots[k] {
                    let p = o.state.position();
                    positions.push(PositionRow {
                        scan: r.scan,
                        time: r.time,
                        source: "truth",
                        id: o.id,
                        x_km: p.x,
                        y_km: p.y,
                    });
                }
            }
        }
        for e in &r.estimates {
            let p = e.mean.position();
            positions.push(PositionRow {
                scan: r.scan,
                time: r.time,
                source: "estimate",
                id: e.label.0,
                x_km: p.x,
                y_km: p.y,
            });
        }
    }
    io::write_table(&args.out.join("positions.csv"), "positions", &["scan", "time", "source", "id", "x_km", "y_km"], &positions)?;

    let counts: Vec<CountRow> = reports
        .iter()
        .map(|r| CountRow {
            scan: r.scan,
            time: r.time,
            returns: r.returns,
            hypothesis_count: r.hypothesis_count,
            hypothesis_count_bound: r.hypothesis_count_bound.clone(),
        })
        .collect();
    io::write_table(
        &args.out.join("hypothesis_counts.csv"),
        "hypothesis_counts",
        &["scan", "time", "returns", "hypothesis_count", "hypothesis_count_bound"],
        &counts,
    )?;
    manifest.finish(&args.out)
}

/// Small end-to-end checks that need no input files.
pub fn selftest() -> CliResult<()> {
    let fail = |msg: String| Err(CliError::Selftest(msg));
    let a = count_associations(10, 5);
    if a != BigUint::from(63_591u32) {
        return fail(format!("count_associations(10, 5) = {a}"));
    }
    println!("ok  association count A(10, 5) = {a}");

    let mut scenario = ScenarioConfig::preset("single-spawn").expect("built-in preset");
    scenario.duration = 600.0;
    let (truth, frames) = simulate(&scenario)?;
    let grew = truth.count_at(truth.times.len() - 1) == truth.count_at(0) + 2;
    if !grew {
        return fail("spawn did not add two objects".into());
    }
    println!("ok  simulation: {} scans, spawn adds 2 objects", frames.len());

    let run = || -> CliResult<Vec<String>> {
        let mut t = Tracker::for_scenario(TrackerConfig::default(), &scenario)?;
        frames
            .iter()
            .map(|f| {
                let r = t.step(f)?;
                let total: f64 = t.hypotheses().iter().map(Hypothesis::weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(CliError::Selftest(format!("weights sum to {total}")));
                }
                serde_json::to_string(&r).map_err(|e| CliError::Selftest(e.to_string()))
            })
            .collect()
    };
    let first = run()?;
    if first != run()? {
        return fail("tracker reruns differ".into());
    }
    println!("ok  tracker: weights normalized and reruns identical over {} scans", first.len());
    Ok(())
}
