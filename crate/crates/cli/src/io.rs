//! File formats: JSON configuration, CSV tables with a versioned comment
//! header, and line-delimited JSON records.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::Vector2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spawntrack::simulator::{TruthObject, TruthTag};
use spawntrack::{MeasurementFrame, StateVector, TrackerConfig, TrackerReport, Truth};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Which error class a malformed file belongs to.
#[derive(Clone, Copy, Debug)]
pub enum FileKind {
    Config,
    Input,
}

impl FileKind {
    fn error(self, msg: String) -> CliError {
        match self {
            FileKind::Config => CliError::Config(msg),
            FileKind::Input => CliError::Input(msg),
        }
    }
}

/// Parses a JSON file; errors name the offending field path.
pub fn load_json<T: DeserializeOwned>(path: &Path, kind: FileKind) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| kind.error(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        kind.error(format!("{}: field `{field}`: {}", path.display(), e.inner()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Provenance of one CLI run. Written before any other output and updated
/// with the end time on success.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub schema_version: u32,
    pub command: String,
    pub scenario: Option<String>,
    pub frames: Option<String>,
    pub tracker_config: Option<TrackerConfig>,
    pub seed: Option<u64>,
    pub output_dir: String,
    pub started_at_unix_s: f64,
    pub finished_at_unix_s: Option<f64>,
}

impl RunManifest {
    pub fn start(command: &str, out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let m = Self {
            tool: "spawntrack".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            scenario: None,
            frames: None,
            tracker_config: None,
            seed: None,
            output_dir: out.display().to_string(),
            started_at_unix_s: now(),
            finished_at_unix_s: None,
        };
        Ok(m)
    }

    pub fn save(&self, out: &Path) -> CliResult<()> {
        write_json(&out.join(MANIFEST_FILE), self)
    }

    pub fn finish(mut self, out: &Path) -> CliResult<()> {
        self.finished_at_unix_s = Some(now());
        self.save(out)
    }
}

/// CSV writer with the comment line and column header already written, so
/// tables without rows still carry their schema.
fn csv_writer(path: &Path, kind: &str, columns: &[&str]) -> CliResult<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    writeln!(w, "# spawntrack {kind} schema_version={SCHEMA_VERSION} manifest={MANIFEST_FILE}")
        .map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    w.write_record(columns).map_err(|e| csv_err(path, e))?;
    Ok(w)
}

/// Writes serializable rows under an explicit header.
pub fn write_table<T: Serialize>(path: &Path, kind: &str, columns: &[&str], rows: &[T]) -> CliResult<()> {
    let mut w = csv_writer(path, kind, columns)?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn csv_reader(path: &Path) -> CliResult<csv::Reader<File>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameRow {
    time: f64,
    return_x_km: f64,
    return_y_km: f64,
    truth_tag: Option<String>,
}

/// One row per return; scans without returns produce no rows.
pub fn write_frames(path: &Path, frames: &[MeasurementFrame]) -> CliResult<()> {
    let mut w = csv_writer(path, "frames", &["time", "return_x_km", "return_y_km", "truth_tag"])?;
    for f in frames {
        for (i, z) in f.returns.iter().enumerate() {
            let tag = f.truth_tag.as_ref().map(|t| t[i].to_string());
            w.serialize(FrameRow {
                time: f.time,
                return_x_km: z.x,
                return_y_km: z.y,
                truth_tag: tag,
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads frames; `scan_times` adds empty frames for scans without rows.
pub fn read_frames(path: &Path, scan_times: &[f64]) -> CliResult<Vec<MeasurementFrame>> {
    let mut by_time: BTreeMap<u64, MeasurementFrame> = BTreeMap::new();
    let key = |t: f64| {
        // Order-preserving map of f64 onto u64.
        let b = t.to_bits();
        if b >> 63 == 1 {
            !b
        } else {
            b | 1 << 63
        }
    };
    for t in scan_times {
        by_time.insert(key(*t), MeasurementFrame::empty(*t));
    }
    let mut all_tagged = true;
    for row in csv_reader(path)?.deserialize::<FrameRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if !(row.time.is_finite() && row.return_x_km.is_finite() && row.return_y_km.is_finite()) {
            return Err(CliError::Input(format!("{}: non-finite value", path.display())));
        }
        let tag = match &row.truth_tag {
            Some(s) if !s.is_empty() => Some(s.parse::<TruthTag>().map_err(CliError::Input)?),
            _ => None,
        };
        let f = by_time.entry(key(row.time)).or_insert_with(|| MeasurementFrame::empty(row.time));
        f.returns.push(Vector2::new(row.return_x_km, row.return_y_km));
        match tag {
            Some(t) => f.truth_tag.get_or_insert_with(Vec::new).push(t),
            None => all_tagged = false,
        }
    }
    let mut frames: Vec<MeasurementFrame> = by_time.into_values().collect();
    for f in &mut frames {
        f.truth_tag = if all_tagged { Some(f.truth_tag.take().unwrap_or_default()) } else { None };
    }
    Ok(frames)
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    scan: usize,
    time: f64,
    object_id: u64,
    x_km: f64,
    y_km: f64,
    vx_km_s: f64,
    vy_km_s: f64,
}

pub fn write_truth(path: &Path, truth: &Truth) -> CliResult<()> {
    let mut w = csv_writer(path, "truth", &["scan", "time", "object_id", "x_km", "y_km", "vx_km_s", "vy_km_s"])?;
    for (scan, (t, objs)) in truth.times.iter().zip(&truth.snapshots).enumerate() {
        for o in objs {
            let s = &o.state.0;
            w.serialize(TruthRow {
                scan,
                time: *t,
                object_id: o.id,
                x_km: s[0],
                y_km: s[1],
                vx_km_s: s[2],
                vy_km_s: s[3],
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a truth table. Scans are identified by the `scan` column.
pub fn read_truth(path: &Path) -> CliResult<Truth> {
    let mut scans: BTreeMap<usize, (f64, Vec<TruthObject>)> = BTreeMap::new();
    for row in csv_reader(path)?.deserialize::<TruthRow>() {
        let r = row.map_err(|e| csv_err(path, e))?;
        scans.entry(r.scan).or_insert_with(|| (r.time, Vec::new())).1.push(TruthObject {
            id: r.object_id,
            state: StateVector::new(r.x_km, r.y_km, r.vx_km_s, r.vy_km_s),
        });
    }
    let (times, snapshots) = scans.into_values().unzip();
    Ok(Truth { times, snapshots })
}

#[derive(Serialize)]
struct Header<'a> {
    record: &'a str,
    schema_version: u32,
    manifest: &'a str,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    record: &'a str,
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Line-delimited JSON writer whose first line is a header record.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: &Path) -> CliResult<Self> {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(f),
        };
        w.line(&Header {
            record: "header",
            schema_version: SCHEMA_VERSION,
            manifest: MANIFEST_FILE,
        })?;
        Ok(w)
    }

    fn line<T: Serialize>(&mut self, v: &T) -> CliResult<()> {
        let s = serde_json::to_string(v).map_err(|e| CliError::Input(e.to_string()))?;
        writeln!(self.out, "{s}").map_err(|e| CliError::io(&self.path, e))
    }

    pub fn record<T: Serialize>(&mut self, kind: &str, body: &T) -> CliResult<()> {
        self.line(&Tagged {
            record: kind,
            schema_version: SCHEMA_VERSION,
            body,
        })
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.out.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// All `report` records of a reports file, in order. Empty files are valid.
pub fn read_reports(path: &Path) -> CliResult<Vec<TrackerReport>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: serde_json::Error| CliError::Input(format!("{}:{}: {e}", path.display(), n + 1));
        let v: serde_json::Value = serde_json::from_str(&line).map_err(bad)?;
        if v.get("record").and_then(|r| r.as_str()) == Some("report") {
            out.push(serde_json::from_value(v).map_err(bad)?);
        }
    }
    Ok(out)
}
