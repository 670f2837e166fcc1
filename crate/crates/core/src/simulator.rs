//! Ground truth and sensor frames for planar orbital scenarios.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix2, Vector2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::{circular_velocity, in_fov, propagate_state_by, DynamicsConfig, SensorModel, StateVector, EARTH_MU};
use crate::likelihood::ClutterModel;
use crate::rng;

/// Breakup of one initial object into `fragments` pieces at `time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpawnEvent {
    pub time: f64,
    /// Index into [`ScenarioConfig::objects`].
    pub parent: usize,
    pub fragments: usize,
    /// Std of the isotropic fragment velocity kick, km/s.
    pub velocity_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub objects: Vec<StateVector>,
    #[serde(default)]
    pub spawn_events: Vec<SpawnEvent>,
    pub sensor: SensorModel,
    pub clutter: ClutterModel,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    pub duration: f64,
    pub scan_interval: f64,
    #[serde(default)]
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["single-spawn", "twenty-object", "sixty-object"];

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.sensor.validate()?;
        self.clutter.validate()?;
        self.dynamics.validate()?;
        if !(self.scan_interval.is_finite() && self.scan_interval > 0.0) {
            return Err(invalid("scan_interval", "must be finite and > 0"));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(invalid("duration", "must be finite and >= 0"));
        }
        for (i, s) in self.objects.iter().enumerate() {
            if !s.is_finite() {
                return Err(invalid(&format!("objects[{i}]"), "must be finite"));
            }
        }
        let mut spawned = vec![false; self.objects.len()];
        for (i, e) in self.spawn_events.iter().enumerate() {
            let field = |f: &str| format!("spawn_events[{i}].{f}");
            if !(e.time > 0.0 && e.time <= self.duration) {
                return Err(invalid(&field("time"), "must lie in (0, duration]"));
            }
            if e.parent >= self.objects.len() {
                return Err(invalid(&field("parent"), "is not an object index"));
            }
            if spawned[e.parent] {
                return Err(invalid(&field("parent"), "object already broke up"));
            }
            spawned[e.parent] = true;
            if e.fragments < 2 {
                return Err(invalid(&field("fragments"), "must be >= 2"));
            }
            if !(e.velocity_std.is_finite() && e.velocity_std >= 0.0) {
                return Err(invalid(&field("velocity_std"), "must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Scan times `0, dt, 2 dt, ...` up to the duration.
    pub fn scan_times(&self) -> Vec<f64> {
        let n = (self.duration / self.scan_interval + 1e-9).floor() as usize;
        (0..=n).map(|k| k as f64 * self.scan_interval).collect()
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "single-spawn" => Some(single_spawn()),
            "twenty-object" => Some(twenty_object()),
            "sixty-object" => Some(sixty_object()),
            _ => None,
        }
    }
}

/// Sensor on the Earth's surface looking radially outward.
pub fn default_sensor() -> SensorModel {
    SensorModel {
        origin: Vector2::new(6378.0, 0.0),
        boresight_angle: 0.0,
        fov_half_angle: 15f64.to_radians(),
        max_range: 40_000.0,
        r: Matrix2::identity(),
        p_d: 0.9,
    }
}

/// Prograde circular orbit at `radius` km and polar angle `phase` rad.
pub fn circular_orbit(radius: f64, phase: f64) -> StateVector {
    let p = Vector2::new(radius * phase.cos(), radius * phase.sin());
    let v = circular_velocity(&p, EARTH_MU);
    StateVector::new(p.x, p.y, v.x, v.y)
}

fn base(objects: Vec<StateVector>, spawn: SpawnEvent, duration: f64) -> ScenarioConfig {
    let sensor = default_sensor();
    ScenarioConfig {
        objects,
        spawn_events: vec![spawn],
        clutter: ClutterModel::uniform(&sensor, 0.5),
        sensor,
        dynamics: DynamicsConfig::default(),
        duration,
        scan_interval: 60.0,
        seed: 1,
    }
}

fn single_spawn() -> ScenarioConfig {
    base(
        vec![circular_orbit(20_000.0, -0.30)],
        SpawnEvent {
            time: 420.0,
            parent: 0,
            fragments: 3,
            velocity_std: 0.05,
        },
        1800.0,
    )
}

fn twenty_object() -> ScenarioConfig {
    let mut objects = vec![circular_orbit(20_000.0, -0.30)];
    for i in 1..20 {
        let f = i as f64;
        let radius = 15_000.0 + 800.0 * f;
        let phase = -0.9 + 0.097 * f + 0.03 * (f * 1.7).sin();
        objects.push(circular_orbit(radius, phase));
    }
    base(
        objects,
        SpawnEvent {
            time: 420.0,
            parent: 0,
            fragments: 3,
            velocity_std: 0.05,
        },
        1800.0,
    )
}

fn sixty_object() -> ScenarioConfig {
    let mut objects = vec![circular_orbit(20_000.0, -0.22)];
    for i in 1..60 {
        let f = i as f64;
        let radius = 17_000.0 + 100.0 * f;
        let phase = -0.55 + 0.012 * f + 0.01 * (f * 2.3).sin();
        objects.push(circular_orbit(radius, phase));
    }
    base(
        objects,
        SpawnEvent {
            time: 120.0,
            parent: 0,
            fragments: 3,
            velocity_std: 0.05,
        },
        900.0,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthObject {
    pub id: u64,
    pub state: StateVector,
}

/// Object snapshots at every scan time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<TruthObject>>,
}

impl Truth {
    pub fn count_at(&self, scan: usize) -> usize {
        self.snapshots[scan].len()
    }
}

fn propagate_all(objects: &mut [TruthObject], dynamics: &DynamicsConfig, dt: f64) -> Result<()> {
    if dt == 0.0 {
        return Ok(());
    }
    for o in objects {
        o.state = propagate_state_by(&o.state, dynamics, dt)?;
    }
    Ok(())
}

/// Propagates every object to each scan time, splitting parents at their
/// spawn times. Initial objects have ids `0..n`; fragments get the following
/// ids in order of creation.
pub fn generate_truth(cfg: &ScenarioConfig) -> Result<Truth> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, &[rng::STREAM_TRUTH]);
    let mut spawns = cfg.spawn_events.clone();
    spawns.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut objects: Vec<TruthObject> = cfg
        .objects
        .iter()
        .enumerate()
        .map(|(i, s)| TruthObject { id: i as u64, state: *s })
        .collect();
    let mut next_id = objects.len() as u64;
    let times = cfg.scan_times();
    let mut snapshots = vec![objects.clone()];
    let mut pending = spawns.iter().peekable();
    for w in times.windows(2) {
        let (start, end) = (w[0], w[1]);
        let mut now = start;
        while let Some(s) = pending.next_if(|s| s.time <= end) {
            propagate_all(&mut objects, &cfg.dynamics, s.time - now)?;
            now = s.time;
            let idx = objects
                .iter()
                .position(|o| o.id == s.parent as u64)
                .ok_or_else(|| Error::InvalidConfig {
                    field: "spawn_events.parent".into(),
                    reason: "object no longer exists".into(),
                })?;
            let parent = objects.remove(idx);
            let kick = Normal::new(0.0, s.velocity_std).map_err(|e| Error::Numerical(e.to_string()))?;
            for _ in 0..s.fragments {
                let mut st = parent.state;
                st.0[2] += kick.sample(&mut r);
                st.0[3] += kick.sample(&mut r);
                objects.push(TruthObject { id: next_id, state: st });
                next_id += 1;
            }
        }
        propagate_all(&mut objects, &cfg.dynamics, end - now)?;
        snapshots.push(objects.clone());
    }
    Ok(Truth { times, snapshots })
}

/// Origin of a return, for scoring only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TruthTag {
    Object(u64),
    Clutter,
}

impl fmt::Display for TruthTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruthTag::Object(id) => write!(f, "{id}"),
            TruthTag::Clutter => f.write_str("clutter"),
        }
    }
}

impl FromStr for TruthTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "clutter" {
            Ok(TruthTag::Clutter)
        } else {
            s.parse().map(TruthTag::Object).map_err(|_| format!("bad truth tag `{s}`"))
        }
    }
}

/// The returns of one scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub time: f64,
    pub returns: Vec<Vector2<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_tag: Option<Vec<TruthTag>>,
}

impl MeasurementFrame {
    pub fn empty(time: f64) -> Self {
        Self {
            time,
            returns: Vec::new(),
            truth_tag: None,
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// Uniform point in the FOV sector.
fn sample_in_fov<R: Rng + ?Sized>(sensor: &SensorModel, rng: &mut R) -> Vector2<f64> {
    let angle = sensor.boresight_angle + sensor.fov_half_angle * (2.0 * rng.random::<f64>() - 1.0);
    let range = sensor.max_range * rng.random::<f64>().sqrt();
    sensor.origin + Vector2::new(angle.cos(), angle.sin()) * range
}

/// One scan: detections of in-FOV objects with probability `p_d` and noise
/// `R`, plus Poisson clutter uniform over the FOV, in random order.
pub fn sense<R: Rng + ?Sized>(
    time: f64,
    objects: &[TruthObject],
    sensor: &SensorModel,
    clutter: &ClutterModel,
    rng: &mut R,
) -> Result<MeasurementFrame> {
    let chol = sensor
        .r
        .cholesky()
        .ok_or_else(|| Error::Numerical("measurement noise is not positive definite".into()))?;
    let l = chol.l();
    let mut tagged: Vec<(Vector2<f64>, TruthTag)> = Vec::new();
    for o in objects {
        if in_fov(&o.state, sensor)? && rng.random::<f64>() < sensor.p_d {
            let n = Vector2::new(
                rng.sample::<f64, _>(rand_distr::StandardNormal),
                rng.sample::<f64, _>(rand_distr::StandardNormal),
            );
            tagged.push((o.state.position() + l * n, TruthTag::Object(o.id)));
        }
    }
    if clutter.expected_count > 0.0 {
        let poisson = Poisson::new(clutter.expected_count).map_err(|e| Error::Numerical(e.to_string()))?;
        let n = poisson.sample(rng) as usize;
        for _ in 0..n {
            tagged.push((sample_in_fov(sensor, rng), TruthTag::Clutter));
        }
    }
    tagged.shuffle(rng);
    let (returns, tags) = tagged.into_iter().unzip();
    Ok(MeasurementFrame {
        time,
        returns,
        truth_tag: Some(tags),
    })
}

/// Truth plus one frame per scan, fully determined by `cfg.seed`.
pub fn simulate(cfg: &ScenarioConfig) -> Result<(Truth, Vec<MeasurementFrame>)> {
    let truth = generate_truth(cfg)?;
    let mut r = rng::stream(cfg.seed, &[rng::STREAM_SENSE]);
    let frames = truth
        .times
        .iter()
        .zip(&truth.snapshots)
        .map(|(t, objs)| sense(*t, objs, &cfg.sensor, &cfg.clutter, &mut r))
        .collect::<Result<Vec<_>>>()?;
    Ok((truth, frames))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::position_in_fov;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            ScenarioConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(ScenarioConfig::preset("nope").is_none());
    }

    #[test]
    fn count_without_spawns_is_constant() {
        let mut cfg = ScenarioConfig::preset("twenty-object").unwrap();
        cfg.spawn_events.clear();
        let truth = generate_truth(&cfg).unwrap();
        assert!(truth.snapshots.iter().all(|s| s.len() == 20));
    }

    #[test]
    fn spawn_changes_count_once() {
        let cfg = ScenarioConfig::preset("twenty-object").unwrap();
        let truth = generate_truth(&cfg).unwrap();
        assert_eq!(truth.count_at(0), 20);
        assert_eq!(*truth.snapshots.last().map(|s| s.len()).as_ref().unwrap(), 22);
        let changes: Vec<usize> = truth
            .snapshots
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].len() != w[1].len())
            .map(|(i, w)| {
                assert_eq!(w[1].len(), w[0].len() + 2);
                i
            })
            .collect();
        assert_eq!(changes.len(), 1);
        let t = truth.times[changes[0] + 1];
        assert!(t >= 420.0 && t - 60.0 < 420.0);
    }

    #[test]
    fn fragments_share_parent_position_at_spawn() {
        let mut cfg = ScenarioConfig::preset("single-spawn").unwrap();
        cfg.spawn_events[0].time = 480.0;
        let truth = generate_truth(&cfg).unwrap();
        let k = truth.times.iter().position(|t| *t == 480.0).unwrap();
        let s = &truth.snapshots[k];
        assert_eq!(s.len(), 3);
        for o in s {
            assert!((o.state.position() - s[0].state.position()).norm() < 1e-9);
        }
        let expected = propagate_state_by(&cfg.objects[0], &cfg.dynamics, 480.0).unwrap();
        assert!((s[0].state.position() - expected.position()).norm() < 1e-6);
    }

    #[test]
    fn truth_is_deterministic() {
        let cfg = ScenarioConfig::preset("single-spawn").unwrap();
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    fn static_object() -> Vec<TruthObject> {
        vec![TruthObject {
            id: 0,
            state: StateVector::new(20_000.0, 0.0, 0.0, 0.0),
        }]
    }

    #[test]
    fn perfect_and_blind_sensors() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let s = SensorModel { p_d: 1.0, ..default_sensor() };
        let f = sense(0.0, &static_object(), &s, &ClutterModel::none(), &mut r).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.truth_tag.unwrap(), vec![TruthTag::Object(0)]);
        let s = SensorModel { p_d: 0.0, ..default_sensor() };
        assert!(sense(0.0, &static_object(), &s, &ClutterModel::none(), &mut r).unwrap().is_empty());
    }

    #[test]
    fn detection_frequency() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let s = default_sensor();
        let n = 10_000;
        let hits: usize = (0..n)
            .map(|_| sense(0.0, &static_object(), &s, &ClutterModel::none(), &mut r).unwrap().len())
            .sum();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.9).abs() < 0.01, "{freq}");
    }

    #[test]
    fn clutter_lands_in_fov() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let s = default_sensor();
        let c = ClutterModel::uniform(&s, 20.0);
        let mut total = 0;
        for _ in 0..200 {
            let f = sense(0.0, &[], &s, &c, &mut r).unwrap();
            total += f.len();
            for z in &f.returns {
                assert!(position_in_fov(z, &s).unwrap());
            }
        }
        let mean = total as f64 / 200.0;
        assert!((mean - 20.0).abs() < 1.5, "{mean}");
    }

    #[test]
    fn truth_tags_round_trip() {
        for t in [TruthTag::Clutter, TruthTag::Object(17)] {
            assert_eq!(t.to_string().parse::<TruthTag>().unwrap(), t);
        }
        assert!("x".parse::<TruthTag>().is_err());
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = ScenarioConfig::preset("single-spawn").unwrap();
        cfg.scan_interval = -1.0;
        match cfg.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "scan_interval"),
            other => panic!("{other:?}"),
        }
        let mut cfg = ScenarioConfig::preset("single-spawn").unwrap();
        cfg.spawn_events[0].fragments = 1;
        assert!(cfg.validate().is_err());
    }
}
