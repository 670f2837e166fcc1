//! The per-scan recursion.
//!
//! A step predicts every hypothesis, builds one data-association matrix per
//! parent over its in-FOV tracks, draws (or enumerates) children, normalizes
//! all children of all parents jointly, realizes the survivors of pruning
//! and reports the top hypothesis.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Vector2};
use num_bigint::BigUint;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::count_grandchildren_with;
use crate::error::{invalid, Error, Result};
use crate::filter::{in_fov, newborn_track, predict_track, DynamicsConfig, GaussianTrack, SensorModel, StateVector, TrackLabel};
use crate::hypothesis::{
    bayes_update_log, prune, AssociationEvent, BirthDeathConfig, Hypothesis, HypothesisId, PruneStrategy,
};
use crate::likelihood::{build_association, Association, ClutterModel};
use crate::oracle::{enumerate_events, EnumerationLimit};
use crate::rng;
use crate::sampler::{sample_children, ChildModel, IndexedEvent, SamplerConfig};
use crate::serde_helpers;
use crate::simulator::{MeasurementFrame, ScenarioConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    Mcmc,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub h_inf: usize,
    pub prune_strategy: PruneStrategy,
    pub sampler: SamplerConfig,
    pub birth_death: BirthDeathConfig,
    pub mode: TrackerMode,
    pub adapt_rates: bool,
    pub enumeration_limit: EnumerationLimit,
    /// Velocity std of the birth pdf around circular velocity, km/s.
    pub birth_velocity_std: f64,
    /// Initial track uncertainty for known objects.
    pub initial_position_std: f64,
    pub initial_velocity_std: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            h_inf: 20,
            prune_strategy: PruneStrategy::TopK,
            sampler: SamplerConfig::default(),
            birth_death: BirthDeathConfig::default(),
            mode: TrackerMode::Mcmc,
            adapt_rates: false,
            enumeration_limit: EnumerationLimit::default(),
            birth_velocity_std: 0.1,
            initial_position_std: 1.0,
            initial_velocity_std: 0.01,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h_inf == 0 {
            return Err(invalid("h_inf", "must be >= 1"));
        }
        self.sampler.validate()?;
        self.birth_death.validate()?;
        for (name, v) in [
            ("birth_velocity_std", self.birth_velocity_std),
            ("initial_position_std", self.initial_position_std),
            ("initial_velocity_std", self.initial_velocity_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Per-step birth/death rates from the ratio of returns to in-FOV objects.
pub fn adapt_birth_death_rates(returns: usize, objects_in_fov: usize, base: &BirthDeathConfig) -> BirthDeathConfig {
    let rho = returns as f64 / objects_in_fov.max(1) as f64;
    let inv_rho = objects_in_fov as f64 / returns.max(1) as f64;
    BirthDeathConfig {
        alpha: (base.alpha * rho.max(1.0)).clamp(1e-6, 0.5),
        beta: (base.beta * inv_rho.max(1.0)).clamp(1e-6, 0.5),
        ..*base
    }
}

/// Sum over hypotheses of the grandchild count over their in-FOV tracks.
/// Births are counted only when `alpha > 0` and deaths only when `beta > 0`.
pub fn hypothesis_count_bound(
    hypotheses: &[Hypothesis],
    returns: usize,
    cfg: &BirthDeathConfig,
    sensor: &SensorModel,
) -> Result<BigUint> {
    let pixels = if cfg.alpha > 0.0 { cfg.n_pixels } else { 0 };
    let mut total = BigUint::default();
    let mut cache: BTreeMap<usize, BigUint> = BTreeMap::new();
    for h in hypotheses {
        let m_i = h.labels_in_fov(sensor)?.len();
        let deaths = if cfg.beta > 0.0 { m_i } else { 0 };
        total += &*cache
            .entry(m_i)
            .or_insert_with(|| count_grandchildren_with(m_i, returns, pixels, deaths));
    }
    Ok(total)
}

/// Initial tracks for known objects, labeled `0..n` in order.
pub fn initial_tracks(objects: &[StateVector], position_std: f64, velocity_std: f64) -> Vec<GaussianTrack> {
    let (p, v) = (position_std * position_std, velocity_std * velocity_std);
    let cov = Matrix4::from_diagonal(&nalgebra::Vector4::new(p, p, v, v));
    objects
        .iter()
        .enumerate()
        .map(|(i, s)| GaussianTrack::new(TrackLabel(i as u64), *s, cov))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub label: TrackLabel,
    pub mean: StateVector,
    #[serde(with = "serde_helpers::mat4")]
    pub covariance: Matrix4<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerReport {
    pub scan: u64,
    pub time: f64,
    pub returns: usize,
    pub top_hypothesis_id: HypothesisId,
    pub top_weight: f64,
    pub estimated_count: usize,
    pub estimates: Vec<TrackEstimate>,
    pub weight_entropy: f64,
    pub hypothesis_count: usize,
    /// Decimal string; the value does not fit in 64 bits in general.
    pub hypothesis_count_bound: String,
    pub alpha: f64,
    pub beta: f64,
    /// True when every child had zero mass and the prior weights were kept.
    pub degenerate: bool,
}

impl TrackerReport {
    pub fn count_bound(&self) -> BigUint {
        self.hypothesis_count_bound.parse().unwrap_or_default()
    }
}

/// Child of one parent before realization.
struct Child {
    parent: usize,
    event: IndexedEvent,
    log_score: f64,
}

struct ParentWork {
    predicted: Hypothesis,
    /// Indices into `predicted.tracks` that are matrix columns.
    columns: Vec<usize>,
    association: Association,
}

#[derive(Clone, Debug)]
pub struct Tracker {
    config: TrackerConfig,
    sensor: SensorModel,
    dynamics: DynamicsConfig,
    clutter: ClutterModel,
    hypotheses: Vec<Hypothesis>,
    last_events: Vec<(HypothesisId, Option<AssociationEvent>)>,
    time: f64,
    scan: u64,
    next_label: u64,
    next_id: u64,
}

impl Tracker {
    /// One hypothesis holding `tracks` with weight 1 at time `t0`.
    pub fn new(
        config: TrackerConfig,
        sensor: SensorModel,
        dynamics: DynamicsConfig,
        clutter: ClutterModel,
        tracks: Vec<GaussianTrack>,
        t0: f64,
    ) -> Result<Self> {
        config.validate()?;
        sensor.validate()?;
        dynamics.validate()?;
        clutter.validate()?;
        let root = Hypothesis::new(HypothesisId(0), 0.0, tracks);
        if !root.has_unique_labels() {
            return Err(invalid("tracks", "labels must be unique"));
        }
        let next_label = root.tracks.iter().map(|t| t.label.0 + 1).max().unwrap_or(0);
        Ok(Self {
            config,
            sensor,
            dynamics,
            clutter,
            last_events: vec![(root.id, None)],
            hypotheses: vec![root],
            time: t0,
            scan: 0,
            next_label,
            next_id: 1,
        })
    }

    /// Tracker seeded with the scenario's initial objects.
    pub fn for_scenario(config: TrackerConfig, scenario: &ScenarioConfig) -> Result<Self> {
        let tracks = initial_tracks(&scenario.objects, config.initial_position_std, config.initial_velocity_std);
        Self::new(config, scenario.sensor, scenario.dynamics, scenario.clutter, tracks, 0.0)
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    /// Event that produced each current hypothesis (`None` for the root).
    pub fn last_events(&self) -> &[(HypothesisId, Option<AssociationEvent>)] {
        &self.last_events
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn top(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }

    fn predict(&self, dt: f64) -> Result<Vec<Hypothesis>> {
        let dynamics = DynamicsConfig { dt, ..self.dynamics };
        self.hypotheses
            .par_iter()
            .map(|h| {
                let tracks = h
                    .tracks
                    .iter()
                    .map(|t| predict_track(t, &dynamics))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Hypothesis { tracks, ..h.clone() })
            })
            .collect()
    }

    fn prepare(&self, predicted: Hypothesis, returns: &[Vector2<f64>]) -> Result<ParentWork> {
        let mut columns = Vec::new();
        for (i, t) in predicted.tracks.iter().enumerate() {
            if in_fov(&t.mean, &self.sensor)? {
                columns.push(i);
            }
        }
        let column_tracks: Vec<GaussianTrack> = columns.iter().map(|&i| predicted.tracks[i].clone()).collect();
        let association = build_association(&column_tracks, returns, &self.sensor, &self.clutter)?;
        Ok(ParentWork {
            predicted,
            columns,
            association,
        })
    }

    fn children(&self, parent: usize, work: &ParentWork, bd: &BirthDeathConfig) -> Result<Vec<Child>> {
        let matrix = &work.association.matrix;
        let model = ChildModel {
            matrix,
            birth_death: bd,
            p_d: self.sensor.p_d,
        };
        let scored: Vec<(IndexedEvent, f64)> = match self.config.mode {
            TrackerMode::Mcmc => sample_children(&model, &self.config.sampler, &[self.scan, parent as u64]).children,
            TrackerMode::Exhaustive => {
                let events = enumerate_events(matrix.objects(), matrix.returns(), bd.n_pixels, &self.config.enumeration_limit)?;
                events
                    .iter()
                    .map(|e| {
                        let ie = IndexedEvent::from_event(e, matrix).expect("enumerated over matrix columns");
                        let s = model.log_score(&ie);
                        (ie, s)
                    })
                    .filter(|(_, s)| *s > f64::NEG_INFINITY)
                    .collect()
            }
        };
        Ok(scored
            .into_iter()
            .map(|(event, log_score)| Child {
                parent,
                event,
                log_score,
            })
            .collect())
    }

    /// Applies deaths, updates and births. Newborns from return `i` get the
    /// provisional label `base + i`.
    fn realize(&self, work: &ParentWork, event: &IndexedEvent, returns: &[Vector2<f64>], base: u64) -> Vec<GaussianTrack> {
        let mut tracks = work.predicted.tracks.clone();
        let mut keep = vec![true; tracks.len()];
        for (c, &dead) in event.dead.iter().enumerate() {
            if dead {
                keep[work.columns[c]] = false;
            }
        }
        let big_m = work.columns.len();
        let mut newborns = Vec::new();
        for (i, &c) in event.cols.iter().enumerate() {
            if c < big_m {
                tracks[work.columns[c]] = work.association.update(i, c).track.clone();
            } else if c == big_m {
                newborns.push(newborn_track(
                    TrackLabel(base + i as u64),
                    &returns[i],
                    &self.sensor,
                    self.dynamics.mu,
                    self.config.birth_velocity_std,
                ));
            }
        }
        let mut out: Vec<GaussianTrack> = tracks
            .into_iter()
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|(t, _)| t)
            .collect();
        out.extend(newborns);
        out
    }

    /// Processes one frame. On error the tracker is left unchanged.
    pub fn step(&mut self, frame: &MeasurementFrame) -> Result<TrackerReport> {
        let dt = frame.time - self.time;
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(Error::OutOfRange(format!(
                "frame time {} precedes tracker time {}",
                frame.time, self.time
            )));
        }
        let returns = &frame.returns;
        let m = returns.len();
        let predicted = self.predict(dt)?;

        let bd = if self.config.adapt_rates {
            let in_view = predicted[0].labels_in_fov(&self.sensor)?.len();
            adapt_birth_death_rates(m, in_view, &self.config.birth_death)
        } else {
            self.config.birth_death
        };
        let bound = hypothesis_count_bound(&predicted, m, &bd, &self.sensor)?;

        let work: Vec<ParentWork> = predicted
            .into_iter()
            .map(|h| self.prepare(h, returns))
            .collect::<Result<_>>()?;
        let per_parent: Vec<Vec<Child>> = work
            .par_iter()
            .enumerate()
            .map(|(i, w)| self.children(i, w, &bd))
            .collect::<Result<_>>()?;
        let children: Vec<Child> = per_parent.into_iter().flatten().collect();

        let pairs: Vec<(f64, f64)> = children
            .iter()
            .map(|c| (work[c.parent].predicted.log_weight, c.log_score))
            .collect();
        let base = self.next_label;
        let (candidates, events, degenerate) = match bayes_update_log(&pairs) {
            Ok(posterior) => {
                let mut hyps = Vec::with_capacity(children.len());
                let mut events = Vec::with_capacity(children.len());
                for (k, (c, lw)) in children.iter().zip(posterior).enumerate() {
                    let w = &work[c.parent];
                    let id = HypothesisId(self.next_id + k as u64);
                    hyps.push(Hypothesis {
                        id,
                        parent_id: Some(w.predicted.id),
                        log_weight: lw,
                        tracks: self.realize(w, &c.event, returns, base),
                    });
                    events.push((id, c.event.to_event(&w.association.matrix)));
                }
                (hyps, events, false)
            }
            Err(Error::DegenerateUpdate) => {
                log::warn!("scan {}: every child has zero mass, keeping prior weights", self.scan);
                let hyps: Vec<Hypothesis> = work.iter().map(|w| w.predicted.clone()).collect();
                let events = hyps.iter().map(|h| (h.id, AssociationEvent::all_clutter(m))).collect();
                (hyps, events, true)
            }
            Err(e) => return Err(e),
        };
        let next_id = self.next_id + if degenerate { 0 } else { candidates.len() as u64 };

        let mut prune_rng = rng::stream(self.config.sampler.seed, &[rng::STREAM_PRUNE, self.scan]);
        let mut kept = prune(candidates, self.config.h_inf, self.config.prune_strategy, &mut prune_rng);

        // Compact the provisional newborn labels of the survivors.
        let mut used: Vec<u64> = kept
            .iter()
            .flat_map(|h| h.tracks.iter().map(|t| t.label.0))
            .filter(|l| *l >= base)
            .collect();
        used.sort_unstable();
        used.dedup();
        let remap: BTreeMap<u64, u64> = used.iter().enumerate().map(|(k, l)| (*l, base + k as u64)).collect();
        for h in &mut kept {
            for t in &mut h.tracks {
                if let Some(n) = remap.get(&t.label.0) {
                    t.label = TrackLabel(*n);
                }
            }
        }
        let mut events: BTreeMap<HypothesisId, AssociationEvent> = events.into_iter().collect();
        let last_events = kept
            .iter()
            .map(|h| (h.id, events.remove(&h.id)))
            .collect();

        self.hypotheses = kept;
        self.last_events = last_events;
        self.next_label = base + used.len() as u64;
        self.next_id = next_id;
        self.time = frame.time;
        let report = self.report(m, &bound, &bd, degenerate);
        self.scan += 1;
        Ok(report)
    }

    fn report(&self, returns: usize, bound: &BigUint, bd: &BirthDeathConfig, degenerate: bool) -> TrackerReport {
        let top = self.top();
        let weight_entropy = -self
            .hypotheses
            .iter()
            .map(|h| {
                let w = h.weight();
                if w > 0.0 {
                    w * h.log_weight
                } else {
                    0.0
                }
            })
            .sum::<f64>();
        TrackerReport {
            scan: self.scan,
            time: self.time,
            returns,
            top_hypothesis_id: top.id,
            top_weight: top.weight(),
            estimated_count: top.tracks.len(),
            estimates: top
                .tracks
                .iter()
                .map(|t| TrackEstimate {
                    label: t.label,
                    mean: t.mean,
                    covariance: t.covariance,
                })
                .collect(),
            weight_entropy,
            hypothesis_count: self.hypotheses.len(),
            hypothesis_count_bound: bound.to_string(),
            alpha: bd.alpha,
            beta: bd.beta,
            degenerate,
        }
    }
}
