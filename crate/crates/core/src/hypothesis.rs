//! Hypotheses, association events and the discrete half of the recursion:
//! transition priors, the Bayes weight update and pruning.
//!
//! Weights are carried as natural logarithms throughout. A child's prior is
//! the product of a birth/death instance probability and a data-association
//! probability `p_D^k (1-p_D)^(M-k) / (C(m,k) k!)`, where the division by the
//! number of ways of placing `k` detections among `m` returns makes the
//! association prior sum to one over all children when `m >= M`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filter::{in_fov, GaussianTrack, SensorModel, TrackLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HypothesisId(pub u64);

impl fmt::Display for HypothesisId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "H{}", self.0)
    }
}

/// One complete explanation of the data so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: HypothesisId,
    pub parent_id: Option<HypothesisId>,
    pub log_weight: f64,
    pub tracks: Vec<GaussianTrack>,
}

impl Hypothesis {
    pub fn new(id: HypothesisId, log_weight: f64, tracks: Vec<GaussianTrack>) -> Self {
        Self {
            id,
            parent_id: None,
            log_weight,
            tracks,
        }
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn labels(&self) -> Vec<TrackLabel> {
        self.tracks.iter().map(|t| t.label).collect()
    }

    pub fn has_unique_labels(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.tracks.len());
        self.tracks.iter().all(|t| seen.insert(t.label))
    }

    /// Labels of tracks whose mean lies inside the sensor FOV.
    pub fn labels_in_fov(&self, sensor: &SensorModel) -> Result<Vec<TrackLabel>> {
        let mut out = Vec::new();
        for t in &self.tracks {
            if in_fov(&t.mean, sensor)? {
                out.push(t.label);
            }
        }
        Ok(out)
    }
}

/// Where a single return is explained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Object(TrackLabel),
    Birth,
    Clutter,
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assignment::Object(l) => write!(f, "{l}"),
            Assignment::Birth => f.write_str("B"),
            Assignment::Clutter => f.write_str("C"),
        }
    }
}

/// Skeleton of one child hypothesis: an assignment per return in frame
/// order plus the set of objects that died.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssociationEvent {
    pub assignments: Vec<Assignment>,
    pub deaths: BTreeSet<TrackLabel>,
}

impl AssociationEvent {
    /// Every return to clutter, nobody dies.
    pub fn all_clutter(returns: usize) -> Self {
        Self {
            assignments: vec![Assignment::Clutter; returns],
            deaths: BTreeSet::new(),
        }
    }

    pub fn births(&self) -> usize {
        self.assignments.iter().filter(|a| **a == Assignment::Birth).count()
    }

    pub fn associated(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| matches!(a, Assignment::Object(_)))
            .count()
    }

    /// Checks the event against the labels that could be detected or die.
    pub fn validate(&self, associable: &[TrackLabel]) -> Result<()> {
        let known: HashSet<TrackLabel> = associable.iter().copied().collect();
        let mut claimed = HashSet::new();
        for a in &self.assignments {
            if let Assignment::Object(l) = a {
                if !known.contains(l) {
                    return Err(Error::InvalidEvent(format!("{l} is not an associable object")));
                }
                if self.deaths.contains(l) {
                    return Err(Error::InvalidEvent(format!("{l} is both dead and detected")));
                }
                if !claimed.insert(*l) {
                    return Err(Error::InvalidEvent(format!("{l} is claimed by two returns")));
                }
            }
        }
        if let Some(l) = self.deaths.iter().find(|l| !known.contains(l)) {
            return Err(Error::InvalidEvent(format!("dead object {l} is not associable")));
        }
        Ok(())
    }
}

impl fmt::Display for AssociationEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, a) in self.assignments.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(" | ")?;
        if self.deaths.is_empty() {
            f.write_str("N")?;
        } else {
            let d: Vec<String> = self.deaths.iter().map(|l| l.to_string()).collect();
            f.write_str(&d.join(","))?;
        }
        f.write_str("]")
    }
}

/// How the birth/death instance probability is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// `alpha^Nb * beta^Nd`.
    Unnormalized,
    /// Full binomial instance probability including the complement factors,
    /// summing to one over all instances.
    Normalized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathConfig {
    /// Birth probability per pixel per scan.
    pub alpha: f64,
    /// Death probability per in-FOV object per scan.
    pub beta: f64,
    pub n_pixels: usize,
    pub mode: PriorMode,
}

impl Default for BirthDeathConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 1e-3,
            n_pixels: 8,
            mode: PriorMode::Unnormalized,
        }
    }
}

impl BirthDeathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("birth_death.alpha", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(invalid("birth_death.beta", "must lie in [0, 1]"));
        }
        if self.n_pixels == 0 {
            return Err(invalid("birth_death.n_pixels", "must be >= 1"));
        }
        Ok(())
    }
}

/// `n * ln(base)` with `0 * ln(0) = 0`.
fn ln_pow(base: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 * base.ln()
    }
}

/// `ln(m! / (m-k)!)`, i.e. `ln(C(m,k) k!)`.
fn ln_falling(m: usize, k: usize) -> f64 {
    (0..k).map(|i| ((m - i) as f64).ln()).sum()
}

pub fn log_association_prior(objects: usize, returns: usize, k: usize, p_d: f64) -> Result<f64> {
    if k > objects.min(returns) {
        return Err(Error::OutOfRange(format!(
            "k = {k} exceeds min(M = {objects}, m = {returns})"
        )));
    }
    Ok(ln_pow(p_d, k) + ln_pow(1.0 - p_d, objects - k) - ln_falling(returns, k))
}

/// Prior of one data-association child in which `k` of `objects` objects are
/// detected among `returns` returns.
pub fn association_prior(objects: usize, returns: usize, k: usize, p_d: f64) -> Result<f64> {
    log_association_prior(objects, returns, k, p_d).map(f64::exp)
}

pub fn log_birth_death_prior(births: usize, deaths: usize, objects: usize, cfg: &BirthDeathConfig) -> Result<f64> {
    if births > cfg.n_pixels {
        return Err(Error::OutOfRange(format!(
            "{births} births exceed {} pixels",
            cfg.n_pixels
        )));
    }
    if deaths > objects {
        return Err(Error::OutOfRange(format!("{deaths} deaths exceed {objects} objects")));
    }
    let mut lp = ln_pow(cfg.alpha, births) + ln_pow(cfg.beta, deaths);
    if cfg.mode == PriorMode::Normalized {
        lp += ln_pow(1.0 - cfg.alpha, cfg.n_pixels - births) + ln_pow(1.0 - cfg.beta, objects - deaths);
    }
    Ok(lp)
}

/// Probability of one particular instance of `births` births and `deaths`
/// deaths starting from `objects` death-eligible objects.
pub fn birth_death_prior(births: usize, deaths: usize, objects: usize, cfg: &BirthDeathConfig) -> Result<f64> {
    log_birth_death_prior(births, deaths, objects, cfg).map(f64::exp)
}

/// Log prior of a child described by its counts. `eligible` is the number of
/// associable (in-FOV) objects of the parent, `associated` the number of
/// returns assigned to existing objects. Newborns are created from returns,
/// so they count as detected objects. Returns `-inf` for infeasible counts.
pub fn log_prior_from_counts(
    births: usize,
    deaths: usize,
    eligible: usize,
    associated: usize,
    returns: usize,
    cfg: &BirthDeathConfig,
    p_d: f64,
) -> f64 {
    if births > cfg.n_pixels || deaths + associated > eligible || births + associated > returns {
        return f64::NEG_INFINITY;
    }
    let bd = log_birth_death_prior(births, deaths, eligible, cfg).unwrap_or(f64::NEG_INFINITY);
    let objects_after = eligible + births - deaths;
    let detected = associated + births;
    let assoc = log_association_prior(objects_after, returns, detected, p_d).unwrap_or(f64::NEG_INFINITY);
    bd + assoc
}

/// Log transition prior of `event` from a parent whose associable objects
/// are `associable`.
pub fn log_child_prior(
    event: &AssociationEvent,
    associable: &[TrackLabel],
    cfg: &BirthDeathConfig,
    p_d: f64,
) -> Result<f64> {
    event.validate(associable)?;
    let births = event.births();
    let deaths = event.deaths.len();
    let m = event.assignments.len();
    let bd = log_birth_death_prior(births, deaths, associable.len(), cfg)?;
    let assoc = log_association_prior(
        associable.len() + births - deaths,
        m,
        event.associated() + births,
        p_d,
    )?;
    Ok(bd + assoc)
}

/// Transition prior of `event` given a (predicted) parent hypothesis.
pub fn child_prior(
    event: &AssociationEvent,
    parent: &Hypothesis,
    cfg: &BirthDeathConfig,
    sensor: &SensorModel,
) -> Result<f64> {
    let associable = parent.labels_in_fov(sensor)?;
    log_child_prior(event, &associable, cfg, sensor.p_d).map(f64::exp)
}

/// `ln(sum(exp(x)))`, `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Bayes update over `(log prior weight, log likelihood)` pairs. Returns
/// normalized log posterior weights.
pub fn bayes_update_log(children: &[(f64, f64)]) -> Result<Vec<f64>> {
    let joint: Vec<f64> = children.iter().map(|(w, l)| w + l).collect();
    if joint.iter().any(|x| x.is_nan()) {
        return Err(Error::Numerical("NaN in weight update".into()));
    }
    let norm = log_sum_exp(joint.iter().copied());
    if !norm.is_finite() {
        return Err(Error::DegenerateUpdate);
    }
    Ok(joint.into_iter().map(|x| x - norm).collect())
}

/// Linear-space convenience wrapper around [`bayes_update_log`].
pub fn bayes_update_weights(children: &[(f64, f64)]) -> Result<Vec<f64>> {
    let logs: Vec<(f64, f64)> = children.iter().map(|(w, l)| (w.ln(), l.ln())).collect();
    Ok(bayes_update_log(&logs)?.into_iter().map(f64::exp).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    TopK,
    Sample,
}

/// Descending weight, ties broken by ascending id.
pub fn weight_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_weight
        .partial_cmp(&a.log_weight)
        .unwrap_or(Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

/// Keeps at most `h_inf` hypotheses and renormalizes. The result is sorted
/// by descending weight.
pub fn prune<R: Rng + ?Sized>(
    mut hypotheses: Vec<Hypothesis>,
    h_inf: usize,
    strategy: PruneStrategy,
    rng: &mut R,
) -> Vec<Hypothesis> {
    let h_inf = h_inf.max(1);
    if hypotheses.len() > h_inf {
        match strategy {
            PruneStrategy::TopK => {
                hypotheses.sort_by(weight_order);
                hypotheses.truncate(h_inf);
            }
            PruneStrategy::Sample => {
                let max = hypotheses.iter().map(|h| h.log_weight).fold(f64::NEG_INFINITY, f64::max);
                let chosen: Vec<usize> = {
                    let idx: Vec<usize> = (0..hypotheses.len()).collect();
                    match idx.choose_multiple_weighted(rng, h_inf, |&i| (hypotheses[i].log_weight - max).exp()) {
                        Ok(it) => it.copied().collect(),
                        Err(_) => {
                            hypotheses.sort_by(weight_order);
                            (0..h_inf).collect()
                        }
                    }
                };
                let mut keep = vec![false; hypotheses.len()];
                for i in chosen {
                    keep[i] = true;
                }
                let mut i = 0;
                hypotheses.retain(|_| {
                    let k = keep[i];
                    i += 1;
                    k
                });
            }
        }
    }
    hypotheses.sort_by(weight_order);
    let norm = log_sum_exp(hypotheses.iter().map(|h| h.log_weight));
    if norm.is_finite() {
        for h in &mut hypotheses {
            h.log_weight -= norm;
        }
    }
    hypotheses
}
