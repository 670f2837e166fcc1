//! Brute-force enumeration for small instances.
//!
//! Two enumerations are provided. [`enumerate_grandchildren`] walks the full
//! grandchild tree: a birth instance (subset of pixels), a death instance
//! (subset of objects) and an association of every surviving or newborn
//! object with the returns. Its length is what the closed-form counts
//! describe. [`enumerate_events`] lists the distinct observable
//! [`AssociationEvent`]s that the tracker scores, and [`exact_posterior`]
//! normalizes them with a prior computed independently of the sampler.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::combinatorics::count_grandchildren;
use crate::error::{Error, Result};
use crate::filter::TrackLabel;
use crate::hypothesis::{Assignment, AssociationEvent, BirthDeathConfig, PriorMode};
use crate::likelihood::DataAssociationMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationLimit {
    pub max_objects: usize,
    pub max_returns: usize,
    pub max_pixels: usize,
    pub max_grandchildren: u64,
}

impl Default for EnumerationLimit {
    fn default() -> Self {
        Self {
            max_objects: 12,
            max_returns: 12,
            max_pixels: 12,
            max_grandchildren: 10_000_000,
        }
    }
}

impl EnumerationLimit {
    fn check(&self, objects: usize, returns: usize, pixels: usize, count: BigUint) -> Result<()> {
        if objects > self.max_objects || returns > self.max_returns || pixels > self.max_pixels {
            return Err(Error::LimitExceeded(format!(
                "instance (M={objects}, m={returns}, N={pixels}) exceeds ({}, {}, {})",
                self.max_objects, self.max_returns, self.max_pixels
            )));
        }
        if count > BigUint::from(self.max_grandchildren) {
            return Err(Error::LimitExceeded(format!(
                "{count} items exceed the limit of {}",
                self.max_grandchildren
            )));
        }
        Ok(())
    }
}

/// Where a return goes in the full grandchild tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    Object(TrackLabel),
    /// Newborn object from the given pixel.
    Newborn(usize),
    Clutter,
}

/// One leaf of the grandchild tree.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Grandchild {
    pub birth_pixels: BTreeSet<usize>,
    pub deaths: BTreeSet<TrackLabel>,
    pub targets: Vec<Target>,
}

impl Grandchild {
    /// Projection onto the observable event: newborn identities collapse to
    /// BIRTH and undetected newborns disappear.
    pub fn to_event(&self) -> AssociationEvent {
        AssociationEvent {
            assignments: self
                .targets
                .iter()
                .map(|t| match t {
                    Target::Object(l) => Assignment::Object(*l),
                    Target::Newborn(_) => Assignment::Birth,
                    Target::Clutter => Assignment::Clutter,
                })
                .collect(),
            deaths: self.deaths.clone(),
        }
    }
}

fn subsets<T: Copy + Ord>(items: &[T]) -> Vec<BTreeSet<T>> {
    (0u64..1 << items.len())
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, x)| *x)
                .collect()
        })
        .collect()
}

/// Every injective partial map from `returns` returns into `targets`,
/// unmatched returns going to clutter.
fn injections(targets: &[Target], returns: usize, out: &mut Vec<Vec<Target>>) {
    fn rec(i: usize, returns: usize, targets: &[Target], used: &mut [bool], cur: &mut Vec<Target>, out: &mut Vec<Vec<Target>>) {
        if i == returns {
            out.push(cur.clone());
            return;
        }
        cur.push(Target::Clutter);
        rec(i + 1, returns, targets, used, cur, out);
        cur.pop();
        for (j, t) in targets.iter().enumerate() {
            if !used[j] {
                used[j] = true;
                cur.push(*t);
                rec(i + 1, returns, targets, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    rec(0, returns, targets, &mut vec![false; targets.len()], &mut Vec::new(), out);
}

/// Lists the grandchild tree of a hypothesis with `objects` for `returns`
/// returns and `pixels` birth pixels.
pub fn enumerate_grandchildren(
    objects: &[TrackLabel],
    returns: usize,
    pixels: usize,
    limit: &EnumerationLimit,
) -> Result<Vec<Grandchild>> {
    limit.check(objects.len(), returns, pixels, count_grandchildren(objects.len(), returns, pixels))?;
    let pixel_ids: Vec<usize> = (0..pixels).collect();
    let mut out = Vec::new();
    for birth_pixels in subsets(&pixel_ids) {
        for deaths in subsets(objects) {
            let targets: Vec<Target> = objects
                .iter()
                .filter(|l| !deaths.contains(l))
                .map(|l| Target::Object(*l))
                .chain(birth_pixels.iter().map(|p| Target::Newborn(*p)))
                .collect();
            let mut maps = Vec::new();
            injections(&targets, returns, &mut maps);
            out.extend(maps.into_iter().map(|targets| Grandchild {
                birth_pixels: birth_pixels.clone(),
                deaths: deaths.clone(),
                targets,
            }));
        }
    }
    Ok(out)
}

/// Distinct observable events: an injective partial map of returns onto
/// `associable`, each other return to BIRTH (at most `pixels` of them) or
/// CLUTTER, and any subset of the unassociated objects dead.
pub fn enumerate_events(
    associable: &[TrackLabel],
    returns: usize,
    pixels: usize,
    limit: &EnumerationLimit,
) -> Result<Vec<AssociationEvent>> {
    limit.check(associable.len(), returns, pixels, count_grandchildren(associable.len(), returns, pixels))?;
    let mut out = Vec::new();
    // BIRTH is a non-exclusive target, capped at `pixels` uses.
    fn rec(
        i: usize,
        returns: usize,
        associable: &[TrackLabel],
        pixels: usize,
        cur: &mut Vec<Assignment>,
        births: usize,
        out: &mut Vec<Vec<Assignment>>,
    ) {
        if i == returns {
            out.push(cur.clone());
            return;
        }
        cur.push(Assignment::Clutter);
        rec(i + 1, returns, associable, pixels, cur, births, out);
        cur.pop();
        if births < pixels {
            cur.push(Assignment::Birth);
            rec(i + 1, returns, associable, pixels, cur, births + 1, out);
            cur.pop();
        }
        for l in associable {
            let a = Assignment::Object(*l);
            if !cur.contains(&a) {
                cur.push(a);
                rec(i + 1, returns, associable, pixels, cur, births, out);
                cur.pop();
            }
        }
    }
    let mut assignments = Vec::new();
    rec(0, returns, associable, pixels, &mut Vec::new(), 0, &mut assignments);
    for a in assignments {
        let free: Vec<TrackLabel> = associable
            .iter()
            .filter(|l| !a.contains(&Assignment::Object(**l)))
            .copied()
            .collect();
        for deaths in subsets(&free) {
            out.push(AssociationEvent {
                assignments: a.clone(),
                deaths,
            });
        }
    }
    Ok(out)
}

/// Linear-space child prior written out term by term.
fn prior_linear(event: &AssociationEvent, objects: usize, cfg: &BirthDeathConfig, p_d: f64) -> f64 {
    let nb = event.assignments.iter().filter(|a| **a == Assignment::Birth).count();
    let nd = event.deaths.len();
    let k_obj = event
        .assignments
        .iter()
        .filter(|a| matches!(a, Assignment::Object(_)))
        .count();
    let m = event.assignments.len();
    let mut p = cfg.alpha.powi(nb as i32) * cfg.beta.powi(nd as i32);
    if cfg.mode == PriorMode::Normalized {
        p *= (1.0 - cfg.alpha).powi((cfg.n_pixels - nb) as i32) * (1.0 - cfg.beta).powi((objects - nd) as i32);
    }
    let survivors = objects + nb - nd;
    let detected = k_obj + nb;
    let mut assoc = p_d.powi(detected as i32) * (1.0 - p_d).powi((survivors - detected) as i32);
    for i in 0..detected {
        assoc /= (m - i) as f64;
    }
    p * assoc
}

/// Exact normalized posterior over every observable child of one parent
/// whose associable objects are the matrix columns.
pub fn exact_posterior(
    matrix: &DataAssociationMatrix,
    cfg: &BirthDeathConfig,
    p_d: f64,
    limit: &EnumerationLimit,
) -> Result<Vec<(AssociationEvent, f64)>> {
    let objects = matrix.objects();
    let events = enumerate_events(objects, matrix.returns(), cfg.n_pixels, limit)?;
    let mut scored = Vec::with_capacity(events.len());
    for e in events {
        let mut l = prior_linear(&e, objects.len(), cfg, p_d);
        for (i, a) in e.assignments.iter().enumerate() {
            let col = match a {
                Assignment::Object(lab) => objects.iter().position(|o| o == lab).expect("enumerated label"),
                Assignment::Birth => objects.len(),
                Assignment::Clutter => objects.len() + 1,
            };
            l *= matrix.log_entry(i, col).exp();
        }
        scored.push((e, l));
    }
    let total: f64 = scored.iter().map(|(_, w)| w).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateUpdate);
    }
    for (_, w) in &mut scored {
        *w /= total;
    }
    Ok(scored)
}

/// `0.5 * sum |p - q|` over the union of keys.
pub fn tv_distance<K: Ord + Clone>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let keys: BTreeSet<&K> = p.keys().chain(q.keys()).collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}
