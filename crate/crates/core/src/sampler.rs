//! Metropolis random walk over association events.
//!
//! The chain state is an [`IndexedEvent`]: one matrix column per return and a
//! death flag per object. A proposal picks one of the `m + 1` matrix rows.
//! A return row moves to a uniformly chosen different column; if that object
//! is already claimed the other return falls back to clutter, and a dead
//! object that gets a return is revived. The DEATH row toggles the death flag
//! of one uniformly chosen object without a return. Acceptance is the plain
//! Metropolis rule on the unnormalized child score.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::hypothesis::{log_prior_from_counts, AssociationEvent, BirthDeathConfig};
use crate::likelihood::DataAssociationMatrix;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// `None` means `50 (m+1)(M+2)`.
    pub burn_in_steps: Option<usize>,
    /// `None` means `200 (m+1)(M+2)`.
    pub record_steps: Option<usize>,
    pub children_kept: usize,
    pub seed: u64,
    pub chains_per_parent: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in_steps: None,
            record_steps: None,
            children_kept: 10,
            seed: 0,
            chains_per_parent: 1,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.record_steps == Some(0) {
            return Err(invalid("sampler.record_steps", "must be >= 1"));
        }
        if self.children_kept == 0 {
            return Err(invalid("sampler.children_kept", "must be >= 1"));
        }
        if self.chains_per_parent == 0 {
            return Err(invalid("sampler.chains_per_parent", "must be >= 1"));
        }
        Ok(())
    }

    pub fn burn_in_for(&self, matrix: &DataAssociationMatrix) -> usize {
        self.burn_in_steps.unwrap_or(50 * matrix.nrows() * matrix.ncols())
    }

    pub fn record_for(&self, matrix: &DataAssociationMatrix) -> usize {
        self.record_steps.unwrap_or(200 * matrix.nrows() * matrix.ncols())
    }
}

/// Event in matrix coordinates. Ordering and hashing follow the canonical
/// encoding: columns in return order, then the death flags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexedEvent {
    pub cols: Vec<usize>,
    pub dead: Vec<bool>,
}

impl IndexedEvent {
    pub fn no_op(matrix: &DataAssociationMatrix) -> Self {
        Self {
            cols: vec![matrix.clutter_col(); matrix.returns()],
            dead: vec![false; matrix.objects().len()],
        }
    }

    pub fn to_event(&self, matrix: &DataAssociationMatrix) -> AssociationEvent {
        AssociationEvent {
            assignments: self.cols.iter().map(|c| matrix.column_label(*c)).collect(),
            deaths: self
                .dead
                .iter()
                .enumerate()
                .filter(|(_, d)| **d)
                .map(|(j, _)| matrix.objects()[j])
                .collect(),
        }
    }

    /// Inverse of [`IndexedEvent::to_event`]; `None` if a label has no column.
    pub fn from_event(event: &AssociationEvent, matrix: &DataAssociationMatrix) -> Option<Self> {
        let cols = event
            .assignments
            .iter()
            .map(|a| matrix.column_of(a))
            .collect::<Option<Vec<_>>>()?;
        let mut dead = vec![false; matrix.objects().len()];
        for l in &event.deaths {
            dead[matrix.objects().iter().position(|o| o == l)?] = true;
        }
        Some(Self { cols, dead })
    }

    /// No object claimed twice, no dead object detected, column indices in
    /// range.
    pub fn is_valid(&self, matrix: &DataAssociationMatrix) -> bool {
        let big_m = matrix.objects().len();
        if self.cols.len() != matrix.returns() || self.dead.len() != big_m {
            return false;
        }
        let mut claimed = vec![false; big_m];
        for &c in &self.cols {
            if c >= matrix.ncols() {
                return false;
            }
            if c < big_m {
                if claimed[c] || self.dead[c] {
                    return false;
                }
                claimed[c] = true;
            }
        }
        true
    }
}

/// Everything needed to score a child of one parent.
#[derive(Clone, Copy, Debug)]
pub struct ChildModel<'a> {
    pub matrix: &'a DataAssociationMatrix,
    pub birth_death: &'a BirthDeathConfig,
    pub p_d: f64,
}

impl ChildModel<'_> {
    /// `ln(child prior) + ln(likelihood)`.
    pub fn log_score(&self, e: &IndexedEvent) -> f64 {
        let big_m = self.matrix.objects().len();
        let birth = self.matrix.birth_col();
        let mut births = 0;
        let mut associated = 0;
        let mut log_l = 0.0;
        for (i, &c) in e.cols.iter().enumerate() {
            if c < big_m {
                associated += 1;
            } else if c == birth {
                births += 1;
            }
            log_l += self.matrix.log_entry(i, c);
        }
        let deaths = e.dead.iter().filter(|d| **d).count();
        let prior = log_prior_from_counts(
            births,
            deaths,
            big_m,
            associated,
            e.cols.len(),
            self.birth_death,
            self.p_d,
        );
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        prior + log_l
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub event: IndexedEvent,
    pub log_score: f64,
}

/// Uniform assignment of each return among the still unclaimed objects,
/// BIRTH and CLUTTER; births beyond the pixel count are sent to clutter.
pub fn init_chain<R: Rng + ?Sized>(model: &ChildModel, rng: &mut R) -> ChainState {
    let matrix = model.matrix;
    let big_m = matrix.objects().len();
    let mut claimed = vec![false; big_m];
    let mut cols = Vec::with_capacity(matrix.returns());
    let mut births = 0;
    for _ in 0..matrix.returns() {
        let free: Vec<usize> = (0..big_m).filter(|j| !claimed[*j]).collect();
        let pick = rng.random_range(0..free.len() + 2);
        let col = if pick < free.len() {
            claimed[free[pick]] = true;
            free[pick]
        } else if pick == free.len() {
            if births < model.birth_death.n_pixels {
                births += 1;
                matrix.birth_col()
            } else {
                matrix.clutter_col()
            }
        } else {
            matrix.clutter_col()
        };
        cols.push(col);
    }
    let event = IndexedEvent {
        cols,
        dead: vec![false; big_m],
    };
    let log_score = model.log_score(&event);
    ChainState { event, log_score }
}

/// Draws a candidate from the proposal described in the module docs.
pub fn propose<R: Rng + ?Sized>(state: &ChainState, model: &ChildModel, rng: &mut R) -> ChainState {
    let matrix = model.matrix;
    let big_m = matrix.objects().len();
    let m = matrix.returns();
    let mut e = state.event.clone();
    let row = rng.random_range(0..=m);
    if row < m {
        let current = e.cols[row];
        let mut col = rng.random_range(0..matrix.ncols() - 1);
        if col >= current {
            col += 1;
        }
        if col < big_m {
            e.dead[col] = false;
            if let Some(other) = e.cols.iter().position(|&c| c == col) {
                e.cols[other] = matrix.clutter_col();
            }
        }
        e.cols[row] = col;
    } else {
        let free: Vec<usize> = (0..big_m).filter(|j| !e.cols.contains(j)).collect();
        if !free.is_empty() {
            let j = free[rng.random_range(0..free.len())];
            e.dead[j] = !e.dead[j];
        }
    }
    let log_score = model.log_score(&e);
    ChainState { event: e, log_score }
}

/// Accept with probability `min(1, exp(candidate - current))`.
pub fn metropolis_accept<R: Rng + ?Sized>(current: f64, candidate: f64, rng: &mut R) -> bool {
    if candidate == f64::NEG_INFINITY {
        return false;
    }
    if current == f64::NEG_INFINITY || candidate >= current {
        return true;
    }
    rng.random::<f64>() < (candidate - current).exp()
}

pub fn metropolis_step<R: Rng + ?Sized>(state: ChainState, candidate: ChainState, rng: &mut R) -> ChainState {
    if metropolis_accept(state.log_score, candidate.log_score, rng) {
        candidate
    } else {
        state
    }
}

/// Score and record-phase visit count of one distinct event.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Visit {
    pub log_score: f64,
    pub visits: u64,
}

/// Runs one chain. Every occupied state is kept; visits are counted during
/// the record phase only.
pub fn run_chain<R: Rng + ?Sized>(
    model: &ChildModel,
    burn_in: usize,
    record: usize,
    rng: &mut R,
) -> HashMap<IndexedEvent, Visit> {
    let mut seen: HashMap<IndexedEvent, Visit> = HashMap::new();
    let mut state = init_chain(model, rng);
    seen.insert(
        state.event.clone(),
        Visit {
            log_score: state.log_score,
            visits: 0,
        },
    );
    for step in 0..burn_in + record {
        let candidate = propose(&state, model, rng);
        if metropolis_accept(state.log_score, candidate.log_score, rng) {
            state = candidate;
        }
        let visits = u64::from(step >= burn_in);
        match seen.get_mut(&state.event) {
            Some(v) => v.visits += visits,
            None => {
                seen.insert(
                    state.event.clone(),
                    Visit {
                        log_score: state.log_score,
                        visits,
                    },
                );
            }
        }
    }
    seen
}

/// Result of sampling the children of one parent.
#[derive(Clone, Debug)]
pub struct SampledChildren {
    /// Highest-scoring distinct events, best first.
    pub children: Vec<(IndexedEvent, f64)>,
    /// Every distinct occupied event across all chains, sorted by event.
    pub visited: Vec<(IndexedEvent, Visit)>,
}

impl SampledChildren {
    /// Empirical record-phase visit distribution.
    pub fn visit_distribution(&self) -> Vec<(IndexedEvent, f64)> {
        let total: u64 = self.visited.iter().map(|(_, v)| v.visits).sum();
        self.visited
            .iter()
            .filter(|(_, v)| v.visits > 0)
            .map(|(e, v)| (e.clone(), v.visits as f64 / total as f64))
            .collect()
    }
}

/// Runs `chains_per_parent` chains (in parallel) with streams derived from
/// `cfg.seed` and `stream`, merges them and keeps the best
/// `children_kept` events.
pub fn sample_children(model: &ChildModel, cfg: &SamplerConfig, stream: &[u64]) -> SampledChildren {
    let burn_in = cfg.burn_in_for(model.matrix);
    let record = cfg.record_for(model.matrix);
    let runs: Vec<HashMap<IndexedEvent, Visit>> = (0..cfg.chains_per_parent as u64)
        .into_par_iter()
        .map(|c| {
            let mut path = vec![rng::STREAM_SAMPLER];
            path.extend_from_slice(stream);
            path.push(c);
            let mut r = rng::stream(cfg.seed, &path);
            run_chain(model, burn_in, record, &mut r)
        })
        .collect();
    let mut merged: HashMap<IndexedEvent, Visit> = HashMap::new();
    for run in runs {
        for (e, v) in run {
            merged
                .entry(e)
                .and_modify(|w| w.visits += v.visits)
                .or_insert(v);
        }
    }
    let mut visited: Vec<(IndexedEvent, Visit)> = merged.into_iter().collect();
    visited.sort_by(|a, b| a.0.cmp(&b.0));
    let mut ranked: Vec<(IndexedEvent, f64)> = visited
        .iter()
        .filter(|(_, v)| v.log_score > f64::NEG_INFINITY)
        .map(|(e, v)| (e.clone(), v.log_score))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(cfg.children_kept);
    if ranked.is_empty() {
        // Every visited state has zero mass; hand back the no-op child so
        // the caller can detect the degenerate update.
        let e = IndexedEvent::no_op(model.matrix);
        let s = model.log_score(&e);
        ranked.push((e, s));
    }
    SampledChildren {
        children: ranked,
        visited,
    }
}

/// Exact proposal probabilities out of `start`. Outcomes reached by more
/// than one move are merged.
pub fn proposal_kernel(start: &IndexedEvent, matrix: &DataAssociationMatrix) -> BTreeMap<IndexedEvent, f64> {
    let big_m = matrix.objects().len();
    let rows = (start.cols.len() + 1) as f64;
    let mut out = BTreeMap::new();
    let p_col = 1.0 / (rows * (matrix.ncols() - 1) as f64);
    for row in 0..start.cols.len() {
        for col in 0..matrix.ncols() {
            if col == start.cols[row] {
                continue;
            }
            let mut e = start.clone();
            if col < big_m {
                e.dead[col] = false;
                if let Some(other) = e.cols.iter().position(|&c| c == col) {
                    e.cols[other] = matrix.clutter_col();
                }
            }
            e.cols[row] = col;
            *out.entry(e).or_insert(0.0) += p_col;
        }
    }
    let free: Vec<usize> = (0..big_m).filter(|j| !start.cols.contains(j)).collect();
    if free.is_empty() {
        *out.entry(start.clone()).or_insert(0.0) += 1.0 / rows;
    }
    for &j in &free {
        let mut e = start.clone();
        e.dead[j] = !e.dead[j];
        *out.entry(e).or_insert(0.0) += 1.0 / (rows * free.len() as f64);
    }
    out
}

/// All events reachable from `start` by one proposal.
pub fn proposal_support(start: &IndexedEvent, matrix: &DataAssociationMatrix) -> BTreeSet<IndexedEvent> {
    proposal_kernel(start, matrix).into_keys().collect()
}

/// Stationary distribution of the Metropolis chain started from `start`,
/// computed by power iteration on the exact transition kernel. Only states
/// with finite score reachable from `start` carry mass.
pub fn chain_stationary_distribution(
    model: &ChildModel,
    start: &IndexedEvent,
    iterations: usize,
) -> BTreeMap<IndexedEvent, f64> {
    let mut index: BTreeMap<IndexedEvent, usize> = BTreeMap::new();
    let mut states = vec![start.clone()];
    index.insert(start.clone(), 0);
    let mut transitions: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut k = 0;
    while k < states.len() {
        let from = states[k].clone();
        let score = model.log_score(&from);
        let mut row = Vec::new();
        let mut stay = 0.0;
        for (to, q) in proposal_kernel(&from, model.matrix) {
            let cand = model.log_score(&to);
            let a = if cand == f64::NEG_INFINITY {
                0.0
            } else if score == f64::NEG_INFINITY || cand >= score {
                1.0
            } else {
                (cand - score).exp()
            };
            stay += q * (1.0 - a);
            if a > 0.0 && to != from {
                let next = states.len();
                let j = *index.entry(to.clone()).or_insert_with(|| {
                    states.push(to);
                    next
                });
                row.push((j, q * a));
            } else if to == from {
                stay += q * a;
            }
        }
        row.push((k, stay));
        transitions.push(row);
        k += 1;
    }
    let mut pi = vec![1.0 / states.len() as f64; states.len()];
    for _ in 0..iterations {
        let mut next = vec![0.0; states.len()];
        for (i, row) in transitions.iter().enumerate() {
            for &(j, p) in row {
                next[j] += pi[i] * p;
            }
        }
        // Lazy step to rule out periodicity.
        for (p, n) in pi.iter_mut().zip(&next) {
            *p = 0.5 * (*p + n);
        }
    }
    states.into_iter().zip(pi).filter(|(s, _)| model.log_score(s).is_finite()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::{GaussianTrack, SensorModel, StateVector, TrackLabel};
    use crate::hypothesis::{Assignment, PriorMode};
    use crate::likelihood::{build_association, ClutterModel};
    use nalgebra::{Matrix2, Matrix4, Vector2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    fn sensor() -> SensorModel {
        SensorModel {
            origin: Vector2::zeros(),
            boresight_angle: 0.0,
            fov_half_angle: 0.5,
            max_range: 100.0,
            r: Matrix2::identity() * 0.25,
            p_d: 0.9,
        }
    }

    fn tracks(positions: &[(f64, f64)]) -> Vec<GaussianTrack> {
        positions
            .iter()
            .enumerate()
            .map(|(i, (x, y))| GaussianTrack::new(TrackLabel(i as u64 + 1), StateVector::new(*x, *y, 0.0, 0.0), Matrix4::identity()))
            .collect()
    }

    fn bd(n_pixels: usize) -> BirthDeathConfig {
        BirthDeathConfig {
            alpha: 0.05,
            beta: 0.05,
            n_pixels,
            mode: PriorMode::Unnormalized,
        }
    }

    fn matrix(positions: &[(f64, f64)], zs: &[(f64, f64)]) -> DataAssociationMatrix {
        let zs: Vec<Vector2<f64>> = zs.iter().map(|(x, y)| Vector2::new(*x, *y)).collect();
        build_association(&tracks(positions), &zs, &sensor(), &ClutterModel::uniform(&sensor(), 1.0))
            .unwrap()
            .matrix
    }

    #[test]
    fn empty_frame_init() {
        let m = matrix(&[(50.0, 0.0)], &[]);
        let cfg = bd(1);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        let s = init_chain(&model, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(s.event.cols.is_empty());
        assert_eq!(s.event.dead, vec![false]);
        assert!((s.log_score - 0.1f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn init_without_objects_uses_birth_or_clutter() {
        let m = matrix(&[], &[(50.0, 0.0), (60.0, 1.0), (40.0, -1.0)]);
        let cfg = bd(3);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        for seed in 0..50 {
            let s = init_chain(&model, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(s.event.cols.iter().all(|c| *c == 0 || *c == 1));
        }
        let a = init_chain(&model, &mut ChaCha8Rng::seed_from_u64(5));
        let b = init_chain(&model, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn single_pair_proposal_support() {
        let m = matrix(&[(50.0, 0.0)], &[(50.0, 0.0)]);
        let start = IndexedEvent { cols: vec![0], dead: vec![false] };
        let support = proposal_support(&start, &m);
        let expected: BTreeSet<IndexedEvent> = [
            IndexedEvent { cols: vec![1], dead: vec![false] },
            IndexedEvent { cols: vec![2], dead: vec![false] },
            start.clone(),
        ]
        .into_iter()
        .collect();
        // From z1 -> T1 the return row moves to B or C; the DEATH row has no
        // unassociated object and leaves the state unchanged.
        assert_eq!(support, expected);
    }

    #[test]
    fn conflict_goes_to_clutter() {
        let m = matrix(&[(50.0, 0.0), (55.0, 0.0), (60.0, 0.0)], &[(50.0, 0.0), (60.0, 0.0)]);
        let state = IndexedEvent { cols: vec![2, 4], dead: vec![false; 3] };
        let support = proposal_support(&state, &m);
        let target = IndexedEvent { cols: vec![4, 2], dead: vec![false; 3] };
        assert!(support.contains(&target));
        let e = target.to_event(&m);
        assert_eq!(e.assignments, vec![Assignment::Clutter, Assignment::Object(TrackLabel(3))]);
    }

    #[test]
    fn proposals_stay_valid() {
        let m = matrix(&[(50.0, 0.0), (55.0, 0.0), (60.0, 0.0)], &[(50.0, 0.0), (60.0, 0.0), (58.0, 1.0)]);
        let cfg = bd(2);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = init_chain(&model, &mut rng);
        for _ in 0..100_000 {
            let c = propose(&state, &model, &mut rng);
            assert!(c.event.is_valid(&m));
            assert_eq!(c.log_score, model.log_score(&c.event));
            // Walk through the raw proposal chain to cover more states.
            state = c;
        }
    }

    #[test]
    fn proposal_graph_is_strongly_connected() {
        for (big_m, m) in [(0, 1), (1, 1), (2, 2), (3, 1), (2, 3), (3, 3)] {
            let positions: Vec<(f64, f64)> = (0..big_m).map(|i| (40.0 + i as f64, 0.0)).collect();
            let zs: Vec<(f64, f64)> = (0..m).map(|i| (40.0 + i as f64, 1.0)).collect();
            let mx = matrix(&positions, &zs);
            let start = IndexedEvent::no_op(&mx);
            let reach = |from: &IndexedEvent| {
                let mut seen = BTreeSet::from([from.clone()]);
                let mut queue = VecDeque::from([from.clone()]);
                while let Some(e) = queue.pop_front() {
                    for n in proposal_support(&e, &mx) {
                        if seen.insert(n.clone()) {
                            queue.push_back(n);
                        }
                    }
                }
                seen
            };
            let all = reach(&start);
            assert!(all.iter().all(|e| e.is_valid(&mx)));
            for e in &all {
                assert!(reach(e).contains(&start), "M={big_m} m={m}: {e:?} cannot return");
            }
            // Size of the valid event space with unlimited births.
            let mut expected = 0u64;
            for k in 0..=big_m.min(m) {
                let ways = (0..k).map(|i| ((big_m - i) * (m - i)) as u64).product::<u64>() / (1..=k as u64).product::<u64>();
                expected += ways * 2u64.pow((m - k) as u32) * 2u64.pow((big_m - k) as u32);
            }
            assert_eq!(all.len() as u64, expected);
        }
    }

    #[test]
    fn metropolis_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(metropolis_accept(-5.0, -1.0, &mut rng));
        assert!(!metropolis_accept(-5.0, f64::NEG_INFINITY, &mut rng));
        assert!(metropolis_accept(f64::NEG_INFINITY, -100.0, &mut rng));
        let n = 100_000;
        let accepted = (0..n).filter(|_| metropolis_accept(0.0, 0.5f64.ln(), &mut rng)).count();
        let freq = accepted as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn zero_returns_give_single_no_op() {
        let m = matrix(&[], &[]);
        let cfg = bd(1);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        let out = sample_children(&model, &SamplerConfig::default(), &[0]);
        assert_eq!(out.children.len(), 1);
        assert_eq!(out.children[0].1, 0.0);
    }

    #[test]
    fn dominant_child_is_found() {
        let m = matrix(&[(30.0, 0.0), (80.0, 10.0)], &[(80.0, 10.0)]);
        let cfg = bd(1);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        let sc = SamplerConfig { children_kept: 1, ..Default::default() };
        let out = sample_children(&model, &sc, &[0]);
        assert_eq!(out.children[0].0.to_event(&m).assignments, vec![Assignment::Object(TrackLabel(2))]);
        assert!(out.children[0].0.dead.iter().all(|d| !d));
    }

    #[test]
    fn sampling_is_deterministic() {
        let m = matrix(&[(50.0, 0.0), (52.0, 0.0)], &[(50.5, 0.0), (51.5, 0.0)]);
        let cfg = bd(1);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        let sc = SamplerConfig { chains_per_parent: 3, seed: 9, ..Default::default() };
        let a = sample_children(&model, &sc, &[4, 2]);
        let b = sample_children(&model, &sc, &[4, 2]);
        assert_eq!(a.children, b.children);
        assert_eq!(a.visited, b.visited);
        for (e, s) in &a.children {
            assert_eq!(*s, model.log_score(e));
        }
    }

    #[test]
    fn proposal_kernel_matches_propose() {
        let m = matrix(&[(50.0, 0.0), (52.0, 0.0)], &[(50.5, 0.0), (51.5, 0.0)]);
        let cfg = bd(1);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        let start = IndexedEvent { cols: vec![0, 2], dead: vec![false, true] };
        let kernel = proposal_kernel(&start, &m);
        assert!((kernel.values().sum::<f64>() - 1.0).abs() < 1e-12);
        let state = ChainState { log_score: model.log_score(&start), event: start };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mut counts: BTreeMap<IndexedEvent, f64> = BTreeMap::new();
        for _ in 0..n {
            *counts.entry(propose(&state, &model, &mut rng).event).or_insert(0.0) += 1.0 / n as f64;
        }
        assert_eq!(counts.keys().collect::<Vec<_>>(), kernel.keys().collect::<Vec<_>>());
        for (e, p) in &kernel {
            assert!((counts[e] - p).abs() < 0.005, "{e:?}: {} vs {p}", counts[e]);
        }
    }

    #[test]
    fn visits_converge_to_chain_stationary_law() {
        let m = matrix(&[(50.0, 0.0), (51.0, 0.0)], &[(50.4, 1.5), (50.6, -1.5)]);
        let cfg = BirthDeathConfig { alpha: 0.3, beta: 0.3, ..bd(1) };
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.6 };
        let sc = SamplerConfig { record_steps: Some(250_000), chains_per_parent: 16, seed: 3, ..Default::default() };
        let out = sample_children(&model, &sc, &[0]);
        let visits: BTreeMap<IndexedEvent, f64> = out.visit_distribution().into_iter().collect();
        let pi = chain_stationary_distribution(&model, &IndexedEvent::no_op(&m), 5000);
        assert!((pi.values().sum::<f64>() - 1.0).abs() < 1e-9);
        let tv = 0.5
            * pi.keys()
                .chain(visits.keys())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .map(|e| (pi.get(e).unwrap_or(&0.0) - visits.get(e).unwrap_or(&0.0)).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "{tv}");
    }
}
