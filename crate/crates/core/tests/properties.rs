//! Cross-module invariants as property tests.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix4, Vector2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spawntrack::combinatorics::count_associations;
use spawntrack::hypothesis::log_child_prior;
use spawntrack::likelihood::{build_association, hypothesis_likelihood};
use spawntrack::oracle::{enumerate_events, exact_posterior, EnumerationLimit};
use spawntrack::sampler::{init_chain, metropolis_step, propose, sample_children, ChildModel};
use spawntrack::simulator::{circular_orbit, default_sensor, simulate, SpawnEvent};
use spawntrack::{
    Assignment, AssociationEvent, BirthDeathConfig, ClutterModel, DataAssociationMatrix, DynamicsConfig,
    GaussianTrack, MeasurementFrame, PriorMode, SamplerConfig, ScenarioConfig, SensorModel, StateVector, TrackLabel,
    Tracker, TrackerConfig,
};

fn sensor(p_d: f64) -> SensorModel {
    SensorModel {
        origin: Vector2::zeros(),
        boresight_angle: 0.0,
        fov_half_angle: 0.5,
        max_range: 100.0,
        r: Matrix2::identity() * 0.4,
        p_d,
    }
}

fn tracks(positions: &[(f64, f64)]) -> Vec<GaussianTrack> {
    positions
        .iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let mut cov = Matrix4::identity() * 0.01;
            cov[(0, 0)] = 1.0;
            cov[(1, 1)] = 1.0;
            GaussianTrack::new(TrackLabel(10 + i as u64), StateVector::new(*x, *y, 0.0, 0.0), cov)
        })
        .collect()
}

fn matrix(positions: &[(f64, f64)], returns: &[(f64, f64)], p_d: f64) -> DataAssociationMatrix {
    let zs: Vec<Vector2<f64>> = returns.iter().map(|(x, y)| Vector2::new(*x, *y)).collect();
    let s = sensor(p_d);
    build_association(&tracks(positions), &zs, &s, &ClutterModel::uniform(&s, 1.0))
        .unwrap()
        .matrix
}

fn points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec((40.0f64..60.0, -5.0f64..5.0), 0..=max)
}

fn bd(alpha: f64, beta: f64, n_pixels: usize) -> BirthDeathConfig {
    BirthDeathConfig {
        alpha,
        beta,
        n_pixels,
        mode: PriorMode::Unnormalized,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_states_are_always_valid_events(
        objs in points(3),
        rets in points(3),
        seed in any::<u64>(),
        n_pixels in 1usize..3,
    ) {
        let m = matrix(&objs, &rets, 0.9);
        let cfg = bd(0.05, 0.05, n_pixels);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.9 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = init_chain(&model, &mut rng);
        for _ in 0..500 {
            let cand = propose(&state, &model, &mut rng);
            prop_assert!(cand.event.is_valid(&m));
            let ev = cand.event.to_event(&m);
            prop_assert!(ev.validate(m.objects()).is_ok());
            state = metropolis_step(state, cand, &mut rng);
            prop_assert!(state.log_score.is_finite());
        }
    }

    #[test]
    fn sampled_scores_match_a_fresh_recomputation(
        objs in points(3),
        rets in points(3),
        seed in any::<u64>(),
        alpha in 0.0f64..0.3,
        beta in 0.0f64..0.3,
    ) {
        let m = matrix(&objs, &rets, 0.85);
        let cfg = bd(alpha, beta, 2);
        let model = ChildModel { matrix: &m, birth_death: &cfg, p_d: 0.85 };
        let sc = SamplerConfig { record_steps: Some(300), seed, ..Default::default() };
        let out = sample_children(&model, &sc, &[0]);
        for (e, score) in &out.children {
            let ev = e.to_event(&m);
            let fresh = log_child_prior(&ev, m.objects(), &cfg, 0.85).unwrap() + hypothesis_likelihood(&ev, &m).unwrap();
            if fresh.is_finite() {
                prop_assert!(((score - fresh) / fresh.abs().max(1.0)).abs() <= 1e-12, "{score} vs {fresh}");
            } else {
                prop_assert_eq!(*score, fresh);
            }
        }
    }

    #[test]
    fn likelihood_is_invariant_under_return_permutation(
        objs in points(3),
        rets in points(4),
        pick in proptest::collection::vec(0usize..8, 4),
        rotate in 0usize..4,
    ) {
        let m = matrix(&objs, &rets, 0.9);
        let n = rets.len();
        // Build some valid event: return i tries object pick[i], else clutter.
        let mut used = vec![false; objs.len()];
        let assignments: Vec<Assignment> = (0..n)
            .map(|i| {
                let j = pick[i];
                if j < objs.len() && !used[j] {
                    used[j] = true;
                    Assignment::Object(m.objects()[j])
                } else if j % 2 == 0 {
                    Assignment::Birth
                } else {
                    Assignment::Clutter
                }
            })
            .collect();
        let event = AssociationEvent { assignments, deaths: Default::default() };
        let l = hypothesis_likelihood(&event, &m).unwrap();

        let k = if n == 0 { 0 } else { rotate % n };
        let mut rets_p = rets.clone();
        rets_p.rotate_left(k);
        let mut ev_p = event.clone();
        ev_p.assignments.rotate_left(k);
        let mp = matrix(&objs, &rets_p, 0.9);
        let lp = hypothesis_likelihood(&ev_p, &mp).unwrap();
        if l.is_finite() {
            prop_assert!((l - lp).abs() <= 1e-9 * l.abs().max(1.0));
        } else {
            prop_assert_eq!(l, lp);
        }
    }

    #[test]
    fn exact_posterior_is_covariant_under_object_relabeling(
        objs in points(2),
        rets in points(2),
    ) {
        let cfg = bd(0.05, 0.1, 1);
        let limit = EnumerationLimit::default();
        let m = matrix(&objs, &rets, 0.8);
        let mut rev = objs.clone();
        rev.reverse();
        let mr = matrix(&rev, &rets, 0.8);
        let n = objs.len();
        // Object at index j of `objs` sits at index n-1-j of `rev`.
        let relabel = |l: TrackLabel| TrackLabel(10 + (n as u64 - 1 - (l.0 - 10)));
        let a: BTreeMap<AssociationEvent, f64> = exact_posterior(&m, &cfg, 0.8, &limit).unwrap().into_iter().collect();
        let b: BTreeMap<AssociationEvent, f64> = exact_posterior(&mr, &cfg, 0.8, &limit).unwrap().into_iter().collect();
        prop_assert_eq!(a.len(), b.len());
        for (e, w) in &a {
            let mapped = AssociationEvent {
                assignments: e
                    .assignments
                    .iter()
                    .map(|x| match x {
                        Assignment::Object(l) => Assignment::Object(relabel(*l)),
                        other => *other,
                    })
                    .collect(),
                deaths: e.deaths.iter().map(|l| relabel(*l)).collect(),
            };
            let wb = b.get(&mapped).copied().unwrap_or(f64::NAN);
            prop_assert!((w - wb).abs() <= 1e-12, "{e}: {w} vs {wb}");
        }
    }

    #[test]
    fn tracker_weights_stay_normalized_and_labels_persist(
        frames in proptest::collection::vec(proptest::collection::vec((45.0f64..55.0, -3.0f64..3.0), 0..4), 1..5),
        seed in any::<u64>(),
    ) {
        let s = sensor(0.9);
        let dynamics = DynamicsConfig { mu: 0.0, dt: 1.0, ..DynamicsConfig::default() };
        let mut config = TrackerConfig { h_inf: 6, ..Default::default() };
        config.sampler.seed = seed;
        config.sampler.record_steps = Some(400);
        config.birth_death = bd(0.05, 0.05, 2);
        let mut tracker = Tracker::new(
            config,
            s,
            dynamics,
            ClutterModel::uniform(&s, 1.0),
            tracks(&[(48.0, 0.0), (52.0, 1.0)]),
            0.0,
        )
        .unwrap();
        for (k, rets) in frames.iter().enumerate() {
            let before: BTreeMap<_, _> = tracker.hypotheses().iter().map(|h| (h.id, h.labels())).collect();
            let frame = MeasurementFrame {
                time: (k + 1) as f64,
                returns: rets.iter().map(|(x, y)| Vector2::new(*x, *y)).collect(),
                truth_tag: None,
            };
            tracker.step(&frame).unwrap();
            let total: f64 = tracker.hypotheses().iter().map(|h| h.weight()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            for h in tracker.hypotheses() {
                prop_assert!(h.has_unique_labels());
                let parent = &before[&h.parent_id.unwrap()];
                let newborn_floor = before.values().flatten().map(|l| l.0).max().unwrap_or(0);
                for l in h.labels() {
                    // Every label is either inherited from the parent or fresh.
                    prop_assert!(parent.contains(&l) || l.0 > newborn_floor, "label {l:?}");
                }
            }
        }
    }

    #[test]
    fn object_count_changes_only_at_spawns(fragments in 2usize..5, spawn_scan in 1usize..6, seed in any::<u64>()) {
        let cfg = ScenarioConfig {
            objects: vec![circular_orbit(20_000.0, -0.3), circular_orbit(24_000.0, 0.1)],
            spawn_events: vec![SpawnEvent {
                time: 60.0 * spawn_scan as f64 - 10.0,
                parent: 1,
                fragments,
                velocity_std: 0.05,
            }],
            sensor: default_sensor(),
            clutter: ClutterModel::uniform(&default_sensor(), 0.5),
            dynamics: DynamicsConfig::default(),
            duration: 420.0,
            scan_interval: 60.0,
            seed,
        };
        let (truth, frames) = simulate(&cfg).unwrap();
        prop_assert_eq!(truth.times.len(), frames.len());
        for k in 0..truth.times.len() {
            let expected = if k < spawn_scan { 2 } else { 1 + fragments };
            prop_assert_eq!(truth.count_at(k), expected);
        }
    }
}

#[test]
fn association_count_matches_enumeration() {
    let limit = EnumerationLimit::default();
    let labels: Vec<TrackLabel> = (0..4).map(TrackLabel).collect();
    for big_m in 0..=4 {
        for m in 0..=4 {
            let n = enumerate_events(&labels[..big_m], m, 0, &limit)
                .unwrap()
                .into_iter()
                .filter(|e| e.deaths.is_empty())
                .count();
            assert_eq!(count_associations(big_m, m), n.into(), "M={big_m} m={m}");
        }
    }
}
