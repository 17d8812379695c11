mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use collab::classify::{
    classify_prototype, logreg_probs, plastic_update, prototype_distances, Belief, LogRegModel,
    PlasticModel, PLASTIC_EPSILON, SIGMA_FLOOR,
};
use collab::env::{observe, reset, shipped_layout, step, Action, EnvConfig, HeldItem, Station};
use collab::fingerprint::{
    discretize, feature_names, mutual_information, AbstractState, Fingerprint,
};
use collab::harness::{pareto_frontier, ParetoPoint};
use collab::policies::TeammateType;
use collab::retrieval::{cosine, embed_zscore, normalize, ZScoreStats};
use collab::rubric::{fmt3, rubric_to_text, FeatureStat, Prototype, Rubric};

use common::*;

const LAYOUTS: [&str; 3] = ["cramped_room", "asymmetric_advantage", "coordination_ring"];

fn action() -> impl Strategy<Value = Action> {
    (0usize..6).prop_map(|i| Action::ALL[i])
}

fn fingerprint() -> impl Strategy<Value = Fingerprint> {
    let m = feature_names().len();
    prop::collection::vec(0u8..8, m).prop_map(|vals| Fingerprint {
        features: feature_names()
            .into_iter()
            .zip(vals)
            .map(|(n, v)| (n, v as f64 * 0.25))
            .collect(),
        probe_length: 20,
    })
}

fn points() -> impl Strategy<Value = Vec<ParetoPoint>> {
    prop::collection::vec((0u8..10, 0u8..10), 1..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (a, r))| ParetoPoint {
                label: format!("p{i}"),
                accuracy: a as f64 / 10.0,
                ret: r as f64 * 20.0,
            })
            .collect()
    })
}

fn rubric() -> impl Strategy<Value = Rubric> {
    let names = feature_names();
    prop::collection::vec(prop::collection::vec((0u8..40, 0u8..10), 4), NUM_TYPES).prop_map(
        move |rows| Rubric {
            schema_version: 1,
            layout: None,
            probe_length: 20,
            selected_features: names[..4].to_vec(),
            prototypes: rows
                .into_iter()
                .enumerate()
                .map(|(t, row)| Prototype {
                    teammate_type: TeammateType::ALL[t],
                    episodes: 10,
                    stats: row
                        .into_iter()
                        .enumerate()
                        .map(|(j, (m, s))| FeatureStat {
                            feature: names[j].clone(),
                            mean: m as f64 / 4.0,
                            std: s as f64 / 8.0,
                        })
                        .collect(),
                })
                .collect(),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn env_invariants_hold_under_any_actions(
        layout in 0usize..3,
        acts in prop::collection::vec((action(), action()), 1..400),
    ) {
        let cfg = EnvConfig::default();
        let mut state = reset(shipped_layout(LAYOUTS[layout]).unwrap(), &cfg, 1);
        let (mut ret, mut deliveries) = (0.0, 0u32);
        for (a, b) in acts {
            let out = step(&state, [a, b], &cfg).unwrap();
            prop_assert_eq!(out.state.t, state.t + 1);
            for (i, ev) in out.events.iter().enumerate() {
                if ev.delivered {
                    prop_assert_eq!(state.agents[i].held, HeldItem::Soup);
                    prop_assert!(out.reward > 0.0);
                }
            }
            ret += out.reward;
            deliveries += out.events.iter().filter(|e| e.delivered).count() as u32;
            if let Err(e) = check_state(&out.state, cfg.cook_time) {
                prop_assert!(false, "{}", e);
            }
            state = out.state;
        }
        prop_assert_eq!(ret, cfg.reward_per_delivery * deliveries as f64);
    }

    #[test]
    fn observations_round_trip_through_json(
        layout in 0usize..3,
        acts in prop::collection::vec((action(), action()), 0..60),
    ) {
        let cfg = EnvConfig::default();
        let mut state = reset(shipped_layout(LAYOUTS[layout]).unwrap(), &cfg, 2);
        for (a, b) in acts {
            state = step(&state, [a, b], &cfg).unwrap().state;
        }
        for agent in 0..2 {
            let obs = observe(&state, agent);
            let text = serde_json::to_string(&obs).unwrap();
            let back: collab::env::Observation = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(back, obs);
        }
    }

    #[test]
    fn discretize_is_monotone_and_bounded(
        values in prop::collection::vec(0u8..20, 1..80),
        bins in 2usize..12,
    ) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let b = discretize(&v, bins);
        prop_assert_eq!(&b, &bins_oracle(&v, bins));
        for i in 0..v.len() {
            prop_assert!(b[i] < bins);
            for j in 0..v.len() {
                if v[i] <= v[j] {
                    prop_assert!(b[i] <= b[j]);
                }
            }
        }
    }

    #[test]
    fn mutual_information_matches_oracle_and_is_symmetric(
        pairs in prop::collection::vec((0usize..8, 0usize..5), 1..150),
    ) {
        let (x, y): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let mi = mutual_information(&x, &y);
        prop_assert!((mi - mi_oracle(&x, &y)).abs() <= 1e-12);
        prop_assert!((mi - mutual_information(&y, &x)).abs() <= 1e-12);
        prop_assert!(mi >= 0.0);
        prop_assert!(mi <= 5f64.ln() + 1e-12);
    }

    #[test]
    fn embeddings_have_unit_norm(fp in fingerprint(), others in prop::collection::vec(fingerprint(), 1..10)) {
        let refs: Vec<&Fingerprint> = others.iter().collect();
        let stats = ZScoreStats::fit(&refs).unwrap();
        let e = embed_zscore(&fp, &stats).unwrap();
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-6);
        prop_assert_eq!(e.clone(), embed_zscore(&fp.clone(), &stats).unwrap());
    }

    #[test]
    fn cosine_is_symmetric_and_bounded(
        u in prop::collection::vec(-5i8..5, 3),
        v in prop::collection::vec(-5i8..5, 3),
    ) {
        let u: Vec<f64> = u.into_iter().map(f64::from).collect();
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        prop_assume!(u.iter().any(|x| *x != 0.0) && v.iter().any(|x| *x != 0.0));
        let c = cosine(&u, &v).unwrap();
        prop_assert_eq!(c, cosine(&v, &u).unwrap());
        prop_assert!((-1.0..=1.0).contains(&c));
        prop_assert!((cosine(&u, &u).unwrap() - 1.0).abs() <= 1e-12);
        let scaled: Vec<f64> = u.iter().map(|x| x * 3.5).collect();
        prop_assert!((cosine(&scaled, &v).unwrap() - c).abs() <= 1e-12);
        let n = normalize(u.clone());
        prop_assert!((n.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn topk_matches_full_sort(
        emb in prop::collection::vec(prop::collection::vec(-3i8..3, 4), 1..50),
        q in prop::collection::vec(-3i8..3, 4),
        k in 1usize..60,
    ) {
        let fix = |v: Vec<i8>| -> Vec<f64> {
            if v.iter().all(|x| *x == 0) { vec![1.0, 0.0, 0.0, 0.0] } else { v.into_iter().map(f64::from).collect() }
        };
        let emb: Vec<Vec<f64>> = emb.into_iter().map(fix).collect();
        let q = fix(q);
        let db = db_of(&emb);
        let got: Vec<String> = db.topk(&q, k).unwrap().iter().map(|(r, _)| r.id.clone()).collect();
        let want: Vec<String> = brute_topk(&emb, &q, k).iter().map(|(i, _)| format!("r{i}")).collect();
        prop_assert_eq!(got.len(), k.min(emb.len()));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn belief_stays_normalized(
        steps in prop::collection::vec((0usize..4, 0usize..4, 0usize..6), 1..300),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let likelihood = (0..NUM_TYPES)
            .map(|_| {
                (0..AbstractState::COUNT)
                    .map(|_| {
                        let mut row = [0.0; 6];
                        row[rng.gen_range(0..6)] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        let model = PlasticModel { likelihood, epsilon: PLASTIC_EPSILON };
        let mut b = Belief::uniform();
        for (s, h, a) in steps {
            let state = AbstractState { nearest: Station::ALL[s], held: HeldItem::ALL[h] };
            b = plastic_update(&b, state, Action::ALL[a], &model).unwrap();
            prop_assert!(b.is_valid());
        }
    }

    #[test]
    fn logreg_probs_match_brute_force(
        w in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), NUM_TYPES),
        fp in fingerprint(),
    ) {
        let names = feature_names();
        let model = LogRegModel {
            weights: w.clone(),
            feature_order: names[..3].to_vec(),
            normalization: vec![(0.5, 1.0), (0.0, 2.0), (1.0, 0.5)],
            dropped: Vec::new(),
            loss_history: Vec::new(),
        };
        let x: Vec<f64> = model
            .feature_order
            .iter()
            .zip(&model.normalization)
            .map(|(n, (m, s))| (fp.get(n).unwrap() - m) / s)
            .collect();
        let z: Vec<f64> = w.iter().map(|row| row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3]).collect();
        let total: f64 = z.iter().map(|v| v.exp()).sum();
        let p = logreg_probs(&model, &fp);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        for c in 0..NUM_TYPES {
            prop_assert!((p[c] - z[c].exp() / total).abs() <= 1e-12);
        }
    }

    #[test]
    fn prototype_distance_matches_brute_force(r in rubric(), fp in fingerprint()) {
        let d = prototype_distances(&fp, &r);
        for (t, proto) in r.prototypes.iter().enumerate() {
            let mut sum = 0.0;
            for s in &proto.stats {
                let sigma = if s.std < SIGMA_FLOOR { SIGMA_FLOOR } else { s.std };
                sum += (fp.get(&s.feature).unwrap() - s.mean).abs() / sigma;
            }
            prop_assert!((d[t] - sum / proto.stats.len() as f64).abs() <= 1e-9 * (1.0 + d[t]));
        }
        let res = classify_prototype(&fp, &r);
        let best = (0..NUM_TYPES).fold(0, |b, i| if d[i] < d[b] { i } else { b });
        prop_assert_eq!(res.predicted, TeammateType::ALL[best]);
        prop_assert!((0.0..=1.0).contains(&res.confidence));
    }

    #[test]
    fn rubric_text_parses_back(r in rubric()) {
        let text = rubric_to_text(&r);
        for proto in &r.prototypes {
            for s in &proto.stats {
                let needle = format!("μ={}, σ={}", fmt3(s.mean), fmt3(s.std));
                prop_assert!(text.contains(&needle), "missing {}", needle);
                let printed: f64 = fmt3(s.mean).parse().unwrap();
                prop_assert!((printed - s.mean).abs() <= 5e-4);
            }
        }
        prop_assert_eq!(text, rubric_to_text(&r.clone()));
    }

    #[test]
    fn pareto_frontier_properties(pts in points()) {
        let f = pareto_frontier(&pts);
        prop_assert!(!f.is_empty());
        prop_assert_eq!(&f, &pareto_oracle(&pts));
        prop_assert_eq!(pareto_frontier(&f), f.clone());
        for p in &pts {
            if !f.contains(p) {
                prop_assert!(f.iter().any(|q| q.accuracy >= p.accuracy && q.ret >= p.ret));
            }
        }
        let mut rev = pts.clone();
        rev.reverse();
        let mut a: Vec<String> = pareto_frontier(&rev).into_iter().map(|p| p.label).collect();
        let mut b: Vec<String> = f.into_iter().map(|p| p.label).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }
}
