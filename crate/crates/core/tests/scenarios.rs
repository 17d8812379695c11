mod common;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use collab::classify::{
    classify_collab, classify_prototype, classify_random, classify_recollab, fit_logreg,
    plastic_update, predict_logreg, recollab_prompt, Belief, LogRegConfig, PlasticModel,
    PLASTIC_EPSILON,
};
use collab::cli::main_with_args;
use collab::config::RunConfig;
use collab::env::{reset, shipped_layout, step, Action, EnvConfig, HeldItem, Station};
use collab::fingerprint::{extract_features, rank_features, AbstractState, Fingerprint};
use collab::harness::{run_episode, EvalContext, LayoutModels, Method};
use collab::llm_client::LlmClient;
use collab::pipeline::{collect, libraries, train_models};
use collab::policies::{BrLibrary, PolicyConfig, TeammateType};
use collab::retrieval::{TrajectoryDB, TrajectoryRecord};
use collab::rollout::{calibrate_library, mean_return, Rollout};
use collab::rubric::build_rubric;

use common::*;

const LAYOUTS: [&str; 3] = ["cramped_room", "asymmetric_advantage", "coordination_ring"];

/// Mock-mode database and models over every shipped layout with calibrated
/// libraries.
struct Fixture {
    cfg: RunConfig,
    libs: BTreeMap<String, BrLibrary>,
    db: TrajectoryDB,
    models: Vec<LayoutModels>,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = RunConfig::default();
        let libs = libraries(&cfg).unwrap();
        let db = collect(&cfg, &libs, &LlmClient::mock(), 20).unwrap();
        let models = train_models(&cfg, &libs, &db).unwrap();
        Fixture {
            cfg,
            libs,
            db,
            models,
        }
    })
}

fn dataset(db: &TrajectoryDB) -> Vec<(Fingerprint, TeammateType)> {
    db.records()
        .iter()
        .map(|r| (r.fingerprint.clone(), r.true_type))
        .collect()
}

#[test]
fn scripted_soup_cycle_pays_exactly_one_delivery() {
    use Action::*;
    let cfg = EnvConfig::default();
    let mut s = reset(shipped_layout("cramped_room").unwrap(), &cfg, 0);
    let mut total = 0.0;
    let mut run = |s: &mut collab::env::GridState, acts: &[Action]| {
        for &a in acts {
            let out = step(s, [a, Stay], &cfg).unwrap();
            total += out.reward;
            *s = out.state;
        }
    };
    let pot = (0, 2);
    run(&mut s, &[North, West, Interact, East, North, Interact]);
    assert_eq!(s.pot(pot).unwrap().onion_count, 1);
    run(&mut s, &[West, West, Interact, East, North, Interact]);
    assert_eq!(s.pot(pot).unwrap().onion_count, 2);
    run(&mut s, &[West, West, Interact, East, North, Interact]);
    assert_eq!(s.pot(pot).unwrap().cook_timer, cfg.cook_time);
    run(&mut s, &[South, West, South, Interact]);
    assert_eq!(s.agents[0].held, HeldItem::Plate);
    run(&mut s, &[North, East, North]);
    let mut waited = 7;
    while !s.pot(pot).unwrap().ready {
        run(&mut s, &[Stay]);
        waited += 1;
    }
    assert_eq!(waited, cfg.cook_time);
    run(&mut s, &[Interact]);
    assert_eq!(s.agents[0].held, HeldItem::Soup);
    assert_eq!(s.pot(pot).unwrap().onion_count, 0);
    run(&mut s, &[South, East, South, Interact]);
    assert_eq!(s.agents[0].held, HeldItem::Nothing);
    assert_eq!(total, 20.0);
}

#[test]
fn plate_focused_teammate_stays_near_plates() {
    let env = EnvConfig::default();
    let policy = PolicyConfig::default();
    for name in LAYOUTS {
        let layout = shipped_layout(name).unwrap();
        let plates = layout.station_cells(Station::PlatePile);
        let stations: Vec<_> = Station::ALL
            .iter()
            .flat_map(|&st| layout.station_cells(st))
            .collect();
        let adjacent = |p: (usize, usize), cells: &[(usize, usize)]| {
            cells
                .iter()
                .any(|c| c.0.abs_diff(p.0).max(c.1.abs_diff(p.1)) <= 1)
        };
        let (mut near_station, mut near_plates) = (0, 0);
        for seed in 0..5 {
            let controller = BrLibrary::default().respond(TeammateType::Default);
            let mut r = Rollout::new(
                layout.clone(),
                TeammateType::PlateFocused,
                controller,
                seed,
                &env,
                &policy,
            );
            while !r.done() {
                r.step().unwrap();
                let pos = r.state.agents[0].position;
                if adjacent(pos, &stations) {
                    near_station += 1;
                    if adjacent(pos, &plates) {
                        near_plates += 1;
                    }
                }
            }
        }
        let share = near_plates as f64 / near_station as f64;
        assert!(share >= 0.6, "{name}: plate share {share:.3}");
    }
}

#[test]
fn matching_best_response_beats_static_for_pot_focused() {
    let f = fixture();
    let seeds: Vec<u64> = (0..5).map(|i| 500 + i).collect();
    for name in LAYOUTS {
        let layout = shipped_layout(name).unwrap();
        let lib = &f.libs[name];
        let matched = mean_return(
            &layout,
            TeammateType::PotFocused,
            lib.respond(TeammateType::PotFocused),
            &seeds,
            &f.cfg.env,
            &f.cfg.policy,
        )
        .unwrap();
        let fixed = mean_return(
            &layout,
            TeammateType::PotFocused,
            lib.respond(TeammateType::Default),
            &seeds,
            &f.cfg.env,
            &f.cfg.policy,
        )
        .unwrap();
        assert!(
            matched > fixed,
            "{name}: matched {matched} vs static {fixed}"
        );
    }
}

#[test]
fn pairing_matrix_peaks_on_the_diagonal() {
    let cfg = RunConfig::default();
    let seeds = cfg.calibration.seeds();
    for name in LAYOUTS {
        let layout: Arc<_> = shipped_layout(name).unwrap();
        let lib = calibrate_library(
            &layout,
            &seeds,
            cfg.calibration.opening_steps,
            &cfg.env,
            &cfg.policy,
        )
        .unwrap();
        for mate in TeammateType::ALL {
            let row: Vec<f64> = TeammateType::ALL
                .iter()
                .map(|&br| {
                    mean_return(
                        &layout,
                        mate,
                        lib.respond(br),
                        &seeds,
                        &cfg.env,
                        &cfg.policy,
                    )
                    .unwrap()
                })
                .collect();
            let own = row[mate.index()];
            assert!(row.iter().all(|&r| own >= r), "{name} / {mate}: {row:?}");
        }
    }
}

#[test]
fn location_features_outrank_blocked_moves() {
    let f = fixture();
    let ranking = rank_features(&dataset(&f.db), f.cfg.fingerprint.bins).unwrap();
    let mi = |prefix: &str| {
        ranking
            .iter()
            .filter(|r| r.name.starts_with(prefix))
            .map(|r| r.mi)
            .fold(0.0, f64::max)
    };
    let blocked = mi("blocked_count");
    assert!(mi("dwell_near_") > blocked, "{ranking:?}");
    assert!(mi("interact_count_") > blocked, "{ranking:?}");
    assert!(mi("handoff_count") <= blocked);
}

#[test]
fn rubric_matches_streaming_statistics() {
    let f = fixture();
    for m in &f.models {
        let data = dataset(&m.db);
        let rubric = build_rubric(&data, &m.rubric.selected_features).unwrap();
        for proto in &rubric.prototypes {
            for stat in &proto.stats {
                let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
                for (fp, ty) in &data {
                    if *ty == proto.teammate_type {
                        let x = fp.get(&stat.feature).unwrap();
                        n += 1.0;
                        let delta = x - mean;
                        mean += delta / n;
                        m2 += delta * (x - mean);
                    }
                }
                assert!((stat.mean - mean).abs() <= 1e-9);
                assert!((stat.std - (m2 / n).sqrt()).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn mock_collab_is_the_prototype_classifier() {
    let f = fixture();
    let m = &f.models[0];
    for rec in m.db.records().iter().take(20) {
        let a = classify_collab(&rec.fingerprint, &m.rubric, &LlmClient::mock());
        let b = classify_prototype(&rec.fingerprint, &m.rubric);
        assert_eq!(a.predicted, b.predicted);
        assert!(!a.fallback_used);
        assert!(a.prompt_hash.is_some());
    }
}

fn answering(text: &'static str) -> LlmClient {
    LlmClient::mock().with_responder(Arc::new(move |_: &str| text.to_string()))
}

#[test]
fn llm_answers_are_parsed_or_fall_back() {
    let f = fixture();
    let m = &f.models[0];
    let fp = &m.db.records()[0].fingerprint;
    let bad = classify_collab(fp, &m.rubric, &answering("I think it is pot focused."));
    assert!(bad.fallback_used);
    assert_eq!(bad.predicted, classify_prototype(fp, &m.rubric).predicted);
    let good = classify_collab(
        fp,
        &m.rubric,
        &answering(r#"{"type":"pot_focused","confidence":0.9,"rationale":"fills pots"}"#),
    );
    assert!(!good.fallback_used);
    assert_eq!(good.predicted, TeammateType::PotFocused);
    assert_eq!(good.confidence, 0.9);
}

#[test]
fn self_retrieval_predicts_the_stored_label() {
    let f = fixture();
    for m in &f.models {
        for rec in m.db.records() {
            let r = classify_recollab(&rec.fingerprint, &m.rubric, &m.db, 1, &LlmClient::mock())
                .unwrap();
            let q =
                m.db.embedder(&LlmClient::mock())
                    .unwrap()
                    .embed(&rec.description, &rec.fingerprint)
                    .unwrap();
            let top = m.db.topk(&q, 1).unwrap()[0].0;
            assert!(
                (q.iter()
                    .zip(&rec.embedding)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    - 1.0)
                    .abs()
                    <= 1e-6
            );
            assert_eq!(r.predicted, top.true_type);
            if top.id == rec.id {
                assert_eq!(r.predicted, rec.true_type);
            }
        }
    }
}

#[test]
fn majority_label_wins_equal_score_vote() {
    let emb = vec![vec![1.0, 0.0]; 5];
    let labels = [
        TeammateType::Mixed,
        TeammateType::Mixed,
        TeammateType::Mixed,
        TeammateType::PotFocused,
        TeammateType::PotFocused,
    ];
    let mut db = db_of(&emb[..1]);
    db = db.subset(|_| false);
    for (i, ty) in labels.iter().enumerate() {
        db.insert(record(&format!("x{i}"), *ty, emb[i].clone()))
            .unwrap();
    }
    let exemplars: Vec<(&TrajectoryRecord, f64)> = db.records().iter().map(|r| (r, 1.0)).collect();
    let f = fixture();
    let fp = zero_fingerprint();
    let (ty, _) = collab::classify::vote(&exemplars, &fp, &f.models[0].rubric);
    assert_eq!(ty, TeammateType::Mixed);
}

#[test]
fn prompt_has_one_block_per_exemplar() {
    let f = fixture();
    let m = &f.models[1];
    let rec = &m.db.records()[3];
    for k in [1, 3, 5, 10, 500] {
        let hits = m.db.topk(&rec.embedding, k).unwrap();
        let prompt = recollab_prompt(&rec.fingerprint, &m.rubric, &hits);
        assert_eq!(prompt.matches("### Example ").count(), k.min(m.db.len()));
    }
}

#[test]
fn logreg_fits_one_sample_per_type() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train: Vec<(Fingerprint, TeammateType)> = TeammateType::ALL
        .iter()
        .map(|&t| (random_fingerprint(&mut rng), t))
        .collect();
    let features = collab::fingerprint::feature_names();
    let cfg = LogRegConfig {
        lr: 0.5,
        epochs: 2000,
        l2: 0.0,
    };
    let model = fit_logreg(&train, &features, &cfg).unwrap();
    for (fp, ty) in &train {
        assert_eq!(predict_logreg(&model, fp).predicted, *ty);
    }
}

#[test]
fn one_decisive_update_concentrates_belief() {
    let state = AbstractState {
        nearest: Station::Pot,
        held: HeldItem::Onion,
    };
    let mut likelihood = vec![vec![[0.0; 6]; AbstractState::COUNT]; NUM_TYPES];
    likelihood[2][state.index()][Action::Interact.index()] = 1.0;
    let model = PlasticModel {
        likelihood,
        epsilon: PLASTIC_EPSILON,
    };
    let b = plastic_update(&Belief::uniform(), state, Action::Interact, &model).unwrap();
    assert!(b.probs[2] >= 1.0 / (1.0 + 4.0 * PLASTIC_EPSILON) - 1e-12);
}

#[test]
fn random_classifier_is_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut counts = [0usize; NUM_TYPES];
    for _ in 0..10_000 {
        counts[classify_random(&mut rng).predicted.index()] += 1;
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 0.2).abs() <= 0.02, "{counts:?}");
    }
}

#[test]
fn episodes_are_reproducible_and_well_formed() {
    let f = fixture();
    let llm = LlmClient::mock();
    let ctx = EvalContext {
        env: &f.cfg.env,
        policy: &f.cfg.policy,
        llm: &llm,
        k: 5,
    };
    let m = &f.models[2];
    for method in Method::ALL {
        for p in [1, 20, f.cfg.env.horizon - 1] {
            let a = run_episode(m, &ctx, TeammateType::ServeFocused, method, p, 4242).unwrap();
            let b = run_episode(m, &ctx, TeammateType::ServeFocused, method, p, 4242).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.episodic_return, 20.0 * a.deliveries as f64);
            assert!((0.0..=1.0).contains(&a.confidence));
            if method == Method::Oracle {
                assert_eq!(a.switch_step, 0);
            } else {
                assert_eq!(a.switch_step, p);
                assert_eq!(a.route.len(), 2);
                assert_eq!(a.route[1].t, p);
            }
        }
    }
    assert!(run_episode(
        m,
        &ctx,
        TeammateType::Default,
        Method::Static,
        f.cfg.env.horizon,
        1
    )
    .is_err());
}

#[test]
fn probe_fingerprints_are_reproducible() {
    let f = fixture();
    let again = collect(&f.cfg, &f.libs, &LlmClient::mock(), 20).unwrap();
    assert_eq!(again, f.db);
    let layout = shipped_layout("cramped_room").unwrap();
    let probe = |seed| {
        let mut r = Rollout::new(
            layout.clone(),
            TeammateType::Mixed,
            f.libs["cramped_room"].respond(TeammateType::Default),
            seed,
            &f.cfg.env,
            &f.cfg.policy,
        );
        extract_features(&r.probe(20).unwrap()).unwrap()
    };
    assert_eq!(probe(3), probe(3));
}

#[test]
fn database_round_trips_through_disk() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("db.jsonl");
    f.db.save(&path).unwrap();
    let back = TrajectoryDB::load(&path).unwrap();
    assert_eq!(back, f.db);
    let first = std::fs::read(&path).unwrap();
    back.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn cli_reports_missing_artifacts_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let set = |k: &str, v: &str| {
        vec![
            "--set".to_string(),
            format!("{k}={}", dir.path().join(v).display()),
        ]
    };
    let mut base = vec!["collab".to_string()];
    base.extend(set("paths.db", "db.jsonl"));
    base.extend(set("paths.rubric", "rubric.json"));
    base.extend(set("paths.output_dir", "runs"));
    base.extend(["--set".into(), "calibration.enabled=false".into()]);
    let run = |extra: &[&str]| {
        let mut args = base.clone();
        args.extend(extra.iter().map(|s| s.to_string()));
        main_with_args(args)
    };
    assert_eq!(run(&["eval"]), 3);
    assert_eq!(run(&["build-rubric"]), 3);
    assert_eq!(run(&["--layout", "cramped_room", "collect"]), 0);
    assert_eq!(run(&["--layout", "cramped_room", "collect"]), 3);
    assert_eq!(run(&["--layout", "cramped_room", "eval"]), 3);
    assert_eq!(run(&["--set", "retrieval.k=0", "eval"]), 2);
    assert_eq!(run(&["--set", "nonsense.key=1", "eval"]), 2);
    assert_eq!(run(&["--layout", "cramped_room", "build-rubric"]), 0);
    assert_eq!(
        run(&[
            "--layout",
            "cramped_room",
            "--method",
            "static",
            "--method",
            "oracle",
            "eval"
        ]),
        0
    );
}
