//! Classify one probe with every offline classifier and print the prompt a
//! language model would receive.
//!
//! ```bash
//! cargo run --release --example classify_probe -- asymmetric_advantage serve_focused 101
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use collab::classify::{
    classify_collab, classify_oracle, classify_plastic, classify_prototype, classify_random,
    classify_recollab, predict_logreg, recollab_prompt,
};
use collab::config::RunConfig;
use collab::fingerprint::extract_features;
use collab::llm_client::LlmClient;
use collab::pipeline::{collect, libraries, train_models};
use collab::policies::TeammateType;
use collab::retrieval::trace_of;
use collab::rollout::run_probe;
use collab::rubric::describe_all;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let layout_name = args
        .first()
        .cloned()
        .unwrap_or_else(|| "asymmetric_advantage".into());
    let mate: TeammateType = args
        .get(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(TeammateType::ServeFocused);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(101);
    let mut cfg = RunConfig::default();
    cfg.eval.layouts = vec![layout_name.clone()];
    cfg.calibration.enabled = false;
    let llm = LlmClient::mock();
    let libs = libraries(&cfg).unwrap();
    let db = collect(&cfg, &libs, &llm, cfg.retrieval.probe_length).unwrap();
    let models = train_models(&cfg, &libs, &db).unwrap().remove(0);

    let history = run_probe(
        models.layout.clone(),
        mate,
        cfg.eval.probe_length,
        seed,
        &cfg.env,
        &cfg.policy,
        &models.library,
    )
    .unwrap();
    let fp = extract_features(&history).unwrap();
    let k = cfg.retrieval.k;
    let results = [
        classify_random(&mut ChaCha8Rng::seed_from_u64(seed)),
        classify_plastic(&trace_of(&history), &models.plastic),
        predict_logreg(&models.logreg, &fp),
        classify_prototype(&fp, &models.rubric),
        classify_collab(&fp, &models.rubric, &llm),
        classify_recollab(&fp, &models.rubric, &models.db, k, &llm).unwrap(),
        classify_oracle(mate),
    ];
    println!("true type: {mate}");
    for r in &results {
        println!(
            "{:<10} {:<14} {:.3}  {}",
            format!("{:?}", r.source),
            r.predicted.to_string(),
            r.confidence,
            r.rationale
        );
    }

    let q = models
        .db
        .embedder(&llm)
        .unwrap()
        .embed(&describe_all(&fp), &fp)
        .unwrap();
    let exemplars = models.db.topk(&q, k).unwrap();
    println!("\n{}", recollab_prompt(&fp, &models.rubric, &exemplars));
}
