//! Ask a real chat-completions endpoint to classify one probe. Reads the API
//! key from the variable named in `llm.api_key_env` (OPENAI_API_KEY by
//! default); any failure falls back to the prototype classifier.
//!
//! ```bash
//! OPENAI_API_KEY=... cargo run --release --example live_llm -- cramped_room mixed
//! ```

use collab::classify::{classify_collab, classify_recollab};
use collab::config::RunConfig;
use collab::fingerprint::extract_features;
use collab::llm_client::{LlmClient, LlmMode};
use collab::pipeline::{collect, libraries, train_models};
use collab::policies::TeammateType;
use collab::rollout::run_probe;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let layout_name = args
        .first()
        .cloned()
        .unwrap_or_else(|| "cramped_room".into());
    let mate: TeammateType = args
        .get(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(TeammateType::Mixed);
    let mut cfg = RunConfig::default();
    cfg.eval.layouts = vec![layout_name];
    cfg.calibration.enabled = false;
    cfg.llm.mode = LlmMode::Live;

    let offline = LlmClient::mock();
    let libs = libraries(&cfg).unwrap();
    let db = collect(&cfg, &libs, &offline, cfg.retrieval.probe_length).unwrap();
    let models = train_models(&cfg, &libs, &db).unwrap().remove(0);
    let history = run_probe(
        models.layout.clone(),
        mate,
        cfg.eval.probe_length,
        cfg.eval.seeds[0],
        &cfg.env,
        &cfg.policy,
        &models.library,
    )
    .unwrap();
    let fp = extract_features(&history).unwrap();

    let live = LlmClient::new(cfg.llm.clone());
    let collab = classify_collab(&fp, &models.rubric, &live);
    let recollab =
        classify_recollab(&fp, &models.rubric, &models.db, cfg.retrieval.k, &live).unwrap();
    println!("true type: {mate}");
    for r in [collab, recollab] {
        println!(
            "{:?}: {} (confidence {:.2}, fallback {})\n  {}",
            r.source, r.predicted, r.confidence, r.fallback_used, r.rationale
        );
    }
}
