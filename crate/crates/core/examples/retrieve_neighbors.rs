//! Embed a fresh probe and list its nearest neighbours in the database.
//!
//! ```bash
//! cargo run --release --example retrieve_neighbors -- cramped_room plate_focused 5
//! ```

use collab::config::RunConfig;
use collab::fingerprint::extract_features;
use collab::llm_client::LlmClient;
use collab::pipeline::{collect, libraries};
use collab::policies::TeammateType;
use collab::rollout::run_probe;
use collab::rubric::describe_all;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let layout_name = args
        .first()
        .cloned()
        .unwrap_or_else(|| "cramped_room".into());
    let mate: TeammateType = args
        .get(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(TeammateType::PlateFocused);
    let k: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut cfg = RunConfig::default();
    cfg.eval.layouts = vec![layout_name.clone()];
    cfg.calibration.enabled = false;
    let llm = LlmClient::mock();
    let libs = libraries(&cfg).unwrap();
    let db = collect(&cfg, &libs, &llm, cfg.retrieval.probe_length).unwrap();

    let layout = cfg.layout(&layout_name).unwrap();
    let history = run_probe(
        layout,
        mate,
        cfg.retrieval.probe_length,
        cfg.eval.seeds[0],
        &cfg.env,
        &cfg.policy,
        &libs[&layout_name],
    )
    .unwrap();
    let fp = extract_features(&history).unwrap();
    let description = describe_all(&fp);
    println!("query ({mate}):\n{description}\n");
    let q = db.embedder(&llm).unwrap().embed(&description, &fp).unwrap();
    for (rec, score) in db.topk(&q, k).unwrap() {
        println!(
            "{:<36} {:<14} {score:.3}",
            rec.id,
            rec.true_type.to_string()
        );
    }
}
