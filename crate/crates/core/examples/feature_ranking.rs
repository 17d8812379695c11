//! Collect probe fingerprints on one layout, rank every feature by mutual
//! information with the teammate type and print the resulting rubric.
//!
//! ```bash
//! cargo run --release --example feature_ranking -- coordination_ring 10
//! ```

use collab::config::RunConfig;
use collab::fingerprint::rank_features;
use collab::llm_client::LlmClient;
use collab::pipeline::{collect, libraries};
use collab::rubric::{build_rubric, rubric_to_text};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let layout = args
        .first()
        .cloned()
        .unwrap_or_else(|| "coordination_ring".into());
    let r: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let mut cfg = RunConfig::default();
    cfg.eval.layouts = vec![layout.clone()];
    cfg.calibration.enabled = false;
    let libs = libraries(&cfg).unwrap();
    let db = collect(&cfg, &libs, &LlmClient::mock(), cfg.retrieval.probe_length).unwrap();
    let data: Vec<_> = db
        .records()
        .iter()
        .map(|rec| (rec.fingerprint.clone(), rec.true_type))
        .collect();
    let ranking = rank_features(&data, cfg.fingerprint.bins).unwrap();
    println!("{layout}: {} probes, MI in nats", data.len());
    for f in &ranking {
        println!("  {:<28} {:.3}", f.name, f.mi);
    }
    let selected: Vec<String> = ranking.iter().take(r).map(|f| f.name.clone()).collect();
    let rubric = build_rubric(&data, &selected).unwrap().with_layout(&layout);
    println!("\n{}", rubric_to_text(&rubric));
}
