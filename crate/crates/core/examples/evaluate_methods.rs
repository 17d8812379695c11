//! Full offline pipeline: calibrate best responses, collect the probe
//! database, fit every classifier and evaluate all methods in mock mode.
//!
//! ```bash
//! cargo run --release --example evaluate_methods -- [episodes_per_type]
//! ```

use collab::config::RunConfig;
use collab::harness::{evaluate, pareto_frontier, pareto_points, text_table, EvalContext};
use collab::llm_client::LlmClient;
use collab::pipeline::{collect, libraries, train_models};

fn main() {
    let reps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    let llm = LlmClient::mock();
    let libs = libraries(&cfg).unwrap();
    let db = collect(&cfg, &libs, &llm, cfg.retrieval.probe_length).unwrap();
    println!("database: {} records", db.len());
    let models = train_models(&cfg, &libs, &db).unwrap();
    let ctx = EvalContext {
        env: &cfg.env,
        policy: &cfg.policy,
        llm: &llm,
        k: cfg.retrieval.k,
    };
    let (_, summaries) = evaluate(
        &cfg.eval.methods,
        &models,
        &ctx,
        &cfg.eval.seeds,
        reps,
        cfg.eval.probe_length,
    )
    .unwrap();
    println!("{}", text_table(&summaries, true));
    println!("{}", text_table(&summaries, false));
    for m in &models {
        let points: Vec<_> = pareto_points(&summaries)
            .into_iter()
            .filter(|p| p.label.starts_with(&format!("{}/", m.layout.name)))
            .collect();
        let front: Vec<String> = pareto_frontier(&points)
            .into_iter()
            .map(|p| p.label)
            .collect();
        println!("pareto {}: {}", m.layout.name, front.join(", "));
    }
}
