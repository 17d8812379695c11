//! Sweep the number of retrieved exemplars for ReCoLLAB on one layout and
//! print accuracy and return per value.
//!
//! ```bash
//! cargo run --release --example ablation_sweep -- coordination_ring 2
//! ```

use collab::config::RunConfig;
use collab::harness::{ablate_k, EvalContext};
use collab::llm_client::LlmClient;
use collab::pipeline::{collect, libraries, train_models};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let layout = args
        .first()
        .cloned()
        .unwrap_or_else(|| "coordination_ring".into());
    let reps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let mut cfg = RunConfig::default();
    cfg.eval.layouts = vec![layout];
    let llm = LlmClient::mock();
    let libs = libraries(&cfg).unwrap();
    let db = collect(&cfg, &libs, &llm, cfg.retrieval.probe_length).unwrap();
    let models = train_models(&cfg, &libs, &db).unwrap().remove(0);
    let ctx = EvalContext {
        env: &cfg.env,
        policy: &cfg.policy,
        llm: &llm,
        k: cfg.retrieval.k,
    };
    let (_, rows) = ablate_k(
        &cfg.ablation.k_values,
        &models,
        &ctx,
        &cfg.eval.seeds,
        reps,
        cfg.eval.probe_length,
    )
    .unwrap();
    println!("{:>4} {:>14} {:>14}", "k", "accuracy", "return");
    for row in rows {
        let s = &row.summary;
        println!(
            "{:>4} {:>8.3}±{:.3} {:>8.1}±{:.1}",
            row.value, s.accuracy_mean, s.accuracy_std, s.return_mean, s.return_std
        );
    }
}
