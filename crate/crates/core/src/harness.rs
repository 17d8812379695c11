//! Probe, classify once, route: episode orchestration, aggregation,
//! Pareto frontier and ablations.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{
    classify_collab, classify_oracle, classify_plastic, classify_prototype, classify_random,
    classify_recollab, fit_logreg, predict_logreg, ClassificationResult, LogRegConfig, LogRegError,
    LogRegModel, PlasticModel, Source,
};
use crate::env::{EnvConfig, EnvError, Layout};
use crate::fingerprint::{extract_features, rank_features, FingerprintError, RankedFeature};
use crate::llm_client::LlmClient;
use crate::policies::{BrLibrary, BrStyle, PolicyConfig, TeammateType, NUM_TYPES};
use crate::retrieval::{trace_of, RetrievalError, TrajectoryDB};
use crate::rollout::Rollout;
use crate::rubric::{build_rubric, Rubric, RubricError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("probe length {p} must be below the horizon {horizon}")]
    ProbeTooLong { p: u32, horizon: u32 },
    #[error("no database records for layout {0:?}")]
    NoRecords(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error(transparent)]
    LogReg(#[from] LogRegError),
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Static,
    Random,
    Plastic,
    Logreg,
    Prototype,
    Collab,
    Recollab,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Static,
        Method::Random,
        Method::Plastic,
        Method::Logreg,
        Method::Prototype,
        Method::Collab,
        Method::Recollab,
        Method::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Static => "static",
            Method::Random => "random",
            Method::Plastic => "plastic",
            Method::Logreg => "logreg",
            Method::Prototype => "prototype",
            Method::Collab => "collab",
            Method::Recollab => "recollab",
            Method::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Everything a layout's classifiers are fitted on.
#[derive(Debug, Clone)]
pub struct LayoutModels {
    pub layout: Arc<Layout>,
    pub library: BrLibrary,
    pub rubric: Rubric,
    pub ranking: Vec<RankedFeature>,
    pub db: TrajectoryDB,
    pub logreg: LogRegModel,
    pub plastic: PlasticModel,
}

impl LayoutModels {
    /// Fit every model on `db`'s records for this layout, selecting the
    /// top-`r` features by MI.
    pub fn train(
        layout: Arc<Layout>,
        library: BrLibrary,
        db: &TrajectoryDB,
        r: usize,
        bins: usize,
        logreg: &LogRegConfig,
    ) -> Result<LayoutModels, HarnessError> {
        let db = db.for_layout(&layout.name);
        let dataset = dataset(&db);
        if dataset.is_empty() {
            return Err(HarnessError::NoRecords(layout.name.clone()));
        }
        let ranking = rank_features(&dataset, bins)?;
        let selected: Vec<String> = ranking.iter().take(r).map(|f| f.name.clone()).collect();
        let rubric = build_rubric(&dataset, &selected)?.with_layout(&layout.name);
        LayoutModels::with_rubric(layout, library, rubric, ranking, &db, logreg)
    }

    /// Fit the remaining models around an existing rubric.
    pub fn with_rubric(
        layout: Arc<Layout>,
        library: BrLibrary,
        rubric: Rubric,
        ranking: Vec<RankedFeature>,
        db: &TrajectoryDB,
        logreg: &LogRegConfig,
    ) -> Result<LayoutModels, HarnessError> {
        let db = db.for_layout(&layout.name);
        if db.is_empty() {
            return Err(HarnessError::NoRecords(layout.name.clone()));
        }
        let logreg = fit_logreg(&dataset(&db), &rubric.selected_features, logreg)?;
        let plastic = PlasticModel::fit(db.records());
        Ok(LayoutModels {
            layout,
            library,
            rubric,
            ranking,
            db,
            logreg,
            plastic,
        })
    }
}

fn dataset(db: &TrajectoryDB) -> Vec<(crate::fingerprint::Fingerprint, TeammateType)> {
    db.records()
        .iter()
        .map(|r| (r.fingerprint.clone(), r.true_type))
        .collect()
}

/// Shared, layout-independent evaluation settings.
pub struct EvalContext<'a> {
    pub env: &'a EnvConfig,
    pub policy: &'a PolicyConfig,
    pub llm: &'a LlmClient,
    pub k: usize,
}

/// One controller change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteEvent {
    pub t: u32,
    pub target: TeammateType,
    pub style: BrStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub method: Method,
    pub layout: String,
    pub seed_group: usize,
    pub seed: u64,
    pub true_type: TeammateType,
    pub predicted_type: TeammateType,
    pub confidence: f64,
    pub fallback_used: bool,
    pub prompt_hash: Option<String>,
    pub rationale: String,
    pub switch_step: u32,
    pub classifier_calls: u32,
    pub route: Vec<RouteEvent>,
    pub episodic_return: f64,
    pub deliveries: u32,
}

impl EpisodeResult {
    pub fn correct(&self) -> bool {
        self.true_type == self.predicted_type
    }
}

/// Generator for the random classifier in episode `seed`.
pub fn classifier_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15)
}

fn classify_at_probe(
    method: Method,
    models: &LayoutModels,
    ctx: &EvalContext,
    history: &crate::fingerprint::ProbeHistory,
    seed: u64,
) -> Result<ClassificationResult, HarnessError> {
    let fp = extract_features(history)?;
    Ok(match method {
        Method::Static => ClassificationResult {
            predicted: TeammateType::Default,
            confidence: 1.0,
            rationale: "always the default best response".into(),
            source: Source::Static,
            fallback_used: false,
            prompt_hash: None,
        },
        Method::Random => classify_random(&mut classifier_rng(seed)),
        Method::Prototype => classify_prototype(&fp, &models.rubric),
        Method::Collab => classify_collab(&fp, &models.rubric, ctx.llm),
        Method::Recollab => classify_recollab(&fp, &models.rubric, &models.db, ctx.k, ctx.llm)?,
        Method::Logreg => predict_logreg(&models.logreg, &fp),
        Method::Plastic => classify_plastic(&trace_of(history), &models.plastic),
        Method::Oracle => unreachable!("oracle never probes"),
    })
}

/// Probe with BR(default) for `p` steps, classify once, switch once, play
/// out the horizon. Oracle plays BR(true type) from t = 0.
pub fn run_episode(
    models: &LayoutModels,
    ctx: &EvalContext,
    true_type: TeammateType,
    method: Method,
    p: u32,
    seed: u64,
) -> Result<EpisodeResult, HarnessError> {
    if p >= ctx.env.horizon {
        return Err(HarnessError::ProbeTooLong {
            p,
            horizon: ctx.env.horizon,
        });
    }
    let lib = &models.library;
    let layout = models.layout.clone();
    let (mut rollout, result, switch_step) = if method == Method::Oracle {
        let r = Rollout::new(
            layout,
            true_type,
            lib.respond(true_type),
            seed,
            ctx.env,
            ctx.policy,
        );
        (r, classify_oracle(true_type), 0)
    } else {
        let probe = lib.respond(TeammateType::Default);
        let mut r = Rollout::new(layout, true_type, probe, seed, ctx.env, ctx.policy);
        let history = r.probe(p)?;
        let result = classify_at_probe(method, models, ctx, &history, seed)?;
        (r, result, p)
    };
    let mut route = Vec::with_capacity(2);
    if method != Method::Oracle {
        let c = rollout.controller;
        route.push(RouteEvent {
            t: 0,
            target: c.target,
            style: c.style,
        });
    }
    rollout.controller = lib.respond(result.predicted);
    route.push(RouteEvent {
        t: switch_step,
        target: rollout.controller.target,
        style: rollout.controller.style,
    });
    rollout.finish()?;
    Ok(EpisodeResult {
        method,
        layout: models.layout.name.clone(),
        seed_group: 0,
        seed,
        true_type,
        predicted_type: result.predicted,
        confidence: result.confidence,
        fallback_used: result.fallback_used,
        prompt_hash: result.prompt_hash,
        rationale: result.rationale,
        switch_step,
        classifier_calls: 1,
        route,
        episodic_return: rollout.total_reward,
        deliveries: rollout.deliveries,
    })
}

/// Balanced episode plan: for every seed group, `reps` episodes of every
/// type. Returns (group index, type, episode seed).
pub fn episode_seeds(groups: &[u64], reps: u64) -> Vec<(usize, TeammateType, u64)> {
    let mut out = Vec::new();
    for (g, &base) in groups.iter().enumerate() {
        for j in 0..reps {
            for ty in TeammateType::ALL {
                let slot = j * NUM_TYPES as u64 + ty.index() as u64;
                out.push((g, ty, base + 1000 * slot));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub layout: String,
    pub episodes: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub return_mean: f64,
    pub return_std: f64,
    pub fallbacks: usize,
    /// `confusion[true][predicted]`.
    pub confusion: [[u32; NUM_TYPES]; NUM_TYPES],
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aggregate one (method, layout) cell. Means and population stds are taken
/// across seed groups.
pub fn summarize(method: Method, layout: &str, episodes: &[EpisodeResult]) -> MethodSummary {
    let mine: Vec<&EpisodeResult> = episodes
        .iter()
        .filter(|e| e.method == method && e.layout == layout)
        .collect();
    let mut groups: BTreeMap<usize, (f64, f64, f64)> = BTreeMap::new();
    let mut confusion = [[0u32; NUM_TYPES]; NUM_TYPES];
    for e in &mine {
        let g = groups.entry(e.seed_group).or_default();
        g.0 += if e.correct() { 1.0 } else { 0.0 };
        g.1 += e.episodic_return;
        g.2 += 1.0;
        confusion[e.true_type.index()][e.predicted_type.index()] += 1;
    }
    let acc: Vec<f64> = groups.values().map(|g| g.0 / g.2).collect();
    let ret: Vec<f64> = groups.values().map(|g| g.1 / g.2).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&acc);
    let (return_mean, return_std) = mean_std(&ret);
    MethodSummary {
        method,
        layout: layout.to_string(),
        episodes: mine.len(),
        accuracy_mean,
        accuracy_std,
        return_mean,
        return_std,
        fallbacks: mine.iter().filter(|e| e.fallback_used).count(),
        confusion,
    }
}

/// Every (method, layout, episode) of the plan, run in parallel and
/// returned in plan order, followed by one summary per (method, layout).
pub fn evaluate(
    methods: &[Method],
    models: &[LayoutModels],
    ctx: &EvalContext,
    groups: &[u64],
    reps: u64,
    p: u32,
) -> Result<(Vec<EpisodeResult>, Vec<MethodSummary>), HarnessError> {
    let plan = episode_seeds(groups, reps);
    let mut jobs = Vec::new();
    for m in models {
        for &method in methods {
            for &(g, ty, seed) in &plan {
                jobs.push((m, method, g, ty, seed));
            }
        }
    }
    let episodes = jobs
        .par_iter()
        .map(|&(m, method, g, ty, seed)| {
            let mut e = run_episode(m, ctx, ty, method, p, seed)?;
            e.seed_group = g;
            Ok(e)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut summaries = Vec::new();
    for m in models {
        for &method in methods {
            summaries.push(summarize(method, &m.layout.name, &episodes));
        }
        let oracle = summaries
            .iter()
            .find(|s| s.method == Method::Oracle && s.layout == m.layout.name);
        if let Some(o) = oracle {
            for s in summaries.iter().filter(|s| s.layout == m.layout.name) {
                if s.return_mean > o.return_mean {
                    log::warn!(
                        "{}: {} return {:.1} exceeds oracle {:.1}",
                        s.layout,
                        s.method,
                        s.return_mean,
                        o.return_mean
                    );
                }
            }
        }
    }
    Ok((episodes, summaries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub accuracy: f64,
    #[serde(rename = "return")]
    pub ret: f64,
}

/// Points no other point strictly dominates (maximizing both coordinates),
/// in input order. Equal points are all kept.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .accuracy
            .total_cmp(&points[a].accuracy)
            .then(points[b].ret.total_cmp(&points[a].ret))
    });
    let mut keep = vec![false; points.len()];
    let mut best_above = f64::NEG_INFINITY;
    let mut i = 0;
    while i < order.len() {
        let acc = points[order[i]].accuracy;
        let group_max = points[order[i]].ret;
        let mut j = i;
        while j < order.len() && points[order[j]].accuracy == acc {
            let r = points[order[j]].ret;
            keep[order[j]] = r == group_max && r > best_above;
            j += 1;
        }
        best_above = best_above.max(group_max);
        i = j;
    }
    points
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| p.clone())
        .collect()
}

pub fn pareto_points(summaries: &[MethodSummary]) -> Vec<ParetoPoint> {
    summaries
        .iter()
        .map(|s| ParetoPoint {
            label: format!("{}/{}", s.layout, s.method),
            accuracy: s.accuracy_mean,
            ret: s.return_mean,
        })
        .collect()
}

/// One ablation row: the swept value and the summary at that value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub parameter: String,
    pub value: u64,
    pub summary: MethodSummary,
}

/// Evaluate `method` at every probe length. `models_at(p)` supplies models
/// fitted on a database probed for `p` steps.
pub fn ablate_probe(
    method: Method,
    p_values: &[u32],
    models_at: &dyn Fn(u32) -> Result<LayoutModels, HarnessError>,
    ctx: &EvalContext,
    groups: &[u64],
    reps: u64,
) -> Result<(Vec<EpisodeResult>, Vec<AblationRow>), HarnessError> {
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for &p in p_values {
        let models = models_at(p)?;
        let (episodes, mut summaries) = evaluate(&[method], &[models], ctx, groups, reps, p)?;
        all.extend(episodes);
        rows.push(AblationRow {
            parameter: "probe_length".into(),
            value: p as u64,
            summary: summaries.remove(0),
        });
    }
    Ok((all, rows))
}

/// Evaluate ReCoLLAB at every retrieval count.
pub fn ablate_k(
    k_values: &[usize],
    models: &LayoutModels,
    ctx: &EvalContext,
    groups: &[u64],
    reps: u64,
    p: u32,
) -> Result<(Vec<EpisodeResult>, Vec<AblationRow>), HarnessError> {
    let mut all = Vec::new();
    let mut rows = Vec::new();
    for &k in k_values {
        let ctx_k = EvalContext { k, ..*ctx };
        let (episodes, mut summaries) = evaluate(
            &[Method::Recollab],
            std::slice::from_ref(models),
            &ctx_k,
            groups,
            reps,
            p,
        )?;
        all.extend(episodes);
        rows.push(AblationRow {
            parameter: "k".into(),
            value: k as u64,
            summary: summaries.remove(0),
        });
    }
    Ok((all, rows))
}

pub fn episodes_jsonl(episodes: &[EpisodeResult]) -> String {
    let mut out = String::new();
    for e in episodes {
        out.push_str(&serde_json::to_string(e).expect("episode serializes"));
        out.push('\n');
    }
    out
}

pub fn summaries_csv(summaries: &[MethodSummary]) -> String {
    let mut out = String::from(
        "layout,method,episodes,accuracy_mean,accuracy_std,return_mean,return_std,fallbacks\n",
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            s.layout,
            s.method,
            s.episodes,
            s.accuracy_mean,
            s.accuracy_std,
            s.return_mean,
            s.return_std,
            s.fallbacks
        );
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "layout,method,parameter,value,accuracy_mean,accuracy_std,return_mean,return_std\n",
    );
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            s.layout,
            s.method,
            r.parameter,
            r.value,
            s.accuracy_mean,
            s.accuracy_std,
            s.return_mean,
            s.return_std
        );
    }
    out
}

pub fn pareto_csv(points: &[ParetoPoint], frontier: &[ParetoPoint]) -> String {
    let mut out = String::from("label,accuracy,return,on_frontier\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{}",
            p.label,
            p.accuracy,
            p.ret,
            frontier.contains(p)
        );
    }
    out
}

/// Methods down, layouts across, `mean±std` of the chosen statistic.
pub fn text_table(summaries: &[MethodSummary], accuracy: bool) -> String {
    let mut layouts: Vec<&str> = Vec::new();
    let mut methods: Vec<Method> = Vec::new();
    for s in summaries {
        if !layouts.contains(&s.layout.as_str()) {
            layouts.push(&s.layout);
        }
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
    }
    let cell = |m: Method, l: &str| -> String {
        summaries
            .iter()
            .find(|s| s.method == m && s.layout == l)
            .map_or("-".into(), |s| {
                if accuracy {
                    format!("{:.2}±{:.2}", s.accuracy_mean, s.accuracy_std)
                } else {
                    format!("{:.1}±{:.1}", s.return_mean, s.return_std)
                }
            })
    };
    let width = layouts.iter().map(|l| l.len()).max().unwrap_or(0).max(14) + 2;
    let mut out = format!("{:<12}", if accuracy { "accuracy" } else { "return" });
    for l in &layouts {
        let _ = write!(out, "{l:>width$}");
    }
    out.push('\n');
    for m in methods {
        let _ = write!(out, "{:<12}", m.as_str());
        for l in &layouts {
            let _ = write!(out, "{:>width$}", cell(m, l));
        }
        out.push('\n');
    }
    out
}
