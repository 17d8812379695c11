//! Teammate-type classifiers.
//!
//! The two prompt-based classifiers ask the language model for a JSON
//! verdict and fall back to [`classify_prototype`] whenever the reply is
//! unusable. In mock mode they answer offline: CoLLAB with the nearest
//! prototype, ReCoLLAB with a similarity-weighted vote over the retrieved
//! exemplars.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::Action;
use crate::fingerprint::{AbstractState, Fingerprint, FingerprintError};
use crate::llm_client::LlmClient;
use crate::policies::{TeammateType, NUM_TYPES};
use crate::retrieval::{RetrievalError, TraceStep, TrajectoryDB, TrajectoryRecord};
use crate::rubric::{describe_all, fmt3, rubric_to_text, Rubric};

pub const SIGMA_FLOOR: f64 = 1e-3;
pub const PLASTIC_EPSILON: f64 = 1e-3;
/// Bumped whenever any prompt wording changes.
pub const PROMPT_VERSION: &str = "collab-prompt/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Collab,
    Recollab,
    Prototype,
    Logreg,
    Plastic,
    Random,
    Oracle,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub predicted: TeammateType,
    pub confidence: f64,
    pub rationale: String,
    pub source: Source,
    pub fallback_used: bool,
    #[serde(default)]
    pub prompt_hash: Option<String>,
}

impl ClassificationResult {
    fn new(predicted: TeammateType, confidence: f64, rationale: String, source: Source) -> Self {
        ClassificationResult {
            predicted,
            confidence: confidence.clamp(0.0, 1.0),
            rationale,
            source,
            fallback_used: false,
            prompt_hash: None,
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean floored z-distance from `fp` to every type's prototype.
pub fn prototype_distances(fp: &Fingerprint, rubric: &Rubric) -> [f64; NUM_TYPES] {
    let mut d = [f64::INFINITY; NUM_TYPES];
    for proto in &rubric.prototypes {
        let r = proto.stats.len().max(1) as f64;
        let sum: f64 = proto
            .stats
            .iter()
            .map(|s| {
                let v = fp.get(&s.feature).unwrap_or(0.0);
                (v - s.mean).abs() / s.std.max(SIGMA_FLOOR)
            })
            .sum();
        d[proto.teammate_type.index()] = sum / r;
    }
    d
}

/// Softmin weights of `d`.
fn softmin(d: &[f64]) -> Vec<f64> {
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|x| (-(x - lo)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn classify_prototype(fp: &Fingerprint, rubric: &Rubric) -> ClassificationResult {
    let d = prototype_distances(fp, rubric);
    let neg: Vec<f64> = d.iter().map(|x| -x).collect();
    let i = argmax(&neg);
    let ty = TeammateType::ALL[i];
    ClassificationResult::new(
        ty,
        softmin(&d)[i],
        format!("closest prototype is {ty} (mean z-distance {})", fmt3(d[i])),
        Source::Prototype,
    )
}

const PROMPT_INTRO: &str = "\
You are observing a teammate in a two-player cooperative cooking game. \
Onions go into a pot, cooked soup is put on a plate, and plated soup is delivered at the serving window. \
Decide which behavior type best describes the teammate, using the rubric and the observed behavior below.\n";

const PROMPT_FORMAT: &str = "\
Answer with one JSON object and nothing else: \
{\"type\": \"<label>\", \"confidence\": <number from 0 to 1>, \"rationale\": \"<one sentence>\"}. \
The label must be one of: default, pot_focused, plate_focused, serve_focused, mixed.\n";

pub fn collab_prompt(fp: &Fingerprint, rubric: &Rubric) -> String {
    recollab_prompt(fp, rubric, &[])
}

/// CoLLAB prompt with one exemplar block per retrieved record.
pub fn recollab_prompt(
    fp: &Fingerprint,
    rubric: &Rubric,
    exemplars: &[(&TrajectoryRecord, f64)],
) -> String {
    let mut p = String::from(PROMPT_INTRO);
    p.push_str("\n## Rubric\n");
    p.push_str(&rubric_to_text(rubric));
    if !exemplars.is_empty() {
        p.push_str("\n## Similar past teammates\n");
        for (i, (rec, score)) in exemplars.iter().enumerate() {
            let _ = write!(
                p,
                "\n### Example {}: type {}, similarity {}\n{}",
                i + 1,
                rec.true_type.as_str(),
                fmt3(*score),
                rec.description
            );
        }
    }
    p.push_str("\n## Observed teammate\n");
    p.push_str(&describe_all(fp));
    p.push_str("\n## Answer format\n");
    p.push_str(PROMPT_FORMAT);
    p
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("reply is not a JSON object of the required shape: {0}")]
    Shape(String),
    #[error("unknown type label {0:?}")]
    Label(String),
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Verdict {
    #[serde(rename = "type")]
    ty: String,
    confidence: f64,
    rationale: String,
}

/// Strict parse of a model reply.
pub fn parse_verdict(text: &str) -> Result<(TeammateType, f64, String), ParseError> {
    let v: Verdict =
        serde_json::from_str(text.trim()).map_err(|e| ParseError::Shape(e.to_string()))?;
    let ty = v.ty.parse().map_err(|_| ParseError::Label(v.ty.clone()))?;
    if !(0.0..=1.0).contains(&v.confidence) {
        return Err(ParseError::Confidence(v.confidence));
    }
    Ok((ty, v.confidence, v.rationale))
}

fn verdict_json(ty: TeammateType, confidence: f64, rationale: &str) -> String {
    serde_json::to_string(&Verdict {
        ty: ty.as_str().to_string(),
        confidence,
        rationale: rationale.to_string(),
    })
    .expect("verdict serializes")
}

fn ask(
    prompt: String,
    fp: &Fingerprint,
    rubric: &Rubric,
    llm: &LlmClient,
    source: Source,
    offline: &dyn Fn() -> String,
) -> ClassificationResult {
    let hash = prompt_hash(&prompt);
    let parsed = llm
        .chat(&prompt, offline)
        .map_err(|e| e.to_string())
        .and_then(|reply| parse_verdict(&reply).map_err(|e| e.to_string()));
    let mut result = match parsed {
        Ok((ty, confidence, rationale)) => {
            ClassificationResult::new(ty, confidence, rationale, source)
        }
        Err(e) => {
            log::warn!("{source:?} classification failed ({e}); using prototype fallback");
            let mut r = classify_prototype(fp, rubric);
            r.source = source;
            r.fallback_used = true;
            r
        }
    };
    result.prompt_hash = Some(hash);
    result
}

pub fn classify_collab(fp: &Fingerprint, rubric: &Rubric, llm: &LlmClient) -> ClassificationResult {
    let offline = || {
        let r = classify_prototype(fp, rubric);
        verdict_json(r.predicted, r.confidence, &r.rationale)
    };
    ask(
        collab_prompt(fp, rubric),
        fp,
        rubric,
        llm,
        Source::Collab,
        &offline,
    )
}

/// Similarity-weighted label vote; each exemplar weighs (1 + score) / 2.
/// Ties go to the type with the smaller prototype distance, then the lower
/// index.
pub fn vote(
    exemplars: &[(&TrajectoryRecord, f64)],
    fp: &Fingerprint,
    rubric: &Rubric,
) -> (TeammateType, f64) {
    let mut weight = [0.0; NUM_TYPES];
    for (rec, score) in exemplars {
        weight[rec.true_type.index()] += (1.0 + score) / 2.0;
    }
    let d = prototype_distances(fp, rubric);
    let top = weight.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let winner = (0..NUM_TYPES)
        .filter(|&i| weight[i] == top)
        .min_by(|&a, &b| d[a].total_cmp(&d[b]))
        .unwrap_or(0);
    let total: f64 = weight.iter().sum();
    let share = if total > 0.0 {
        top / total
    } else {
        1.0 / NUM_TYPES as f64
    };
    (TeammateType::ALL[winner], share)
}

pub fn classify_recollab(
    fp: &Fingerprint,
    rubric: &Rubric,
    db: &TrajectoryDB,
    k: usize,
    llm: &LlmClient,
) -> Result<ClassificationResult, RetrievalError> {
    if db.is_empty() {
        return Err(RetrievalError::EmptyDatabase);
    }
    let description = describe_all(fp);
    let query = db
        .embedder(llm)
        .and_then(|e| e.embed(&description, fp))
        .and_then(|q| db.topk(&q, k));
    let hits = match query {
        Ok(hits) => hits,
        Err(RetrievalError::InvalidK) => return Err(RetrievalError::InvalidK),
        Err(e) => {
            log::warn!("retrieval failed ({e}); using prototype fallback");
            let mut r = classify_prototype(fp, rubric);
            r.source = Source::Recollab;
            r.fallback_used = true;
            return Ok(r);
        }
    };
    let offline = || {
        let (ty, share) = vote(&hits, fp, rubric);
        verdict_json(
            ty,
            share,
            &format!(
                "{ty} holds the largest similarity-weighted share of the {} retrieved examples",
                hits.len()
            ),
        )
    };
    let prompt = recollab_prompt(fp, rubric, &hits);
    Ok(ask(prompt, fp, rubric, llm, Source::Recollab, &offline))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            lr: 0.1,
            epochs: 500,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LogRegError {
    #[error("no training samples for type {0}")]
    MissingType(TeammateType),
    #[error("every feature has zero variance")]
    DegenerateData,
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    /// One row per type; the last column is the bias.
    pub weights: Vec<Vec<f64>>,
    pub feature_order: Vec<String>,
    /// Training mean and std per kept feature.
    pub normalization: Vec<(f64, f64)>,
    /// Zero-variance features left out of the model.
    pub dropped: Vec<String>,
    /// Training loss after each epoch.
    pub loss_history: Vec<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let hi = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - hi).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

fn logits(weights: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .map(|w| {
            let r = x.len();
            w[..r].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[r]
        })
        .collect()
}

/// Mean cross-entropy plus `l2 / 2` times the squared non-bias weights, and
/// its gradient.
pub fn logreg_loss_grad(
    weights: &[Vec<f64>],
    xs: &[Vec<f64>],
    ys: &[usize],
    l2: f64,
) -> (f64, Vec<Vec<f64>>) {
    let n = xs.len() as f64;
    let mut grad: Vec<Vec<f64>> = weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let p = softmax(&logits(weights, x));
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (c, g) in grad.iter_mut().enumerate() {
            let err = p[c] - if c == y { 1.0 } else { 0.0 };
            for (j, xj) in x.iter().enumerate() {
                g[j] += err * xj / n;
            }
            g[x.len()] += err / n;
        }
    }
    loss /= n;
    for (w, g) in weights.iter().zip(grad.iter_mut()) {
        let r = w.len() - 1;
        for j in 0..r {
            loss += 0.5 * l2 * w[j] * w[j];
            g[j] += l2 * w[j];
        }
    }
    (loss, grad)
}

/// Full-batch gradient descent from zero weights on z-normalized features.
pub fn fit_logreg(
    train: &[(Fingerprint, TeammateType)],
    features: &[String],
    cfg: &LogRegConfig,
) -> Result<LogRegModel, LogRegError> {
    for ty in TeammateType::ALL {
        if !train.iter().any(|(_, t)| *t == ty) {
            return Err(LogRegError::MissingType(ty));
        }
    }
    let raw: Vec<Vec<f64>> = train
        .iter()
        .map(|(fp, _)| fp.values(features))
        .collect::<Result<_, _>>()?;
    let n = raw.len() as f64;
    let mut keep = Vec::new();
    let mut normalization = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in features.iter().enumerate() {
        let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
        let std = (raw.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std == 0.0 {
            dropped.push(name.clone());
        } else {
            keep.push(j);
            normalization.push((mean, std));
        }
    }
    if keep.is_empty() {
        return Err(LogRegError::DegenerateData);
    }
    let xs: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| {
            keep.iter()
                .zip(&normalization)
                .map(|(&j, (m, s))| (r[j] - m) / s)
                .collect()
        })
        .collect();
    let ys: Vec<usize> = train.iter().map(|(_, t)| t.index()).collect();
    let mut weights = vec![vec![0.0; keep.len() + 1]; NUM_TYPES];
    let mut loss_history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (_, grad) = logreg_loss_grad(&weights, &xs, &ys, cfg.l2);
        for (w, g) in weights.iter_mut().zip(&grad) {
            for (wj, gj) in w.iter_mut().zip(g) {
                *wj -= cfg.lr * gj;
            }
        }
        loss_history.push(logreg_loss_grad(&weights, &xs, &ys, cfg.l2).0);
    }
    Ok(LogRegModel {
        weights,
        feature_order: keep.iter().map(|&j| features[j].clone()).collect(),
        normalization,
        dropped,
        loss_history,
    })
}

/// Class probabilities for `fp`.
pub fn logreg_probs(model: &LogRegModel, fp: &Fingerprint) -> Vec<f64> {
    let x: Vec<f64> = model
        .feature_order
        .iter()
        .zip(&model.normalization)
        .map(|(name, (m, s))| (fp.get(name).unwrap_or(0.0) - m) / s)
        .collect();
    softmax(&logits(&model.weights, &x))
}

pub fn predict_logreg(model: &LogRegModel, fp: &Fingerprint) -> ClassificationResult {
    let p = logreg_probs(model, fp);
    let i = argmax(&p);
    let ty = TeammateType::ALL[i];
    ClassificationResult::new(
        ty,
        p[i],
        format!("logistic regression gives {ty} probability {}", fmt3(p[i])),
        Source::Logreg,
    )
}

#[derive(Debug, Error, PartialEq)]
pub enum PlasticError {
    #[error("belief is not a probability vector over {NUM_TYPES} types")]
    InvalidBelief,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub probs: Vec<f64>,
}

impl Belief {
    pub fn uniform() -> Belief {
        Belief {
            probs: vec![1.0 / NUM_TYPES as f64; NUM_TYPES],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.probs.len() == NUM_TYPES
            && self.probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }
}

/// Per-type action frequencies in each abstract state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasticModel {
    /// `likelihood[type][state][action]`.
    pub likelihood: Vec<Vec<[f64; 6]>>,
    pub epsilon: f64,
}

impl PlasticModel {
    /// Empirical frequencies from the probe traces of `records`. States a
    /// type never visited have all-zero rows.
    pub fn fit<'a>(records: impl IntoIterator<Item = &'a TrajectoryRecord>) -> PlasticModel {
        let mut counts = vec![vec![[0.0; 6]; AbstractState::COUNT]; NUM_TYPES];
        for rec in records {
            for step in &rec.trace {
                counts[rec.true_type.index()][step.state.index()][step.action.index()] += 1.0;
            }
        }
        for per_type in counts.iter_mut() {
            for row in per_type.iter_mut() {
                let total: f64 = row.iter().sum();
                if total > 0.0 {
                    row.iter_mut().for_each(|c| *c /= total);
                }
            }
        }
        PlasticModel {
            likelihood: counts,
            epsilon: PLASTIC_EPSILON,
        }
    }

    pub fn prob(&self, ty: usize, state: AbstractState, action: Action) -> f64 {
        self.likelihood[ty][state.index()][action.index()]
    }
}

/// b'(τ) ∝ b(τ) · (L_τ(a | s) + ε).
pub fn plastic_update(
    belief: &Belief,
    state: AbstractState,
    action: Action,
    model: &PlasticModel,
) -> Result<Belief, PlasticError> {
    if !belief.is_valid() {
        return Err(PlasticError::InvalidBelief);
    }
    let raw: Vec<f64> = (0..NUM_TYPES)
        .map(|t| belief.probs[t] * (model.prob(t, state, action) + model.epsilon))
        .collect();
    let total: f64 = raw.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(PlasticError::InvalidBelief);
    }
    Ok(Belief {
        probs: raw.iter().map(|p| p / total).collect(),
    })
}

pub fn classify_plastic(trace: &[TraceStep], model: &PlasticModel) -> ClassificationResult {
    let mut belief = Belief::uniform();
    for step in trace {
        belief = plastic_update(&belief, step.state, step.action, model)
            .expect("updates keep the belief valid");
    }
    let i = argmax(&belief.probs);
    let ty = TeammateType::ALL[i];
    ClassificationResult::new(
        ty,
        belief.probs[i],
        format!(
            "posterior {} for {ty} after {} actions",
            fmt3(belief.probs[i]),
            trace.len()
        ),
        Source::Plastic,
    )
}

pub fn classify_random<R: Rng + ?Sized>(rng: &mut R) -> ClassificationResult {
    let ty = TeammateType::ALL[rng.gen_range(0..NUM_TYPES)];
    ClassificationResult::new(
        ty,
        1.0 / NUM_TYPES as f64,
        "uniform random guess".into(),
        Source::Random,
    )
}

pub fn classify_oracle(true_type: TeammateType) -> ClassificationResult {
    ClassificationResult::new(true_type, 1.0, "ground truth".into(), Source::Oracle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::feature_names;
    use crate::rubric::{FeatureStat, Prototype, RUBRIC_SCHEMA_VERSION};

    fn fp(values: &[(&str, f64)]) -> Fingerprint {
        let mut features: Vec<(String, f64)> =
            feature_names().into_iter().map(|n| (n, 0.0)).collect();
        for (k, v) in values {
            features.iter_mut().find(|(n, _)| n == k).unwrap().1 = *v;
        }
        Fingerprint {
            features,
            probe_length: 20,
        }
    }

    fn rubric(means: [f64; NUM_TYPES]) -> Rubric {
        Rubric {
            schema_version: RUBRIC_SCHEMA_VERSION,
            layout: None,
            probe_length: 20,
            selected_features: vec!["dwell_near_Pot".into()],
            prototypes: TeammateType::ALL
                .into_iter()
                .map(|t| Prototype {
                    teammate_type: t,
                    episodes: 2,
                    stats: vec![FeatureStat {
                        feature: "dwell_near_Pot".into(),
                        mean: means[t.index()],
                        std: 1.0,
                    }],
                })
                .collect(),
        }
    }

    #[test]
    fn prototype_exact_match_wins() {
        let r = rubric([0.0, 5.0, 10.0, 15.0, 20.0]);
        let res = classify_prototype(&fp(&[("dwell_near_Pot", 10.0)]), &r);
        assert_eq!(res.predicted, TeammateType::PlateFocused);
        assert!(res.confidence > 0.5);
        let tie = classify_prototype(&fp(&[("dwell_near_Pot", 3.0)]), &rubric([3.0; 5]));
        assert_eq!(tie.predicted, TeammateType::Default);
        assert!((tie.confidence - 0.2).abs() < 1e-12);
    }

    #[test]
    fn verdict_parsing_is_strict() {
        let ok = r#"{"type":"pot_focused","confidence":0.9,"rationale":"fills pots"}"#;
        assert_eq!(parse_verdict(ok).unwrap().0, TeammateType::PotFocused);
        assert!(parse_verdict("pot_focused").is_err());
        assert!(parse_verdict(r#"{"type":"pot","confidence":0.9,"rationale":""}"#).is_err());
        assert!(parse_verdict(r#"{"type":"mixed","confidence":1.5,"rationale":""}"#).is_err());
        assert!(parse_verdict(r#"{"type":"mixed","confidence":0.5}"#).is_err());
        assert!(
            parse_verdict(r#"{"type":"mixed","confidence":0.5,"rationale":"","x":1}"#).is_err()
        );
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let model = LogRegModel {
            weights: vec![vec![0.0; 2]; NUM_TYPES],
            feature_order: vec!["dwell_near_Pot".into()],
            normalization: vec![(0.0, 1.0)],
            dropped: vec![],
            loss_history: vec![],
        };
        let res = predict_logreg(&model, &fp(&[("dwell_near_Pot", 4.0)]));
        assert_eq!(res.predicted, TeammateType::Default);
        assert!((res.confidence - 0.2).abs() < 1e-12);
    }

    #[test]
    fn plastic_identical_likelihoods_leave_belief_unchanged() {
        let model = PlasticModel {
            likelihood: vec![vec![[1.0 / 6.0; 6]; AbstractState::COUNT]; NUM_TYPES],
            epsilon: PLASTIC_EPSILON,
        };
        let b = Belief {
            probs: vec![0.1, 0.2, 0.3, 0.25, 0.15],
        };
        let s = AbstractState {
            nearest: crate::env::Station::Pot,
            held: crate::env::HeldItem::Nothing,
        };
        let next = plastic_update(&b, s, Action::North, &model).unwrap();
        for (a, b) in next.probs.iter().zip(&b.probs) {
            assert!((a - b).abs() < 1e-15);
        }
        let bad = Belief {
            probs: vec![0.5; 5],
        };
        assert_eq!(
            plastic_update(&bad, s, Action::North, &model),
            Err(PlasticError::InvalidBelief)
        );
    }

    #[test]
    fn oracle_and_random() {
        let o = classify_oracle(TeammateType::PlateFocused);
        assert_eq!(
            (o.predicted, o.confidence),
            (TeammateType::PlateFocused, 1.0)
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let r = classify_random(&mut rng);
        assert_eq!(r.confidence, 0.2);
    }
}
