//! Behaviour fingerprints over the probe window, and mutual-information
//! feature ranking.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::env::{Action, Cell, HeldItem, Layout, Observation, Station, StepEvents};
use crate::policies::{TeammateType, NUM_TYPES};

/// Index of the teammate agent whose behaviour is fingerprinted.
pub const TEAMMATE: usize = 0;

#[derive(Debug, Error, PartialEq)]
pub enum FingerprintError {
    #[error("probe history is empty")]
    EmptyHistory,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("r = {r} outside 1..={m}")]
    InvalidSelectionSize { r: usize, m: usize },
}

/// One probe step as seen at time `t`, before the joint action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeStep {
    pub obs: Observation,
    pub teammate_action: Action,
    pub controlled_action: Action,
    pub reward: f64,
    pub events: [StepEvents; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeHistory {
    pub steps: Vec<ProbeStep>,
}

impl ProbeHistory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, step: ProbeStep) {
        self.steps.push(step);
    }
}

/// Kind of value a catalog feature holds; used for rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureUnit {
    Steps,
    Fraction,
    Count,
    Reward,
}

impl FeatureUnit {
    pub fn label(self) -> &'static str {
        match self {
            FeatureUnit::Steps => "steps",
            FeatureUnit::Fraction => "fraction",
            FeatureUnit::Count => "count",
            FeatureUnit::Reward => "points",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FeatureSpec {
    pub name: String,
    pub human: String,
    pub unit: FeatureUnit,
}

fn station_phrase(s: Station) -> &'static str {
    match s {
        Station::OnionPile => "onion pile",
        Station::Pot => "pot",
        Station::PlatePile => "plate pile",
        Station::ServeWindow => "serving window",
    }
}

fn item_phrase(i: HeldItem) -> &'static str {
    match i {
        HeldItem::Nothing => "nothing",
        HeldItem::Onion => "an onion",
        HeldItem::Plate => "a plate",
        HeldItem::Soup => "soup",
    }
}

static CATALOG: LazyLock<Vec<FeatureSpec>> = LazyLock::new(|| {
    let mut out = Vec::new();
    let mut add = |name: String, human: String, unit| out.push(FeatureSpec { name, human, unit });
    for s in Station::ALL {
        add(
            format!("dwell_near_{}", s.name()),
            format!("time spent adjacent to {}", station_phrase(s)),
            FeatureUnit::Steps,
        );
    }
    for a in Action::ALL {
        add(
            format!("action_frac_{}", a.name()),
            format!("share of {} actions", a.name()),
            FeatureUnit::Fraction,
        );
    }
    for s in Station::ALL {
        add(
            format!("interact_count_{}", s.name()),
            format!("successful interactions with {}", station_phrase(s)),
            FeatureUnit::Count,
        );
    }
    add(
        "handoff_count".into(),
        "handoffs over a counter".into(),
        FeatureUnit::Count,
    );
    add(
        "blocked_count".into(),
        "blocked movement attempts".into(),
        FeatureUnit::Count,
    );
    add(
        "cumulative_reward".into(),
        "team reward collected".into(),
        FeatureUnit::Reward,
    );
    for i in HeldItem::ALL {
        add(
            format!("held_frac_{}", i.name()),
            format!("share of time holding {}", item_phrase(i)),
            FeatureUnit::Fraction,
        );
    }
    out
});

/// The fixed, ordered feature catalog.
pub fn catalog() -> &'static [FeatureSpec] {
    &CATALOG
}

pub fn feature_names() -> Vec<String> {
    CATALOG.iter().map(|f| f.name.clone()).collect()
}

pub fn feature_spec(name: &str) -> Option<&'static FeatureSpec> {
    CATALOG.iter().find(|f| f.name == name)
}

/// Ordered, named feature vector over one probe window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    #[serde(with = "ordered_map")]
    pub features: Vec<(String, f64)>,
    pub probe_length: u32,
}

impl Fingerprint {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.features
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
    }

    /// Values for `names`, in that order.
    pub fn values(&self, names: &[String]) -> Result<Vec<f64>, FingerprintError> {
        names
            .iter()
            .map(|n| {
                self.get(n)
                    .ok_or_else(|| FingerprintError::UnknownFeature(n.clone()))
            })
            .collect()
    }
}

mod ordered_map {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[(String, f64)], s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(v.len()))?;
        for (k, x) in v {
            map.serialize_entry(k, x)?;
        }
        map.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, f64)>, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Vec<(String, f64)>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map of feature name to number")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = m.next_entry::<String, f64>()? {
                    out.push((k, v));
                }
                Ok(out)
            }
        }
        d.deserialize_map(V)
    }
}

fn chebyshev(a: Cell, b: Cell) -> usize {
    a.0.abs_diff(b.0).max(a.1.abs_diff(b.1))
}

fn near(layout: &Layout, pos: Cell, station: Station) -> bool {
    layout
        .station_cells(station)
        .into_iter()
        .any(|c| chebyshev(pos, c) <= 1)
}

/// Compute every catalog feature over the teammate's behaviour in `history`.
pub fn extract_features(history: &ProbeHistory) -> Result<Fingerprint, FingerprintError> {
    if history.is_empty() {
        return Err(FingerprintError::EmptyHistory);
    }
    let p = history.len() as f64;
    let mut dwell = [0.0; 4];
    let mut actions = [0.0; 6];
    let mut interacts = [0.0; 4];
    let mut held = [0.0; 4];
    let (mut handoffs, mut blocked, mut reward) = (0.0, 0.0, 0.0);
    for step in &history.steps {
        let layout = &step.obs.state.layout;
        let me = step.obs.state.agents[TEAMMATE];
        for (k, s) in Station::ALL.into_iter().enumerate() {
            if near(layout, me.position, s) {
                dwell[k] += 1.0;
            }
        }
        actions[step.teammate_action.index()] += 1.0;
        let ev = step.events[TEAMMATE];
        interacts[0] += ev.onion_pickup as u8 as f64;
        interacts[1] += ev.pot_interaction as u8 as f64;
        interacts[2] += ev.plate_pickup as u8 as f64;
        interacts[3] += ev.delivered as u8 as f64;
        handoffs += ev.handoff as u8 as f64;
        blocked += ev.blocked as u8 as f64;
        reward += step.reward;
        held[me.held.index()] += 1.0;
    }
    let values = dwell
        .into_iter()
        .chain(actions.iter().map(|c| c / p))
        .chain(interacts)
        .chain([handoffs, blocked, reward])
        .chain(held.iter().map(|c| c / p));
    let features = CATALOG
        .iter()
        .zip(values)
        .map(|(spec, v)| (spec.name.clone(), v))
        .collect();
    Ok(Fingerprint {
        features,
        probe_length: history.len() as u32,
    })
}

/// Equal-frequency discretisation into at most `bins` bins.
///
/// Values are ranked; a value goes to bin `floor(rank * bins / n)` where
/// `rank` is the position of its first occurrence in sorted order, so equal
/// values always share a bin.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; n];
    let mut first_rank = 0;
    for (rank, &idx) in order.iter().enumerate() {
        if rank > 0 && values[idx].total_cmp(&values[order[rank - 1]]).is_ne() {
            first_rank = rank;
        }
        out[idx] = first_rank * bins / n;
    }
    out
}

/// Plug-in mutual information (nats) between two discrete sequences.
pub fn mutual_information(x: &[usize], y: &[usize]) -> f64 {
    assert_eq!(x.len(), y.len(), "sequences must have equal length");
    let n = x.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut px: BTreeMap<usize, f64> = BTreeMap::new();
    let mut py: BTreeMap<usize, f64> = BTreeMap::new();
    for (&a, &b) in x.iter().zip(y) {
        *joint.entry((a, b)).or_default() += 1.0;
        *px.entry(a).or_default() += 1.0;
        *py.entry(b).or_default() += 1.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pab = c / n;
            pab * (c * n / (px[&a] * py[&b])).ln()
        })
        .sum();
    mi.max(0.0)
}

fn column(
    dataset: &[(Fingerprint, TeammateType)],
    feature: &str,
) -> Result<Vec<f64>, FingerprintError> {
    dataset
        .iter()
        .map(|(fp, _)| {
            fp.get(feature)
                .ok_or_else(|| FingerprintError::UnknownFeature(feature.to_string()))
        })
        .collect()
}

/// `I(feature; type)` after discretising the feature into `bins` bins.
pub fn estimate_mi(
    dataset: &[(Fingerprint, TeammateType)],
    feature: &str,
    bins: usize,
) -> Result<f64, FingerprintError> {
    if dataset.is_empty() {
        return Err(FingerprintError::EmptyDataset);
    }
    if bins < 2 {
        return Err(FingerprintError::TooFewBins(bins));
    }
    if feature_spec(feature).is_none() {
        return Err(FingerprintError::UnknownFeature(feature.to_string()));
    }
    let values = column(dataset, feature)?;
    let labels: Vec<usize> = dataset.iter().map(|(_, t)| t.index()).collect();
    let mi = mutual_information(&discretize(&values, bins), &labels);
    let bound = (bins as f64).ln().min((NUM_TYPES as f64).ln());
    Ok(mi.min(bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub mi: f64,
}

/// Every catalog feature ranked by MI, descending; ties keep catalog order.
pub fn rank_features(
    dataset: &[(Fingerprint, TeammateType)],
    bins: usize,
) -> Result<Vec<RankedFeature>, FingerprintError> {
    let mut ranked = CATALOG
        .iter()
        .map(|spec| {
            Ok(RankedFeature {
                name: spec.name.clone(),
                mi: estimate_mi(dataset, &spec.name, bins)?,
            })
        })
        .collect::<Result<Vec<_>, FingerprintError>>()?;
    ranked.sort_by(|a, b| b.mi.total_cmp(&a.mi));
    Ok(ranked)
}

/// Top-`r` features by MI.
pub fn select_features(
    dataset: &[(Fingerprint, TeammateType)],
    r: usize,
    bins: usize,
) -> Result<Vec<String>, FingerprintError> {
    let m = CATALOG.len();
    if r < 1 || r > m {
        return Err(FingerprintError::InvalidSelectionSize { r, m });
    }
    Ok(rank_features(dataset, bins)?
        .into_iter()
        .take(r)
        .map(|f| f.name)
        .collect())
}

/// Coarse state used by the action-likelihood baseline: the teammate's
/// nearest station kind and what it holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AbstractState {
    pub nearest: Station,
    pub held: HeldItem,
}

impl AbstractState {
    pub const COUNT: usize = 16;

    pub fn of(obs: &Observation, agent: usize) -> AbstractState {
        let state = &obs.state;
        let me = state.agents[agent];
        let nearest = Station::ALL
            .into_iter()
            .min_by_key(|&s| {
                state
                    .layout
                    .station_cells(s)
                    .into_iter()
                    .map(|c| c.0.abs_diff(me.position.0) + c.1.abs_diff(me.position.1))
                    .min()
                    .unwrap_or(usize::MAX)
            })
            .expect("station list is non-empty");
        AbstractState {
            nearest,
            held: me.held,
        }
    }

    pub fn index(self) -> usize {
        let s = Station::ALL
            .iter()
            .position(|&x| x == self.nearest)
            .unwrap();
        s * 4 + self.held.index()
    }
}
