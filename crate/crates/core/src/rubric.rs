//! Per-type behaviour prototypes and their text renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{feature_spec, Fingerprint, FingerprintError};
use crate::policies::TeammateType;

pub const RUBRIC_SCHEMA_VERSION: u32 = 1;
/// Bumped whenever the wording of [`describe`] or [`rubric_to_text`] changes.
pub const TEMPLATE_VERSION: &str = "collab-templates/1";

#[derive(Debug, Error, PartialEq)]
pub enum RubricError {
    #[error("type {0} has fewer than 2 samples")]
    InsufficientSamples(TeammateType),
    #[error("no features selected")]
    NoFeatures,
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    pub teammate_type: TeammateType,
    pub episodes: usize,
    pub stats: Vec<FeatureStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub schema_version: u32,
    #[serde(default)]
    pub layout: Option<String>,
    pub probe_length: u32,
    pub selected_features: Vec<String>,
    /// One entry per type, in type index order.
    pub prototypes: Vec<Prototype>,
}

impl Rubric {
    pub fn prototype(&self, ty: TeammateType) -> &Prototype {
        &self.prototypes[ty.index()]
    }

    pub fn with_layout(mut self, layout: &str) -> Rubric {
        self.layout = Some(layout.to_string());
        self
    }
}

/// Mean and population standard deviation of every selected feature, per
/// type.
pub fn build_rubric(
    dataset: &[(Fingerprint, TeammateType)],
    selected: &[String],
) -> Result<Rubric, RubricError> {
    if selected.is_empty() {
        return Err(RubricError::NoFeatures);
    }
    let mut prototypes = Vec::with_capacity(TeammateType::ALL.len());
    for ty in TeammateType::ALL {
        let rows: Vec<Vec<f64>> = dataset
            .iter()
            .filter(|(_, t)| *t == ty)
            .map(|(fp, _)| fp.values(selected))
            .collect::<Result<_, _>>()?;
        if rows.len() < 2 {
            return Err(RubricError::InsufficientSamples(ty));
        }
        let n = rows.len() as f64;
        let stats = selected
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                FeatureStat {
                    feature: name.clone(),
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        prototypes.push(Prototype {
            teammate_type: ty,
            episodes: rows.len(),
            stats,
        });
    }
    let probe_length = dataset.first().map_or(0, |(fp, _)| fp.probe_length);
    Ok(Rubric {
        schema_version: RUBRIC_SCHEMA_VERSION,
        layout: None,
        probe_length,
        selected_features: selected.to_vec(),
        prototypes,
    })
}

/// Three decimals, no negative zero.
pub fn fmt3(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.3}")
}

fn human(name: &str) -> (&str, &'static str) {
    match feature_spec(name) {
        Some(spec) => (spec.human.as_str(), spec.unit.label()),
        None => (name, "value"),
    }
}

/// Plain-text summary of `fp` over `features` (features missing from the
/// fingerprint are skipped).
pub fn describe(fp: &Fingerprint, features: &[String]) -> String {
    let mut out = format!("Probe window: {} steps.\n", fp.probe_length);
    for name in features {
        if let Some(v) = fp.get(name) {
            let (label, unit) = human(name);
            let _ = writeln!(out, "{label}: {} ({unit})", fmt3(v));
        }
    }
    out
}

/// [`describe`] over every feature the fingerprint carries.
pub fn describe_all(fp: &Fingerprint) -> String {
    let names: Vec<String> = fp.features.iter().map(|(n, _)| n.clone()).collect();
    describe(fp, &names)
}

pub fn rubric_to_text(rubric: &Rubric) -> String {
    let mut out = format!(
        "Behavior rubric: {} teammate types, {} features measured over a {}-step probe window.\n",
        rubric.prototypes.len(),
        rubric.selected_features.len(),
        rubric.probe_length
    );
    for proto in &rubric.prototypes {
        let ty = proto.teammate_type;
        let _ = writeln!(out, "\n### Type {}: {}", ty.index(), ty.as_str());
        let _ = writeln!(out, "This teammate {}.", ty.gloss());
        for stat in &proto.stats {
            let (label, _) = human(&stat.feature);
            let _ = writeln!(
                out,
                "- {label}: μ={}, σ={}",
                fmt3(stat.mean),
                fmt3(stat.std)
            );
        }
    }
    out
}
