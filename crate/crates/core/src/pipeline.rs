//! The stages behind the command line, as plain functions over a
//! [`RunConfig`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::fingerprint::RankedFeature;
use crate::harness::{HarnessError, LayoutModels};
use crate::llm_client::LlmClient;
use crate::policies::{BrLibrary, TeammateType};
use crate::retrieval::{collect_database, CollectSpec, RetrievalError, TrajectoryDB};
use crate::rollout::calibrate_library;

/// Best-response style library of every configured layout.
pub fn libraries(cfg: &RunConfig) -> Result<BTreeMap<String, BrLibrary>, HarnessError> {
    let mut out = BTreeMap::new();
    for layout in cfg
        .layouts()
        .map_err(|e| HarnessError::NoRecords(e.to_string()))?
    {
        let lib = if cfg.calibration.enabled {
            calibrate_library(
                &layout,
                &cfg.calibration.seeds(),
                cfg.calibration.opening_steps,
                &cfg.env,
                &cfg.policy,
            )?
        } else {
            BrLibrary::default()
        };
        out.insert(layout.name.clone(), lib);
    }
    Ok(out)
}

/// Probe database over the configured layouts and database seeds.
pub fn collect(
    cfg: &RunConfig,
    libraries: &BTreeMap<String, BrLibrary>,
    llm: &LlmClient,
    probe_length: u32,
) -> Result<TrajectoryDB, RetrievalError> {
    let spec = CollectSpec {
        layouts: cfg.layouts().map_err(|e| RetrievalError::Io {
            path: "layouts".into(),
            message: e.to_string(),
        })?,
        types: TeammateType::ALL.to_vec(),
        probe_length,
        seeds: cfg.retrieval.seeds.clone(),
    };
    collect_database(
        &spec,
        &cfg.env,
        &cfg.policy,
        libraries,
        cfg.retrieval.mode,
        llm,
    )
}

/// Rubric and full MI ranking of one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricEntry {
    pub rubric: crate::rubric::Rubric,
    pub ranking: Vec<RankedFeature>,
}

/// Per-layout rubrics as stored in the rubric file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RubricSet {
    pub layouts: BTreeMap<String, RubricEntry>,
}

/// Fit every layout's models on `db`.
pub fn train_models(
    cfg: &RunConfig,
    libraries: &BTreeMap<String, BrLibrary>,
    db: &TrajectoryDB,
) -> Result<Vec<LayoutModels>, HarnessError> {
    let layouts = cfg
        .layouts()
        .map_err(|e| HarnessError::NoRecords(e.to_string()))?;
    layouts
        .into_iter()
        .map(|layout| {
            let lib = libraries.get(&layout.name).cloned().unwrap_or_default();
            LayoutModels::train(
                layout,
                lib,
                db,
                cfg.fingerprint.r,
                cfg.fingerprint.bins,
                &cfg.logreg,
            )
        })
        .collect()
}

pub fn rubric_set(models: &[LayoutModels]) -> RubricSet {
    RubricSet {
        layouts: models
            .iter()
            .map(|m| {
                (
                    m.layout.name.clone(),
                    RubricEntry {
                        rubric: m.rubric.clone(),
                        ranking: m.ranking.clone(),
                    },
                )
            })
            .collect(),
    }
}

/// Models around previously built rubrics.
pub fn models_from_rubrics(
    cfg: &RunConfig,
    libraries: &BTreeMap<String, BrLibrary>,
    db: &TrajectoryDB,
    rubrics: &RubricSet,
) -> Result<Vec<LayoutModels>, HarnessError> {
    let layouts = cfg
        .layouts()
        .map_err(|e| HarnessError::NoRecords(e.to_string()))?;
    layouts
        .into_iter()
        .map(|layout| {
            let entry = rubrics
                .layouts
                .get(&layout.name)
                .ok_or_else(|| HarnessError::NoRecords(format!("rubric for {}", layout.name)))?;
            let lib = libraries.get(&layout.name).cloned().unwrap_or_default();
            LayoutModels::with_rubric(
                layout,
                lib,
                entry.rubric.clone(),
                entry.ranking.clone(),
                db,
                &cfg.logreg,
            )
        })
        .collect()
}
