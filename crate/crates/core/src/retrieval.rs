//! Offline trajectory database, description embeddings and exact top-k
//! cosine retrieval.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvConfig, EnvError, Layout};
use crate::fingerprint::{
    extract_features, feature_names, AbstractState, Fingerprint, FingerprintError, ProbeHistory,
    TEAMMATE,
};
use crate::llm_client::{LlmClient, LlmError};
use crate::policies::{BrLibrary, PolicyConfig, TeammateType};
use crate::rollout::run_probe;
use crate::rubric::{describe_all, TEMPLATE_VERSION};

pub const DB_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding mode mismatch: database uses {db:?}, record uses {got:?}")]
    ModeMismatch {
        db: EmbeddingMode,
        got: EmbeddingMode,
    },
    #[error("cosine of a zero vector")]
    ZeroVector,
    #[error("database is empty")]
    EmptyDatabase,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("embedding service unavailable: {0}")]
    ServiceUnavailable(#[from] LlmError),
    #[error("feature z-score statistics are missing")]
    MissingStats,
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RetrievalError {
    RetrievalError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    FeatureZScore,
    ExternalService,
}

/// Global per-feature mean and population std used by z-score embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub features: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreStats {
    /// Statistics over every catalog feature of `fps`.
    pub fn fit(fps: &[&Fingerprint]) -> Result<ZScoreStats, RetrievalError> {
        if fps.is_empty() {
            return Err(RetrievalError::EmptyDatabase);
        }
        let features = feature_names();
        let rows: Vec<Vec<f64>> = fps
            .iter()
            .map(|fp| fp.values(&features))
            .collect::<Result<_, _>>()?;
        let n = rows.len() as f64;
        let mut mean = vec![0.0; features.len()];
        let mut std = vec![0.0; features.len()];
        for j in 0..features.len() {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            std[j] = var.sqrt();
        }
        Ok(ZScoreStats {
            features,
            mean,
            std,
        })
    }

    pub fn dimension(&self) -> usize {
        self.features.len()
    }
}

/// L2-normalize `v`; the zero vector maps to e₁.
pub fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

pub fn embed_zscore(fp: &Fingerprint, stats: &ZScoreStats) -> Result<Vec<f64>, RetrievalError> {
    let values = fp.values(&stats.features)?;
    let z = values
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(v, (m, s))| if *s == 0.0 { 0.0 } else { (v - m) / s })
        .collect();
    Ok(normalize(z))
}

/// Where embeddings come from.
#[derive(Clone, Copy)]
pub enum Embedder<'a> {
    FeatureZScore(&'a ZScoreStats),
    ExternalService(&'a LlmClient),
}

impl Embedder<'_> {
    pub fn mode(&self) -> EmbeddingMode {
        match self {
            Embedder::FeatureZScore(_) => EmbeddingMode::FeatureZScore,
            Embedder::ExternalService(_) => EmbeddingMode::ExternalService,
        }
    }

    pub fn embed(&self, description: &str, fp: &Fingerprint) -> Result<Vec<f64>, RetrievalError> {
        match self {
            Embedder::FeatureZScore(stats) => embed_zscore(fp, stats),
            Embedder::ExternalService(client) => Ok(normalize(client.embed_remote(description)?)),
        }
    }
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, RetrievalError> {
    if u.len() != v.len() {
        return Err(RetrievalError::DimensionMismatch {
            expected: u.len(),
            got: v.len(),
        });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0) + 0.0)
}

/// Teammate's coarse state and action at one probe step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub state: AbstractState,
    pub action: Action,
}

pub fn trace_of(history: &ProbeHistory) -> Vec<TraceStep> {
    history
        .steps
        .iter()
        .map(|s| TraceStep {
            state: AbstractState::of(&s.obs, TEAMMATE),
            action: s.teammate_action,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub layout: String,
    pub true_type: TeammateType,
    pub probe_length: u32,
    pub fingerprint: Fingerprint,
    pub description: String,
    pub embedding: Vec<f64>,
    pub seed: u64,
    #[serde(default)]
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbMetadata {
    pub schema_version: u32,
    pub embedding_mode: EmbeddingMode,
    pub dimension: usize,
    pub rubric_version: String,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default)]
    pub zscore: Option<ZScoreStats>,
    /// Best-response library each layout was probed with.
    #[serde(default)]
    pub libraries: BTreeMap<String, BrLibrary>,
}

impl DbMetadata {
    pub fn zscore(stats: ZScoreStats) -> DbMetadata {
        DbMetadata {
            schema_version: DB_SCHEMA_VERSION,
            embedding_mode: EmbeddingMode::FeatureZScore,
            dimension: stats.dimension(),
            rubric_version: TEMPLATE_VERSION.to_string(),
            embedding_model: None,
            zscore: Some(stats),
            libraries: BTreeMap::new(),
        }
    }

    pub fn external(model: &str, dimension: usize) -> DbMetadata {
        DbMetadata {
            schema_version: DB_SCHEMA_VERSION,
            embedding_mode: EmbeddingMode::ExternalService,
            dimension,
            rubric_version: TEMPLATE_VERSION.to_string(),
            embedding_model: Some(model.to_string()),
            zscore: None,
            libraries: BTreeMap::new(),
        }
    }
}

/// Append-only store of labelled probe trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDB {
    pub metadata: DbMetadata,
    records: Vec<TrajectoryRecord>,
    ids: HashSet<String>,
}

impl TrajectoryDB {
    pub fn new(metadata: DbMetadata) -> TrajectoryDB {
        TrajectoryDB {
            metadata,
            records: Vec::new(),
            ids: HashSet::new(),
        }
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, record: TrajectoryRecord) -> Result<(), RetrievalError> {
        if record.embedding.len() != self.metadata.dimension {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.metadata.dimension,
                got: record.embedding.len(),
            });
        }
        if self.ids.contains(&record.id) {
            return Err(RetrievalError::DuplicateId(record.id));
        }
        self.ids.insert(record.id.clone());
        self.records.push(record);
        Ok(())
    }

    /// Embedder matching this database's mode.
    pub fn embedder<'a>(&'a self, client: &'a LlmClient) -> Result<Embedder<'a>, RetrievalError> {
        match self.metadata.embedding_mode {
            EmbeddingMode::FeatureZScore => self
                .metadata
                .zscore
                .as_ref()
                .map(Embedder::FeatureZScore)
                .ok_or(RetrievalError::MissingStats),
            EmbeddingMode::ExternalService => Ok(Embedder::ExternalService(client)),
        }
    }

    /// Exact scan. Sorted by score descending, ties in insertion order.
    pub fn topk(
        &self,
        query: &[f64],
        k: usize,
    ) -> Result<Vec<(&TrajectoryRecord, f64)>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.records.is_empty() {
            return Err(RetrievalError::EmptyDatabase);
        }
        let mut scored = self
            .records
            .iter()
            .map(|r| Ok((r, cosine(query, &r.embedding)?)))
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        scored.truncate(k);
        Ok(scored)
    }

    /// Records matching `keep`, same metadata.
    pub fn subset(&self, keep: impl Fn(&TrajectoryRecord) -> bool) -> TrajectoryDB {
        let mut db = TrajectoryDB::new(self.metadata.clone());
        for r in self.records.iter().filter(|r| keep(r)) {
            db.ids.insert(r.id.clone());
            db.records.push(r.clone());
        }
        db
    }

    pub fn for_layout(&self, layout: &str) -> TrajectoryDB {
        self.subset(|r| r.layout == layout)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut seeds: Vec<u64> = self.records.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        seeds
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    /// Writes `path` (one record per line) and `path.meta.json`.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let meta = serde_json::to_string_pretty(&self.metadata).map_err(|e| io_err(path, e))?;
        let meta_path = Self::meta_path(path);
        fs::write(&meta_path, meta + "\n").map_err(|e| io_err(&meta_path, e))?;
        let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut out = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|e| io_err(path, e))?;
            writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
        }
        out.flush().map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<TrajectoryDB, RetrievalError> {
        let meta_path = Self::meta_path(path);
        let meta = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
        let metadata: DbMetadata =
            serde_json::from_str(&meta).map_err(|e| io_err(&meta_path, e))?;
        let mut db = TrajectoryDB::new(metadata);
        let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TrajectoryRecord = serde_json::from_str(&line)
                .map_err(|e| io_err(path, format!("line {}: {e}", i + 1)))?;
            db.insert(record)?;
        }
        Ok(db)
    }
}

/// What to collect: `seeds.len()` episodes per (layout, type).
#[derive(Debug, Clone)]
pub struct CollectSpec {
    pub layouts: Vec<Arc<Layout>>,
    pub types: Vec<TeammateType>,
    pub probe_length: u32,
    pub seeds: Vec<u64>,
}

/// Runs every probe, then embeds and inserts in (layout, type, seed) order.
/// In z-score mode the statistics are fitted on the collected fingerprints.
pub fn collect_database(
    spec: &CollectSpec,
    env: &EnvConfig,
    policy: &PolicyConfig,
    libraries: &BTreeMap<String, BrLibrary>,
    mode: EmbeddingMode,
    client: &LlmClient,
) -> Result<TrajectoryDB, RetrievalError> {
    let fallback = BrLibrary::default();
    let mut pending = Vec::new();
    for layout in &spec.layouts {
        let library = libraries.get(&layout.name).unwrap_or(&fallback);
        for &ty in &spec.types {
            for &seed in &spec.seeds {
                let history = run_probe(
                    layout.clone(),
                    ty,
                    spec.probe_length,
                    seed,
                    env,
                    policy,
                    library,
                )?;
                let fingerprint = extract_features(&history)?;
                pending.push(TrajectoryRecord {
                    id: format!("{}-{}-{seed}", layout.name, ty.as_str()),
                    layout: layout.name.clone(),
                    true_type: ty,
                    probe_length: spec.probe_length,
                    description: describe_all(&fingerprint),
                    fingerprint,
                    embedding: Vec::new(),
                    seed,
                    trace: trace_of(&history),
                });
            }
        }
    }
    let mode = if client.is_mock() {
        EmbeddingMode::FeatureZScore
    } else {
        mode
    };
    let stats;
    let (embedder, metadata) = match mode {
        EmbeddingMode::FeatureZScore => {
            let fps: Vec<&Fingerprint> = pending.iter().map(|r| &r.fingerprint).collect();
            stats = ZScoreStats::fit(&fps)?;
            (
                Embedder::FeatureZScore(&stats),
                DbMetadata::zscore(stats.clone()),
            )
        }
        EmbeddingMode::ExternalService => {
            let first = pending.first().ok_or(RetrievalError::EmptyDatabase)?;
            let dim = client.embed_remote(&first.description)?.len();
            (
                Embedder::ExternalService(client),
                DbMetadata::external(&client.config().embedding_model_id, dim),
            )
        }
    };
    let mut metadata = metadata;
    for layout in &spec.layouts {
        let lib = libraries.get(&layout.name).unwrap_or(&fallback).clone();
        metadata.libraries.insert(layout.name.clone(), lib);
    }
    let mut db = TrajectoryDB::new(metadata);
    for mut record in pending {
        record.embedding = embedder.embed(&record.description, &record.fingerprint)?;
        db.insert(record)?;
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn record(id: &str, embedding: Vec<f64>, ty: TeammateType) -> TrajectoryRecord {
        let fp = Fingerprint {
            features: feature_names().into_iter().map(|n| (n, 0.0)).collect(),
            probe_length: 20,
        };
        TrajectoryRecord {
            id: id.into(),
            layout: "cramped_room".into(),
            true_type: ty,
            probe_length: 20,
            description: describe_all(&fp),
            fingerprint: fp,
            embedding,
            seed: 0,
            trace: Vec::new(),
        }
    }

    fn db3() -> TrajectoryDB {
        let stats = ZScoreStats {
            features: vec!["a".into(), "b".into(), "c".into()],
            mean: vec![0.0; 3],
            std: vec![1.0; 3],
        };
        let mut db = TrajectoryDB::new(DbMetadata::zscore(stats));
        db.insert(record("x", vec![1.0, 0.0, 0.0], TeammateType::Default))
            .unwrap();
        db.insert(record("y", vec![0.0, 1.0, 0.0], TeammateType::Mixed))
            .unwrap();
        db.insert(record("z", vec![1.0, 0.0, 0.0], TeammateType::PotFocused))
            .unwrap();
        db
    }

    #[test]
    fn cosine_hand_values() {
        assert_abs_diff_eq!(
            cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(),
            32.0 / (14f64.sqrt() * 77f64.sqrt()),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(),
            0.974631846,
            epsilon = 1e-9
        );
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(RetrievalError::ZeroVector)
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_vector_normalizes_to_e1() {
        assert_eq!(normalize(vec![0.0; 4]), vec![1.0, 0.0, 0.0, 0.0]);
        let v = normalize(vec![3.0, 4.0]);
        assert_abs_diff_eq!(v[0], 0.6, epsilon = 1e-15);
    }

    #[test]
    fn topk_ties_keep_insertion_order() {
        let db = db3();
        let hits = db.topk(&[1.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(hits[0].0.id, "x");
        assert_eq!(hits[1].0.id, "z");
        assert_eq!(db.topk(&[1.0, 0.0, 0.0], 10).unwrap().len(), 3);
        assert!(matches!(
            db.topk(&[1.0, 0.0, 0.0], 0),
            Err(RetrievalError::InvalidK)
        ));
    }

    #[test]
    fn insert_rejects_bad_records() {
        let mut db = db3();
        assert!(matches!(
            db.insert(record("w", vec![1.0, 0.0], TeammateType::Default)),
            Err(RetrievalError::DimensionMismatch {
                expected: 3,
                got: 2
            })
        ));
        assert!(matches!(
            db.insert(record("x", vec![1.0, 0.0, 0.0], TeammateType::Default)),
            Err(RetrievalError::DuplicateId(_))
        ));
        let empty = db.subset(|_| false);
        assert!(matches!(
            empty.topk(&[1.0, 0.0, 0.0], 1),
            Err(RetrievalError::EmptyDatabase)
        ));
    }

    #[test]
    fn zscore_constant_feature_is_zero_component() {
        let names = feature_names();
        let mut a = record("a", vec![], TeammateType::Default).fingerprint;
        let mut b = a.clone();
        a.features[0].1 = 1.0;
        b.features[0].1 = 3.0;
        let stats = ZScoreStats::fit(&[&a, &b]).unwrap();
        assert_eq!(stats.dimension(), names.len());
        let e = embed_zscore(&a, &stats).unwrap();
        assert_abs_diff_eq!(e[0], -1.0, epsilon = 1e-12);
        assert!(e[1..].iter().all(|&x| x == 0.0));
        let mean_fp = {
            let mut m = a.clone();
            m.features[0].1 = 2.0;
            m
        };
        assert_eq!(embed_zscore(&mean_fp, &stats).unwrap()[0], 1.0);
    }
}
