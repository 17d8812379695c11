//! Run configuration: one TOML file, any field overridable with
//! `section.key=value`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::LogRegConfig;
use crate::env::{shipped_layout, EnvConfig, Layout};
use crate::fingerprint::catalog;
use crate::harness::{episode_seeds, Method};
use crate::llm_client::LlmConfig;
use crate::policies::PolicyConfig;
use crate::retrieval::EmbeddingMode;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("bad override {0:?}: expected section.key=value")]
    BadOverride(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Pick each type's best-response style by measured return; otherwise
    /// use the fixed complement mapping.
    pub enabled: bool,
    pub seed_start: u64,
    pub episodes: u64,
    /// Length of the optional opening a best response may keep from the
    /// default response.
    pub opening_steps: u32,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            enabled: true,
            seed_start: 900_000,
            episodes: 100,
            opening_steps: 20,
        }
    }
}

impl CalibrationConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (self.seed_start..self.seed_start + self.episodes).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintConfig {
    pub bins: usize,
    pub r: usize,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig { bins: 8, r: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub mode: EmbeddingMode,
    pub k: usize,
    /// One database episode per seed, per layout and type.
    pub seeds: Vec<u64>,
    pub probe_length: u32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            mode: EmbeddingMode::FeatureZScore,
            k: 5,
            seeds: (0..10).collect(),
            probe_length: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub layouts: Vec<String>,
    /// One seed group per entry; accuracy and return spread is taken across
    /// groups.
    pub seeds: Vec<u64>,
    pub episodes_per_type: u64,
    pub probe_length: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: Method::ALL.to_vec(),
            layouts: crate::env::SHIPPED_LAYOUTS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            seeds: (100..105).collect(),
            episodes_per_type: 1,
            probe_length: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub method: Method,
    pub probe_values: Vec<u32>,
    pub k_values: Vec<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            method: Method::Prototype,
            probe_values: vec![5, 10, 20, 40, 80],
            k_values: vec![1, 3, 5, 10],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory of `<name>.layout` files; shipped layouts when unset.
    pub layouts_dir: Option<PathBuf>,
    pub db: PathBuf,
    pub rubric: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            layouts_dir: None,
            db: "artifacts/db.jsonl".into(),
            rubric: "artifacts/rubric.json".into(),
            output_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub calibration: CalibrationConfig,
    pub fingerprint: FingerprintConfig,
    pub retrieval: RetrievalConfig,
    pub llm: LlmConfig,
    pub logreg: LogRegConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub paths: PathsConfig,
}

/// Parse `value` as a TOML value, or take it as a bare string.
fn override_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Set `section.key=value` (any depth) inside `table`.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::BadOverride(assignment.to_string());
    let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    let (last, parents) = keys.split_last().ok_or_else(bad)?;
    let mut cur = table;
    for k in parents {
        cur = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(bad)?;
    }
    cur.insert(last.to_string(), override_value(value.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<RunConfig, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| invalid(e.to_string()))
    }

    /// Reads `path` (defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| ConfigError::Read {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?,
            None => String::new(),
        };
        RunConfig::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn layout(&self, name: &str) -> Result<Arc<Layout>, ConfigError> {
        match &self.paths.layouts_dir {
            Some(dir) => {
                let path = dir.join(format!("{name}.layout"));
                let text = fs::read_to_string(&path).map_err(|e| ConfigError::Read {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                Layout::parse(name, &text)
                    .map(Arc::new)
                    .map_err(|e| invalid(format!("layout {name}: {e}")))
            }
            None => shipped_layout(name).ok_or_else(|| invalid(format!("unknown layout {name:?}"))),
        }
    }

    pub fn layouts(&self) -> Result<Vec<Arc<Layout>>, ConfigError> {
        self.eval.layouts.iter().map(|n| self.layout(n)).collect()
    }

    /// Checks everything that does not depend on upstream artifacts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| invalid(e.to_string()))?;
        self.policy.validate().map_err(|e| invalid(e.0))?;
        self.llm.validate().map_err(invalid)?;
        let m = catalog().len();
        if self.fingerprint.bins < 2 {
            return Err(invalid("fingerprint.bins must be >= 2"));
        }
        if !(1..=m).contains(&self.fingerprint.r) {
            return Err(invalid(format!("fingerprint.r must be in 1..={m}")));
        }
        if self.retrieval.k < 1 {
            return Err(invalid("retrieval.k must be >= 1"));
        }
        if self.retrieval.seeds.len() < 2 {
            return Err(invalid("retrieval.seeds needs at least 2 seeds per type"));
        }
        let horizon = self.env.horizon;
        let probes = std::iter::once(self.eval.probe_length)
            .chain(std::iter::once(self.retrieval.probe_length))
            .chain(self.ablation.probe_values.iter().copied());
        for p in probes {
            if p < 1 || p >= horizon {
                return Err(invalid(format!("probe length {p} must be in 1..{horizon}")));
            }
        }
        if self.ablation.k_values.contains(&0) {
            return Err(invalid("ablation.k_values must be >= 1"));
        }
        if self.eval.methods.is_empty()
            || self.eval.layouts.is_empty()
            || self.eval.seeds.is_empty()
        {
            return Err(invalid("eval needs at least one method, layout and seed"));
        }
        if self.eval.episodes_per_type < 1 {
            return Err(invalid("eval.episodes_per_type must be >= 1"));
        }
        if self.logreg.epochs < 1 || self.logreg.lr.is_nan() || self.logreg.lr <= 0.0 || self.logreg.l2 < 0.0 {
            return Err(invalid("logreg needs epochs >= 1, lr > 0, l2 >= 0"));
        }
        self.layouts()?;
        self.check_seed_hygiene()
    }

    /// Database, calibration and evaluation seeds must not overlap.
    pub fn check_seed_hygiene(&self) -> Result<(), ConfigError> {
        let db: BTreeSet<u64> = self.retrieval.seeds.iter().copied().collect();
        if db.len() != self.retrieval.seeds.len() {
            return Err(invalid("retrieval.seeds has duplicates"));
        }
        let eval: BTreeSet<u64> = episode_seeds(&self.eval.seeds, self.eval.episodes_per_type)
            .into_iter()
            .map(|(_, _, s)| s)
            .collect();
        let calib: BTreeSet<u64> = if self.calibration.enabled {
            self.calibration.seeds().into_iter().collect()
        } else {
            BTreeSet::new()
        };
        for (a, b, what) in [
            (&db, &eval, "database and evaluation"),
            (&db, &calib, "database and calibration"),
            (&eval, &calib, "evaluation and calibration"),
        ] {
            if let Some(s) = a.intersection(b).next() {
                return Err(invalid(format!("{what} seeds overlap (seed {s})")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn defaults_match_reference_setup() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.env.horizon, 400);
        assert_eq!(cfg.eval.probe_length, 20);
        assert_eq!(cfg.retrieval.probe_length, 20);
        assert_eq!(cfg.retrieval.k, 5);
        assert_eq!(cfg.retrieval.seeds.len(), 10);
        assert_eq!(cfg.ablation.probe_values, vec![5, 10, 20, 40, 80]);
        assert_eq!(cfg.ablation.k_values, vec![1, 3, 5, 10]);
        assert!(cfg.fingerprint.r <= 20);
        assert_eq!(cfg.eval.layouts.len(), 3);
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("config/default.toml");
        assert_eq!(
            RunConfig::load(Some(&path), &[]).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn overrides_set_nested_values() {
        let cfg = RunConfig::from_toml(
            "",
            &[
                "retrieval.k=3".into(),
                "llm.model_id=other-model".into(),
                "eval.seeds=[200, 201]".into(),
                "eval.methods=[\"oracle\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.retrieval.k, 3);
        assert_eq!(cfg.llm.model_id, "other-model");
        assert_eq!(cfg.eval.seeds, vec![200, 201]);
        assert_eq!(cfg.eval.methods, vec![Method::Oracle]);
    }

    #[test]
    fn rejects_typos_and_overlapping_seeds() {
        assert!(RunConfig::from_toml("[retrieval]\nkk = 3\n", &[]).is_err());
        assert!(matches!(
            RunConfig::from_toml("", &["novalue".into()]),
            Err(ConfigError::BadOverride(_))
        ));
        let cfg = RunConfig::from_toml("", &["eval.seeds=[3]".into()]).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml("", &["eval.probe_length=400".into()]).unwrap();
        assert!(cfg.validate().is_err());
    }
}
