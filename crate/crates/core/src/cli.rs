//! Command-line front end: `collect`, `build-rubric`, `eval`, `ablate`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::harness::{
    ablate_k, ablate_probe, ablation_csv, episodes_jsonl, evaluate, pareto_csv, pareto_frontier,
    pareto_points, summaries_csv, text_table, EvalContext, HarnessError, LayoutModels, Method,
};
use crate::llm_client::{LlmClient, LlmMode};
use crate::pipeline::{
    collect, libraries, models_from_rubrics, rubric_set, train_models, RubricSet,
};
use crate::policies::BrLibrary;
use crate::retrieval::{RetrievalError, TrajectoryDB};
use crate::rubric::fmt3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("missing {stage} artifact at {path}; run `collab {command}` first")]
    MissingArtifact {
        stage: &'static str,
        command: &'static str,
        path: PathBuf,
    },
    #[error("{0} already exists; pass --overwrite to replace it")]
    ArtifactExists(PathBuf),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

impl CliError {
    /// Short machine-readable kind used in the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid(_) => "config_invalid",
            CliError::MissingArtifact { .. } => "missing_artifact",
            CliError::ArtifactExists(_) => "artifact_exists",
            CliError::Io { .. } => "io",
            CliError::Harness(_) => "harness",
            CliError::Retrieval(_) => "retrieval",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            CliError::MissingArtifact { .. } | CliError::ArtifactExists(_) => 3,
            _ => 1,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "collab",
    version,
    about = "Teammate type inference and best-response routing"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Restrict to these layouts (repeatable).
    #[arg(long = "layout", global = true)]
    pub layouts: Vec<String>,
    /// Evaluate these methods (repeatable).
    #[arg(long = "method", global = true)]
    pub methods: Vec<Method>,
    /// First evaluation seed group; the configured number of groups follows.
    #[arg(long, global = true)]
    pub seed_base: Option<u64>,
    /// Answer offline without any network access.
    #[arg(long, global = true, conflicts_with = "live")]
    pub mock: bool,
    /// Call the configured language-model endpoint.
    #[arg(long, global = true)]
    pub live: bool,
    /// Override any config field, e.g. `--set retrieval.k=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Replace existing database or rubric files.
    #[arg(long, global = true)]
    pub overwrite: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe every layout and type and write the trajectory database.
    Collect,
    /// Select features by mutual information and write the rubric file.
    BuildRubric,
    /// Evaluate the configured methods.
    Eval,
    /// Sweep probe length or retrieval count.
    Ablate {
        #[arg(value_enum)]
        which: AblationKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationKind {
    Probe,
    K,
}

impl clap::ValueEnum for Method {
    fn value_variants<'a>() -> &'a [Self] {
        &Method::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

/// Effective configuration: file, then `--set`, then the dedicated flags.
pub fn resolve_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if !common.layouts.is_empty() {
        cfg.eval.layouts = common.layouts.clone();
    }
    if !common.methods.is_empty() {
        cfg.eval.methods = common.methods.clone();
    }
    if let Some(base) = common.seed_base {
        let n = cfg.eval.seeds.len() as u64;
        cfg.eval.seeds = (base..base + n).collect();
    }
    if common.mock {
        cfg.llm.mode = LlmMode::Mock;
    }
    if common.live {
        cfg.llm.mode = LlmMode::Live;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn client(cfg: &RunConfig) -> LlmClient {
    LlmClient::new(cfg.llm.clone())
}

fn ensure_writable(path: &Path, overwrite: bool) -> Result<(), CliError> {
    if path.exists() && !overwrite {
        return Err(CliError::ArtifactExists(path.to_path_buf()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Fresh `<output_dir>/<command>-<config hash>[-n]` directory.
pub fn run_dir(cfg: &RunConfig, command: &str) -> Result<PathBuf, CliError> {
    let hash = hex::encode(Sha256::digest(cfg.to_toml().as_bytes()));
    let base = format!("{command}-{}", &hash[..8]);
    let root = &cfg.paths.output_dir;
    let mut dir = root.join(&base);
    let mut n = 2;
    while dir.exists() {
        dir = root.join(format!("{base}-{n}"));
        n += 1;
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    write(&dir.join("config.toml"), &cfg.to_toml())?;
    Ok(dir)
}

fn load_db(cfg: &RunConfig) -> Result<TrajectoryDB, CliError> {
    let path = &cfg.paths.db;
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            stage: "retrieval",
            command: "collect",
            path: path.clone(),
        });
    }
    Ok(TrajectoryDB::load(path)?)
}

fn load_rubrics(cfg: &RunConfig) -> Result<RubricSet, CliError> {
    let path = &cfg.paths.rubric;
    if !path.exists() {
        return Err(CliError::MissingArtifact {
            stage: "rubric",
            command: "build-rubric",
            path: path.clone(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

/// Libraries stored with the database, calibrating any layout it lacks.
fn db_libraries(
    cfg: &RunConfig,
    db: &TrajectoryDB,
) -> Result<BTreeMap<String, BrLibrary>, CliError> {
    if cfg
        .eval
        .layouts
        .iter()
        .all(|l| db.metadata.libraries.contains_key(l))
    {
        Ok(db.metadata.libraries.clone())
    } else {
        Ok(libraries(cfg)?)
    }
}

pub fn cmd_collect(cfg: &RunConfig, overwrite: bool) -> Result<String, CliError> {
    ensure_writable(&cfg.paths.db, overwrite)?;
    let libs = libraries(cfg)?;
    let db = collect(cfg, &libs, &client(cfg), cfg.retrieval.probe_length)?;
    db.save(&cfg.paths.db)?;
    Ok(format!(
        "{} records written to {}\n",
        db.len(),
        cfg.paths.db.display()
    ))
}

pub fn cmd_build_rubric(cfg: &RunConfig, overwrite: bool) -> Result<String, CliError> {
    let db = load_db(cfg)?;
    ensure_writable(&cfg.paths.rubric, overwrite)?;
    let libs = db_libraries(cfg, &db)?;
    let models = train_models(cfg, &libs, &db)?;
    let set = rubric_set(&models);
    let json = serde_json::to_string_pretty(&set).map_err(|e| io_err(&cfg.paths.rubric, e))?;
    write(&cfg.paths.rubric, &(json + "\n"))?;
    let mut out = String::new();
    for (layout, entry) in &set.layouts {
        out.push_str(&format!(
            "{layout}: top {} features by mutual information (nats)\n",
            entry.rubric.selected_features.len()
        ));
        for f in entry
            .ranking
            .iter()
            .take(entry.rubric.selected_features.len())
        {
            out.push_str(&format!("  {:<28} {}\n", f.name, fmt3(f.mi)));
        }
    }
    out.push_str(&format!(
        "rubric written to {}\n",
        cfg.paths.rubric.display()
    ));
    Ok(out)
}

fn eval_models(cfg: &RunConfig) -> Result<Vec<LayoutModels>, CliError> {
    let db = load_db(cfg)?;
    let rubrics = load_rubrics(cfg)?;
    let libs = db_libraries(cfg, &db)?;
    Ok(models_from_rubrics(cfg, &libs, &db, &rubrics)?)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let models = eval_models(cfg)?;
    let llm = client(cfg);
    let ctx = EvalContext {
        env: &cfg.env,
        policy: &cfg.policy,
        llm: &llm,
        k: cfg.retrieval.k,
    };
    let (episodes, summaries) = evaluate(
        &cfg.eval.methods,
        &models,
        &ctx,
        &cfg.eval.seeds,
        cfg.eval.episodes_per_type,
        cfg.eval.probe_length,
    )?;
    let dir = run_dir(cfg, "eval")?;
    let tables = format!(
        "{}\n{}",
        text_table(&summaries, true),
        text_table(&summaries, false)
    );
    let points = pareto_points(&summaries);
    let mut frontier = Vec::new();
    for m in &models {
        let prefix = format!("{}/", m.layout.name);
        let local: Vec<_> = points
            .iter()
            .filter(|p| p.label.starts_with(&prefix))
            .cloned()
            .collect();
        frontier.extend(pareto_frontier(&local));
    }
    write(&dir.join("episodes.jsonl"), &episodes_jsonl(&episodes))?;
    write(&dir.join("summary.csv"), &summaries_csv(&summaries))?;
    write(&dir.join("tables.txt"), &tables)?;
    write(&dir.join("pareto.csv"), &pareto_csv(&points, &frontier))?;
    Ok(format!("{tables}\nresults written to {}\n", dir.display()))
}

pub fn cmd_ablate(cfg: &RunConfig, which: AblationKind) -> Result<String, CliError> {
    let llm = client(cfg);
    let ctx = EvalContext {
        env: &cfg.env,
        policy: &cfg.policy,
        llm: &llm,
        k: cfg.retrieval.k,
    };
    let groups = &cfg.eval.seeds;
    let reps = cfg.eval.episodes_per_type;
    let mut episodes = Vec::new();
    let mut rows = Vec::new();
    let name = match which {
        AblationKind::Probe => {
            let libs = libraries(cfg)?;
            for layout in cfg.layouts()? {
                let models_at = |p: u32| -> Result<LayoutModels, HarnessError> {
                    let mut one = cfg.clone();
                    one.eval.layouts = vec![layout.name.clone()];
                    let db = collect(&one, &libs, &llm, p)?;
                    Ok(train_models(&one, &libs, &db)?.remove(0))
                };
                let (e, r) = ablate_probe(
                    cfg.ablation.method,
                    &cfg.ablation.probe_values,
                    &models_at,
                    &ctx,
                    groups,
                    reps,
                )?;
                episodes.extend(e);
                rows.extend(r);
            }
            "ablate-probe"
        }
        AblationKind::K => {
            for models in eval_models(cfg)? {
                let (e, r) = ablate_k(
                    &cfg.ablation.k_values,
                    &models,
                    &ctx,
                    groups,
                    reps,
                    cfg.eval.probe_length,
                )?;
                episodes.extend(e);
                rows.extend(r);
            }
            "ablate-k"
        }
    };
    let dir = run_dir(cfg, name)?;
    let csv = ablation_csv(&rows);
    write(&dir.join("episodes.jsonl"), &episodes_jsonl(&episodes))?;
    write(&dir.join("ablation.csv"), &csv)?;
    let mut out = format!(
        "{:<22} {:<10} {:>6} {:>14} {:>14}\n",
        "layout", "parameter", "value", "accuracy", "return"
    );
    for r in &rows {
        let s = &r.summary;
        out.push_str(&format!(
            "{:<22} {:<10} {:>6} {:>14} {:>14}\n",
            s.layout,
            r.parameter,
            r.value,
            format!("{:.2}±{:.2}", s.accuracy_mean, s.accuracy_std),
            format!("{:.1}±{:.1}", s.return_mean, s.return_std)
        ));
    }
    out.push_str(&format!("results written to {}\n", dir.display()));
    Ok(out)
}

/// Parse-free entry point used by the binary and tests.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = resolve_config(&cli.common)?;
    match &cli.command {
        Command::Collect => cmd_collect(&cfg, cli.common.overwrite),
        Command::BuildRubric => cmd_build_rubric(&cfg, cli.common.overwrite),
        Command::Eval => cmd_eval(&cfg),
        Command::Ablate { which } => cmd_ablate(&cfg, *which),
    }
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            e.exit_code()
        }
    }
}
