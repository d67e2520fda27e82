//! Config-driven pipeline: train → select → inlp → {transfer, ablate,
//! intensity, pwcca, temporal}, with content-addressed, resumable stages.

mod config;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::hash::{sha256_file, sha256_hex};

pub use config::{
    has_errors, load_experiment, load_model_config, validate_config, ConfigKind, ExperimentConfig, ExperimentKind,
    Finding, ModelConfig, ProbeClass, ResolvedExperiment, Severity, SliceFilter, StageName, StageToggles,
    PROMPT_PLACEHOLDER,
};
pub use report::{render_report, REPORT_FILE};
pub use stages::{GeneralSummary, InlpSummaryRow, GENERAL_LABEL, GENERAL_TASK};

pub const RUN_MANIFEST: &str = "run_manifest.json";
const STAGE_DIR: &str = ".stages";

/// Bump a stage's version when its outputs change meaning; cached outputs
/// from other versions are recomputed.
fn stage_version(_: StageName) -> u32 {
    1
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Replaces the config's stage toggles.
    pub stages: Option<StageToggles>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Cached,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: StageName,
    pub status: StageStatus,
    pub key: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub stages: Vec<StageOutcome>,
    pub tasks: Vec<String>,
}

impl RunReport {
    pub fn status(&self, s: StageName) -> Option<StageStatus> {
        self.stages.iter().find(|o| o.stage == s).map(|o| o.status)
    }

    pub fn ran(&self) -> Vec<StageName> {
        self.stages.iter().filter(|o| o.status == StageStatus::Ran).map(|o| o.stage).collect()
    }
}

/// `.stages/<stage>.json`: the cache key a stage ran under and the hashes of
/// what it wrote, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageName,
    pub version: u32,
    pub key: String,
    pub outputs: BTreeMap<String, String>,
}

fn record_path(out: &Path, s: StageName) -> PathBuf {
    out.join(STAGE_DIR).join(format!("{s}.json"))
}

/// The stage's record if every listed output still hashes as recorded.
fn valid_record(out: &Path, s: StageName) -> Option<StageRecord> {
    let path = record_path(out, s);
    let rec: StageRecord = read_json(&path, "stage record").ok()?;
    if rec.stage != s || rec.version != stage_version(s) {
        return None;
    }
    let intact = rec
        .outputs
        .iter()
        .all(|(rel, h)| sha256_file(&out.join(rel)).is_ok_and(|actual| &actual == h));
    intact.then_some(rec)
}

fn write_record(out: &Path, s: StageName, key: &str, outputs: &[PathBuf]) -> Result<StageRecord> {
    let mut hashes = BTreeMap::new();
    for p in outputs {
        let rel = p
            .strip_prefix(out)
            .map_err(|_| Error::Stage {
                stage: s.to_string(),
                message: format!("output {} is outside the run directory", p.display()),
            })?
            .to_string_lossy()
            .replace('\\', "/");
        hashes.insert(rel, sha256_file(p)?);
    }
    let rec = StageRecord {
        stage: s,
        version: stage_version(s),
        key: key.to_string(),
        outputs: hashes,
    };
    write_json(&record_path(out, s), &rec)?;
    Ok(rec)
}

/// Stage-relevant parameters; keys change only when these do.
fn stage_params(s: StageName, cfg: &ExperimentConfig, tasks: &[String]) -> serde_json::Value {
    match s {
        StageName::Train => json!({
            "tasks": tasks, "seeds": cfg.seeds, "pooling": cfg.pooling, "families": cfg.families,
            "slices": cfg.slices, "train": cfg.train,
        }),
        StageName::Inlp => json!({ "inlp": cfg.inlp, "pooling": cfg.pooling }),
        StageName::Transfer | StageName::Ablate => json!({ "probe_class": cfg.probe_class, "pooling": cfg.pooling }),
        StageName::Intensity => json!({ "mode": cfg.intensity_mode, "pooling": cfg.pooling, "seed": cfg.seeds.first() }),
        StageName::Pwcca => json!({ "pooling": cfg.pooling }),
        StageName::Temporal => json!({ "temporal": cfg.temporal }),
    }
}

fn stage_key(s: StageName, cfg: &ExperimentConfig, tasks: &[String], dataset_hash: &str, upstream: &[&str]) -> String {
    let v = json!({
        "stage": s,
        "version": stage_version(s),
        "dataset": dataset_hash,
        "params": stage_params(s, cfg, tasks),
        "upstream": upstream,
    });
    sha256_hex(v.to_string().as_bytes())
}

fn data_err(e: Error) -> Error {
    match e.exit_code() {
        2 => e,
        _ => Error::InsufficientData(e.to_string()),
    }
}

fn resolve_tasks(exp: &ResolvedExperiment, ds: &Dataset) -> Result<Vec<String>> {
    let available = ds.tasks();
    let mut tasks: Vec<String> = exp.task_defs.iter().map(|t| t.task_id.clone()).collect();
    tasks.extend(exp.config.tasks.iter().cloned());
    tasks.sort();
    tasks.dedup();
    if tasks.is_empty() {
        tasks = available.clone();
    }
    if let Some(t) = tasks.iter().find(|t| !available.contains(t)) {
        return Err(Error::InsufficientData(format!(
            "task `{t}` has no rows in dataset {}",
            exp.dataset_path.display()
        )));
    }
    match exp.config.kind {
        ExperimentKind::SingleTask if tasks.len() != 1 => Err(Error::config(
            exp.path.display().to_string(),
            "type",
            format!("single_task run resolves to {} tasks", tasks.len()),
        )),
        _ if tasks.is_empty() => Err(Error::InsufficientData("dataset has no constrained tasks".into())),
        _ => Ok(tasks),
    }
}

fn check_model(exp: &ResolvedExperiment, ds: &Dataset) -> Result<()> {
    let m = &exp.model;
    let base = exp.path.parent().unwrap_or(Path::new("."));
    let file = base.join(&exp.config.model_path).display().to_string();
    if m.name != ds.model.name {
        return Err(Error::config(
            file,
            "name",
            format!("model `{}` does not match dataset model `{}`", m.name, ds.model.name),
        ));
    }
    if m.hidden_dim != ds.dim() {
        return Err(Error::dims(m.hidden_dim, ds.dim(), "model config hidden_dim vs dataset"));
    }
    if m.n_layers != ds.model.n_layers {
        return Err(Error::InsufficientData(format!(
            "model config has {} layers, dataset manifest {}",
            m.n_layers, ds.model.n_layers
        )));
    }
    Ok(())
}

/// Runs an experiment file end to end.
pub fn run(experiment: &Path, opts: &RunOptions) -> Result<RunReport> {
    match opts.jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("cannot start {n} workers: {e}")))?;
            pool.install(|| run_inner(experiment, opts))
        }
        None => run_inner(experiment, opts),
    }
}

fn run_inner(experiment: &Path, opts: &RunOptions) -> Result<RunReport> {
    let mut exp = load_experiment(experiment)?;
    if let Some(seed) = opts.seed_override {
        exp.config.override_seed(seed);
    }
    if let Some(t) = opts.stages {
        exp.config.stages = t;
    }
    let ds = load_dataset(&exp.dataset_path).map_err(data_err)?;
    check_model(&exp, &ds)?;
    let dataset_hash = sha256_file(&exp.dataset_path)?;
    let tasks = resolve_tasks(&exp, &ds)?;
    let out = exp.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;

    let ctx = stages::Ctx {
        ds: &ds,
        cfg: &exp.config,
        tasks: &tasks,
        out: &out,
    };
    let mut keys: BTreeMap<StageName, String> = BTreeMap::new();
    let mut outcomes = Vec::new();
    for s in StageName::ALL {
        let enabled = exp.config.stages.get(s);
        let cached = valid_record(&out, s);
        if !enabled {
            if let Some(rec) = &cached {
                keys.insert(s, rec.key.clone());
            }
            outcomes.push(StageOutcome { stage: s, status: StageStatus::Disabled, key: cached.map(|r| r.key) });
            continue;
        }
        let mut upstream = Vec::new();
        for u in s.upstream() {
            match keys.get(u) {
                Some(k) => upstream.push(k.as_str()),
                None => {
                    return Err(Error::MissingUpstream {
                        stage: s.to_string(),
                        upstream: u.to_string(),
                    })
                }
            }
        }
        let key = stage_key(s, &exp.config, &tasks, &dataset_hash, &upstream);
        let status = if !opts.force && cached.as_ref().is_some_and(|r| r.key == key) {
            info!("{s}: outputs up to date, skipping");
            StageStatus::Cached
        } else {
            info!("{s}: running");
            let outputs = stages::run_stage(s, &ctx).map_err(|e| match e {
                Error::Stage { .. } | Error::MissingUpstream { .. } => e,
                other => Error::Stage {
                    stage: s.to_string(),
                    message: other.to_string(),
                },
            })?;
            write_record(&out, s, &key, &outputs)?;
            StageStatus::Ran
        };
        keys.insert(s, key.clone());
        outcomes.push(StageOutcome { stage: s, status, key: Some(key) });
    }

    write_run_manifest(&exp, &dataset_hash, &tasks, opts.seed_override)?;
    let report = render_report(&out)?;
    let report_path = out.join(REPORT_FILE);
    std::fs::write(&report_path, report).map_err(|e| Error::io(&report_path, e))?;
    Ok(RunReport { output_dir: out, stages: outcomes, tasks })
}

fn file_entry(base: &Path, rel: &str) -> Result<serde_json::Value> {
    Ok(json!({ "path": rel, "sha256": sha256_file(&base.join(rel))? }))
}

/// Provenance of every artifact: config and dataset hashes, effective seeds
/// and each stage's version, cache key and output hashes.
fn write_run_manifest(exp: &ResolvedExperiment, dataset_hash: &str, tasks: &[String], seed_override: Option<u64>) -> Result<()> {
    let base = exp.path.parent().unwrap_or(Path::new("."));
    let out = &exp.output_dir;
    let mut stage_recs = Vec::new();
    for s in StageName::ALL {
        if let Some(rec) = valid_record(out, s) {
            stage_recs.push(rec);
        }
    }
    let task_files = exp
        .config
        .all_task_paths()
        .into_iter()
        .map(|p| file_entry(base, p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = json!({
        "schema_version": "1",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "experiment_sha256": sha256_file(&exp.path)?,
        "model_config": file_entry(base, &exp.config.model_path)?,
        "task_configs": task_files,
        "dataset": { "path": exp.config.dataset, "sha256": dataset_hash },
        "tasks": tasks,
        "seed_override": seed_override,
        "effective_config": exp.config,
        "stages": stage_recs,
    });
    write_json(&out.join(RUN_MANIFEST), &manifest)
}
