//! Model, task and experiment configs (JSON) and their validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{Pooling, Scope, SliceKey, Stream};
use crate::error::{Error, Result};
use crate::inlp::InlpConfig;
use crate::metrics::IntensityMode;
use crate::probe::{Family, TrainConfig};
use crate::tasks::{TaskDefinition, VerifierKind, OPTION_PLACEHOLDER};
use crate::temporal::BinConfig;

/// Placeholder substituted with the user prompt in a chat template.
pub const PROMPT_PLACEHOLDER: &str = "PROMPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub prompt_template: String,
    pub response_connector: String,
    pub end_of_turn_token: String,
    pub end_of_turn_token_id: u32,
    pub n_layers: u32,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SingleTask,
    AllTasks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Train,
    Inlp,
    Transfer,
    Ablate,
    Intensity,
    Pwcca,
    Temporal,
}

impl StageName {
    pub const ALL: [StageName; 7] = [
        StageName::Train,
        StageName::Inlp,
        StageName::Transfer,
        StageName::Ablate,
        StageName::Intensity,
        StageName::Pwcca,
        StageName::Temporal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Train => "train",
            StageName::Inlp => "inlp",
            StageName::Transfer => "transfer",
            StageName::Ablate => "ablate",
            StageName::Intensity => "intensity",
            StageName::Pwcca => "pwcca",
            StageName::Temporal => "temporal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.as_str() == s.trim())
    }

    /// Stages whose outputs this one reads. Probe selection is part of `train`.
    pub fn upstream(self) -> &'static [StageName] {
        match self {
            StageName::Train => &[],
            StageName::Inlp | StageName::Transfer | StageName::Temporal => &[StageName::Train],
            StageName::Ablate | StageName::Intensity | StageName::Pwcca => &[StageName::Train, StageName::Inlp],
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub train: bool,
    pub inlp: bool,
    pub transfer: bool,
    pub ablate: bool,
    pub intensity: bool,
    pub pwcca: bool,
    pub temporal: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles {
            train: true,
            inlp: true,
            transfer: true,
            ablate: true,
            intensity: true,
            pwcca: true,
            temporal: true,
        }
    }
}

impl StageToggles {
    pub fn none() -> Self {
        StageToggles {
            train: false,
            inlp: false,
            transfer: false,
            ablate: false,
            intensity: false,
            pwcca: false,
            temporal: false,
        }
    }

    pub fn get(&self, s: StageName) -> bool {
        match s {
            StageName::Train => self.train,
            StageName::Inlp => self.inlp,
            StageName::Transfer => self.transfer,
            StageName::Ablate => self.ablate,
            StageName::Intensity => self.intensity,
            StageName::Pwcca => self.pwcca,
            StageName::Temporal => self.temporal,
        }
    }

    pub fn set(&mut self, s: StageName, on: bool) {
        let slot = match s {
            StageName::Train => &mut self.train,
            StageName::Inlp => &mut self.inlp,
            StageName::Transfer => &mut self.transfer,
            StageName::Ablate => &mut self.ablate,
            StageName::Intensity => &mut self.intensity,
            StageName::Pwcca => &mut self.pwcca,
            StageName::Temporal => &mut self.temporal,
        };
        *slot = on;
    }

    /// Parses `a,b,c` into a toggle set with exactly those stages on.
    pub fn only(list: &str) -> Result<Self> {
        let mut t = StageToggles::none();
        for name in list.split(',').filter(|s| !s.trim().is_empty()) {
            let s = StageName::parse(name).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown stage `{name}`; stages are {}",
                    StageName::ALL.map(|s| s.as_str()).join(", ")
                ))
            })?;
            t.set(s, true);
        }
        Ok(t)
    }
}

/// Which selected probe stands for a task in the matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeClass {
    #[default]
    Linear,
    Nonlinear,
}

/// Restricts the slices probes are trained on; `None` keeps everything.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SliceFilter {
    pub layers: Option<Vec<u32>>,
    pub streams: Option<Vec<Stream>>,
    pub scopes: Option<Vec<Scope>>,
}

impl SliceFilter {
    pub fn keeps(&self, k: &SliceKey) -> bool {
        self.layers.as_ref().is_none_or(|l| l.contains(&k.layer))
            && self.streams.as_ref().is_none_or(|s| s.contains(&k.stream))
            && self.scopes.as_ref().is_none_or(|s| s.contains(&k.scope))
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_families() -> Vec<Family> {
    vec![Family::Logistic, Family::Mlp]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(rename = "type")]
    pub kind: ExperimentKind,
    pub model_path: String,
    /// Activation dataset manifest.
    pub dataset: String,
    pub output_dir: String,
    #[serde(default)]
    pub task_path: Option<String>,
    #[serde(default)]
    pub task_paths: Vec<String>,
    /// Task ids to analyse when no task configs are given; empty means
    /// every task in the dataset.
    #[serde(default)]
    pub tasks: Vec<String>,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    #[serde(default)]
    pub probe_class: ProbeClass,
    #[serde(default)]
    pub slices: SliceFilter,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub inlp: InlpConfig,
    #[serde(default)]
    pub intensity_mode: IntensityMode,
    #[serde(default)]
    pub temporal: BinConfig,
}

impl ExperimentConfig {
    /// Every task config path, single and list forms together.
    pub fn all_task_paths(&self) -> Vec<&str> {
        self.task_path.iter().chain(&self.task_paths).map(String::as_str).collect()
    }

    /// Replaces every seed in the config, keeping the number of probe seeds.
    pub fn override_seed(&mut self, seed: u64) {
        let n = self.seeds.len().max(1) as u64;
        self.seeds = (0..n).map(|i| seed.wrapping_add(i)).collect();
        self.inlp.seed = seed;
        self.temporal.seed = seed;
        if let Pooling::OnePerResponse { seed: s } = &mut self.pooling {
            *s = seed;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    pub file: String,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: `{}`: {}", self.file, self.field, self.message)
    }
}

pub fn has_errors(findings: &[Finding]) -> bool {
    findings.iter().any(|f| f.severity == Severity::Error)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigKind {
    Model,
    Task,
    Experiment,
    Synthetic,
}

struct Checker<'a> {
    file: String,
    obj: &'a Map<String, Value>,
    out: Vec<Finding>,
}

impl<'a> Checker<'a> {
    fn push(&mut self, severity: Severity, field: &str, message: impl Into<String>) {
        self.out.push(Finding {
            severity,
            file: self.file.clone(),
            field: field.into(),
            message: message.into(),
        });
    }

    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.push(Severity::Error, field, message);
    }

    fn string(&mut self, field: &str) -> Option<&'a str> {
        match self.obj.get(field) {
            None => {
                self.error(field, "required field is missing");
                None
            }
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.error(field, "must be a string");
                None
            }
        }
    }

    fn positive_int(&mut self, field: &str) {
        match self.obj.get(field) {
            None => self.error(field, "required field is missing"),
            Some(v) => match v.as_u64() {
                Some(n) if n > 0 => {}
                _ => self.error(field, "must be a positive integer"),
            },
        }
    }

    fn string_list(&mut self, field: &str) -> Option<Vec<&'a str>> {
        match self.obj.get(field) {
            None => {
                self.error(field, "required field is missing");
                None
            }
            Some(Value::Array(a)) => {
                let v: Vec<&str> = a.iter().filter_map(Value::as_str).collect();
                if v.len() != a.len() {
                    self.error(field, "must be a list of strings");
                    return None;
                }
                Some(v)
            }
            Some(_) => {
                self.error(field, "must be a list of strings");
                None
            }
        }
    }

    /// Reports a serde failure only when the field-level checks found nothing.
    fn typed<T: serde::de::DeserializeOwned>(&mut self, value: &Value) -> Option<T> {
        match serde_json::from_value::<T>(value.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                if !has_errors(&self.out) {
                    self.error("", e.to_string());
                }
                None
            }
        }
    }
}

fn detect(obj: &Map<String, Value>) -> Option<ConfigKind> {
    let has = |k: &str| obj.contains_key(k);
    if has("prompt_template") || has("response_connector") || has("end_of_turn_token") || has("hidden_dim") {
        Some(ConfigKind::Model)
    } else if has("logic_class") || has("verifier_kind") || has("task_id") {
        Some(ConfigKind::Task)
    } else if has("type") || has("output_dir") || has("model_path") {
        Some(ConfigKind::Experiment)
    } else if has("samples_per_class") || has("sigma") {
        Some(ConfigKind::Synthetic)
    } else {
        None
    }
}

fn check_model(c: &mut Checker<'_>, value: &Value) {
    c.string("name");
    if let Some(t) = c.string("prompt_template") {
        let n = t.matches(PROMPT_PLACEHOLDER).count();
        if n != 1 {
            c.error(
                "prompt_template",
                format!("must contain the {PROMPT_PLACEHOLDER} placeholder exactly once, found {n}"),
            );
        }
    }
    c.string("response_connector");
    c.string("end_of_turn_token");
    match c.obj.get("end_of_turn_token_id") {
        None => c.error("end_of_turn_token_id", "required field is missing"),
        Some(v) if v.as_u64().is_none_or(|n| n > u32::MAX as u64) => {
            c.error("end_of_turn_token_id", "must be a non-negative integer")
        }
        _ => {}
    }
    c.positive_int("n_layers");
    c.positive_int("hidden_dim");
    c.typed::<ModelConfig>(value);
}

fn check_task(c: &mut Checker<'_>, value: &Value) {
    c.string("task_id");
    let kind_field = if c.obj.contains_key("verifier_kind") { "verifier_kind" } else { "logic_class" };
    if let Some(k) = c.string(kind_field) {
        if VerifierKind::from_name(k).is_none() {
            c.error(
                kind_field,
                format!("unknown verifier kind `{k}`; valid kinds: {}", VerifierKind::valid_names()),
            );
        }
    }
    let prompts = if c.obj.contains_key("prompt_templates") { "prompt_templates" } else { "prompts" };
    if let Some(p) = c.string_list(prompts) {
        if p.is_empty() {
            c.error(prompts, "at least one template is required");
        }
        for t in p.iter().filter(|t| !t.contains(OPTION_PLACEHOLDER)) {
            c.error(prompts, format!("template `{t}` lacks the {OPTION_PLACEHOLDER} placeholder"));
        }
    }
    if let Some(o) = c.string_list("requested_options") {
        if o.is_empty() {
            c.error("requested_options", "at least one option is required");
        }
    }
    if has_errors(&c.out) {
        return;
    }
    if let Some(def) = c.typed::<TaskDefinition>(value) {
        if let Err(Error::Config { field, message, .. }) = def.check() {
            c.error(&field, message);
        }
    }
}

fn check_experiment(c: &mut Checker<'_>, value: &Value, base: &Path) {
    if let Some(t) = c.string("type") {
        if !matches!(t, "single_task" | "all_tasks") {
            c.error("type", format!("unknown experiment type `{t}`; expected single_task or all_tasks"));
        }
    }
    for field in ["model_path", "dataset"] {
        if let Some(p) = c.string(field) {
            if !base.join(p).is_file() {
                c.error(field, format!("referenced file {} does not exist", base.join(p).display()));
            }
        }
    }
    if let Some(o) = c.string("output_dir") {
        let p = base.join(o);
        if p.exists() && !p.is_dir() {
            c.error("output_dir", format!("{} exists and is not a directory", p.display()));
        }
    }
    if let Some(Value::Object(st)) = c.obj.get("stages") {
        for k in st.keys() {
            if StageName::parse(k).is_none() {
                c.error(&format!("stages.{k}"), "unknown stage");
            }
        }
    }
    if let Some(Value::Array(s)) = c.obj.get("seeds") {
        if s.is_empty() {
            c.error("seeds", "at least one seed is required");
        }
    }
    if let Some(Value::Array(f)) = c.obj.get("families") {
        if f.is_empty() {
            c.error("families", "at least one probe family is required");
        }
    }
    let Some(cfg) = c.typed::<ExperimentConfig>(value) else {
        return;
    };
    let paths = cfg.all_task_paths();
    for p in &paths {
        if !base.join(p).is_file() {
            c.error("task_paths", format!("referenced file {} does not exist", base.join(p).display()));
        }
    }
    if cfg.kind == ExperimentKind::SingleTask && paths.len() + cfg.tasks.len() > 1 {
        c.error("type", "single_task experiments name exactly one task");
    }
    if !cfg.families.iter().any(|f| f.is_linear()) || cfg.families.iter().all(|f| f.is_linear()) {
        c.error("families", "selection needs at least one linear and one nonlinear family");
    }
    if cfg.kind == ExperimentKind::SingleTask && cfg.stages.pwcca {
        c.push(Severity::Warning, "stages.pwcca", "a single-task run has a one-leaf dendrogram");
    }
}

/// Schema findings for one config file; referenced model and task configs of
/// an experiment are checked too. Errors only when the file itself cannot be
/// read or parsed.
pub fn validate_config(path: &Path) -> Result<Vec<Finding>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file = path.display().to_string();
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::config(&file, "", format!("not valid JSON: {e}")))?;
    let Value::Object(obj) = &value else {
        return Ok(vec![Finding {
            severity: Severity::Error,
            file,
            field: String::new(),
            message: "config must be a JSON object".into(),
        }]);
    };
    let mut c = Checker { file, obj, out: Vec::new() };
    let base = path.parent().unwrap_or(Path::new("."));
    match detect(obj) {
        Some(ConfigKind::Model) => check_model(&mut c, &value),
        Some(ConfigKind::Task) => check_task(&mut c, &value),
        Some(ConfigKind::Experiment) => check_experiment(&mut c, &value, base),
        Some(ConfigKind::Synthetic) => {
            if let Some(spec) = c.typed::<crate::synth::SyntheticSpec>(&value) {
                if let Err(e) = spec.check() {
                    c.error("", e.to_string());
                }
            }
        }
        None => c.error("", "not a model, task, experiment or synthetic config"),
    }
    let mut out = c.out;
    if detect(obj) == Some(ConfigKind::Experiment) && !has_errors(&out) {
        if let Ok(cfg) = serde_json::from_value::<ExperimentConfig>(value.clone()) {
            let mut refs = vec![cfg.model_path.clone()];
            refs.extend(cfg.all_task_paths().into_iter().map(String::from));
            for r in refs {
                out.extend(validate_config(&base.join(r))?);
            }
        }
    }
    Ok(out)
}

fn first_error(findings: Vec<Finding>) -> Result<()> {
    match findings.into_iter().find(|f| f.severity == Severity::Error) {
        Some(f) => Err(Error::Config {
            file: f.file,
            field: f.field,
            message: f.message,
        }),
        None => Ok(()),
    }
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    first_error(validate_config(path)?)?;
    crate::fsutil::read_json(path, "model config")
}

/// A loaded experiment with its referenced configs and resolved paths.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub path: PathBuf,
    pub config: ExperimentConfig,
    pub model: ModelConfig,
    pub task_defs: Vec<TaskDefinition>,
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
}

pub fn load_experiment(path: &Path) -> Result<ResolvedExperiment> {
    if !path.is_file() {
        return Err(Error::config(path.display().to_string(), "", "experiment file not found"));
    }
    first_error(validate_config(path)?)?;
    let config: ExperimentConfig = crate::fsutil::read_json(path, "experiment config")?;
    let base = path.parent().unwrap_or(Path::new("."));
    let model = load_model_config(&base.join(&config.model_path))?;
    let task_defs = config
        .all_task_paths()
        .into_iter()
        .map(|p| TaskDefinition::load(&base.join(p)))
        .collect::<Result<_>>()?;
    Ok(ResolvedExperiment {
        path: path.to_path_buf(),
        dataset_path: base.join(&config.dataset),
        output_dir: base.join(&config.output_dir),
        config,
        model,
        task_defs,
    })
}
