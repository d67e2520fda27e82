//! Task definitions, text verifiers, and cross-option negative sampling.

mod corpus;
mod defaults;
mod swap;
mod verify;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corpus::{ingest_labeled_corpus, IngestOutcome};
pub use defaults::default_tasks;
pub use swap::{swap_negatives, SwapOutcome};
pub use verify::verify;

/// Placeholder substituted with the requested option in prompt templates.
pub const OPTION_PLACEHOLDER: &str = "OPTION";

/// Registry of success criteria. Configs name one of these via `logic_class`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    CharCount,
    WordCount,
    TermInclusion,
    TermExclusion,
    JsonFormat,
    DatasetLabel,
}

impl VerifierKind {
    pub const ALL: [VerifierKind; 6] = [
        VerifierKind::CharCount,
        VerifierKind::WordCount,
        VerifierKind::TermInclusion,
        VerifierKind::TermExclusion,
        VerifierKind::JsonFormat,
        VerifierKind::DatasetLabel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VerifierKind::CharCount => "char_count",
            VerifierKind::WordCount => "word_count",
            VerifierKind::TermInclusion => "term_inclusion",
            VerifierKind::TermExclusion => "term_exclusion",
            VerifierKind::JsonFormat => "json_format",
            VerifierKind::DatasetLabel => "dataset_label",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Names of every registered kind, for error messages.
    pub fn valid_names() -> String {
        Self::ALL.map(|k| k.name()).join(", ")
    }

    pub fn is_heuristic(self) -> bool {
        self != VerifierKind::DatasetLabel
    }

    pub fn needs_numeric_option(self) -> bool {
        matches!(self, VerifierKind::CharCount | VerifierKind::WordCount)
    }
}

impl fmt::Display for VerifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    CorpusFile {
        path: String,
    },
    LlmGenerated {
        #[serde(default)]
        params: serde_json::Value,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDefinition {
    pub task_id: String,
    #[serde(rename = "prompts", alias = "prompt_templates")]
    pub prompt_templates: Vec<String>,
    pub requested_options: Vec<String>,
    #[serde(rename = "logic_class", alias = "verifier_kind")]
    pub verifier_kind: VerifierKind,
    #[serde(default)]
    pub data_sources: Vec<DataSource>,
}

impl TaskDefinition {
    pub fn check(&self) -> Result<()> {
        let file = format!("task {}", self.task_id);
        if self.prompt_templates.is_empty() {
            return Err(Error::config(&file, "prompts", "at least one template is required"));
        }
        if let Some(t) = self
            .prompt_templates
            .iter()
            .find(|t| !t.contains(OPTION_PLACEHOLDER))
        {
            return Err(Error::config(
                &file,
                "prompts",
                format!("template `{t}` lacks the {OPTION_PLACEHOLDER} placeholder"),
            ));
        }
        if self.requested_options.is_empty() {
            return Err(Error::config(&file, "requested_options", "at least one option is required"));
        }
        if self.verifier_kind.needs_numeric_option() {
            if let Some(o) = self
                .requested_options
                .iter()
                .find(|o| o.trim().parse::<usize>().is_err())
            {
                return Err(Error::config(
                    &file,
                    "requested_options",
                    format!("`{o}` is not a count, but {} needs numeric options", self.verifier_kind),
                ));
            }
        }
        Ok(())
    }

    pub fn render_prompt(&self, template_index: usize, option: &str) -> String {
        let t = &self.prompt_templates[template_index % self.prompt_templates.len()];
        t.replace(OPTION_PLACEHOLDER, option)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let def: TaskDefinition = serde_json::from_str(&text).map_err(|e| Error::Parse {
            what: "task config",
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        def.check()?;
        Ok(def)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Verified,
    SwappedNegative,
    DatasetLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledResponse {
    pub prompt: String,
    pub option: String,
    pub response_text: String,
    pub label: u8,
    pub origin: Origin,
}

/// Labels a response to `option` with the task's heuristic.
pub fn label_response(
    task: &TaskDefinition,
    prompt: impl Into<String>,
    option: &str,
    text: &str,
) -> Result<LabeledResponse> {
    let ok = verify(task, option, text)?;
    Ok(LabeledResponse {
        prompt: prompt.into(),
        option: option.to_string(),
        response_text: text.to_string(),
        label: u8::from(ok),
        origin: Origin::Verified,
    })
}
