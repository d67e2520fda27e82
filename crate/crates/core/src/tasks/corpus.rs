use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use super::{verify, LabeledResponse, Origin, TaskDefinition};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IngestOutcome {
    pub responses: Vec<LabeledResponse>,
    /// Lines that were not valid `{text, label_option}` objects.
    pub malformed: usize,
    /// Lines with a label outside the task's options, or text that fails the
    /// task's own heuristic.
    pub rejected: usize,
}

#[derive(Deserialize)]
struct CorpusLine {
    text: String,
    label_option: String,
}

/// Reads a `{text, label_option}` JSONL corpus. Each accepted line becomes a
/// positive for its own option; [`super::swap_negatives`] turns the same lines
/// into negatives for the other options.
pub fn ingest_labeled_corpus(task: &TaskDefinition, path: &Path) -> Result<IngestOutcome> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = IngestOutcome::default();

    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = match serde_json::from_str(&line) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("{}:{}: skipping malformed line: {e}", path.display(), lineno + 1);
                out.malformed += 1;
                continue;
            }
        };
        if !task.requested_options.contains(&parsed.label_option) {
            log::warn!(
                "{}:{}: label_option `{}` is not an option of task `{}`",
                path.display(),
                lineno + 1,
                parsed.label_option,
                task.task_id
            );
            out.rejected += 1;
            continue;
        }
        if task.verifier_kind.is_heuristic()
            && !verify(task, &parsed.label_option, &parsed.text)?
        {
            out.rejected += 1;
            continue;
        }
        out.responses.push(LabeledResponse {
            prompt: task.render_prompt(lineno, &parsed.label_option),
            option: parsed.label_option,
            response_text: parsed.text,
            label: 1,
            origin: Origin::DatasetLabel,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{default_tasks, swap_negatives};
    use std::io::Write;

    fn sentiment() -> TaskDefinition {
        default_tasks().into_iter().find(|t| t.task_id == "sentiment").unwrap()
    }

    #[test]
    fn ingests_labels_and_skips_bad_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"text": "I really liked this product.", "label_option": "positive"}}"#).unwrap();
        writeln!(f, r#"{{"text": "I hate this product.", "label_option": "negative"}}"#).unwrap();
        writeln!(f, r#"{{"text": "no label here"}}"#).unwrap();
        writeln!(f, r#"{{"text": "meh", "label_option": "neutral"}}"#).unwrap();
        writeln!(f, "not json").unwrap();

        let t = sentiment();
        let out = ingest_labeled_corpus(&t, f.path()).unwrap();
        assert_eq!(out.responses.len(), 2);
        assert_eq!(out.malformed, 2);
        assert_eq!(out.rejected, 1);

        let liked = &out.responses[0];
        assert_eq!((liked.option.as_str(), liked.label), ("positive", 1));
        assert_eq!(liked.origin, Origin::DatasetLabel);

        // the same line becomes an eligible negative under the other option
        let swapped = swap_negatives(&out.responses, &t, 0).unwrap();
        assert!(swapped.responses.iter().any(|r| r.option == "negative"
            && r.label == 0
            && r.response_text == "I really liked this product."));
    }

    #[test]
    fn heuristic_corpus_lines_are_verified() {
        let t = default_tasks().into_iter().find(|t| t.task_id == "word_count").unwrap();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"text": "The sky is blue.", "label_option": "4"}}"#).unwrap();
        writeln!(f, r#"{{"text": "I love music.", "label_option": "4"}}"#).unwrap();
        let out = ingest_labeled_corpus(&t, f.path()).unwrap();
        assert_eq!(out.responses.len(), 1);
        assert_eq!(out.rejected, 1);
    }
}
