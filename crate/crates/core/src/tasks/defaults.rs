use super::{DataSource, TaskDefinition, VerifierKind};

const TERMS: [&str; 16] = [
    "dog", "cat", "computer", "the", "and", "is", "time", "people", "game", "company", "teaching",
    "compete", "ability", "recipe", "smoker", "function",
];

fn corpus(path: &str) -> DataSource {
    DataSource::CorpusFile { path: path.into() }
}

fn llm() -> DataSource {
    DataSource::LlmGenerated {
        params: serde_json::Value::Null,
    }
}

fn def(
    id: &str,
    template: &str,
    options: Vec<String>,
    kind: VerifierKind,
    data_sources: Vec<DataSource>,
) -> TaskDefinition {
    TaskDefinition {
        task_id: id.into(),
        prompt_templates: vec![template.into()],
        requested_options: options,
        verifier_kind: kind,
        data_sources,
    }
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// The nine built-in tasks with their default option lists.
pub fn default_tasks() -> Vec<TaskDefinition> {
    vec![
        def(
            "char_count",
            "Generate a sentence with OPTION chars",
            strs(&["30", "50", "100", "140", "200", "280"]),
            VerifierKind::CharCount,
            vec![llm(), corpus("corpora/c4.jsonl")],
        ),
        def(
            "word_count",
            "Generate a sentence with OPTION words",
            (2..=21).map(|n| n.to_string()).collect(),
            VerifierKind::WordCount,
            vec![llm(), corpus("corpora/c4.jsonl")],
        ),
        def(
            "term_inclusion",
            "Generate a sentence with the word OPTION",
            strs(&TERMS),
            VerifierKind::TermInclusion,
            vec![llm(), corpus("corpora/c4.jsonl")],
        ),
        def(
            "term_exclusion",
            "Generate a sentence without the word OPTION",
            strs(&TERMS),
            VerifierKind::TermExclusion,
            vec![llm(), corpus("corpora/c4.jsonl")],
        ),
        def(
            "json_format",
            "Describe OPTION as a JSON object",
            strs(&[
                "an animal",
                "a vehicle",
                "a fruit",
                "a country",
                "a profession",
                "a musical instrument",
                "a building",
                "a sport",
                "a technology",
                "a historical event",
            ]),
            VerifierKind::JsonFormat,
            vec![llm()],
        ),
        def(
            "topic",
            "Write a news text about OPTION",
            strs(&["world", "sports", "business", "technology"]),
            VerifierKind::DatasetLabel,
            vec![corpus("corpora/ag_news.jsonl")],
        ),
        def(
            "sentiment",
            "Write an OPTION review",
            strs(&["negative", "positive"]),
            VerifierKind::DatasetLabel,
            vec![corpus("corpora/imdb.jsonl"), corpus("corpora/amazon_polarity.jsonl")],
        ),
        def(
            "register",
            "Generate a OPTION text",
            strs(&["formal", "informal"]),
            VerifierKind::DatasetLabel,
            vec![corpus("corpora/coedit.jsonl")],
        ),
        def(
            "toxicity",
            "Generate a OPTION comment",
            strs(&["toxic", "non-toxic"]),
            VerifierKind::DatasetLabel,
            vec![corpus("corpora/civil_comments.jsonl")],
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_valid_tasks() {
        let tasks = default_tasks();
        assert_eq!(tasks.len(), 9);
        for t in &tasks {
            t.check().unwrap();
        }
        let wc = tasks.iter().find(|t| t.task_id == "word_count").unwrap();
        assert_eq!(wc.requested_options.len(), 20);
        let inc = tasks.iter().find(|t| t.task_id == "term_inclusion").unwrap();
        assert_eq!(inc.requested_options.len(), 16);
    }
}
