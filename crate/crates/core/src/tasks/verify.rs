use super::{TaskDefinition, VerifierKind};
use crate::error::{Error, Result};

fn parse_count(task: &TaskDefinition, option: &str) -> Result<usize> {
    option.trim().parse::<usize>().map_err(|_| {
        Error::config(
            format!("task {}", task.task_id),
            "requested_options",
            format!("`{option}` is not a count"),
        )
    })
}

/// Checks `text` against the task's success criterion for `option`.
///
/// * char count: characters of the whitespace-trimmed text, interior spaces included
/// * word count: maximal runs of non-whitespace characters
/// * inclusion / exclusion: case-sensitive raw substring test
/// * JSON: the text parses and its top-level value is an object
pub fn verify(task: &TaskDefinition, option: &str, text: &str) -> Result<bool> {
    match task.verifier_kind {
        VerifierKind::CharCount => Ok(text.trim().chars().count() == parse_count(task, option)?),
        VerifierKind::WordCount => {
            Ok(text.split_whitespace().count() == parse_count(task, option)?)
        }
        VerifierKind::TermInclusion => Ok(text.contains(option)),
        VerifierKind::TermExclusion => Ok(!text.contains(option)),
        VerifierKind::JsonFormat => Ok(matches!(
            serde_json::from_str::<serde_json::Value>(text),
            Ok(serde_json::Value::Object(_))
        )),
        VerifierKind::DatasetLabel => Err(Error::ExternalLabelTask {
            task: task.task_id.clone(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::default_tasks;
    use proptest::prelude::*;

    fn task(id: &str) -> TaskDefinition {
        default_tasks().into_iter().find(|t| t.task_id == id).unwrap()
    }

    #[test]
    fn char_count_examples() {
        let t = task("char_count");
        assert!(verify(&t, "10", "Bird sings").unwrap());
        assert!(!verify(&t, "10", "Bird sings high.").unwrap());
        assert!(verify(&t, "10", "  Bird sings \n").unwrap());
        // code points, not bytes
        assert!(verify(&t, "3", "héé").unwrap());
    }

    #[test]
    fn word_count_examples() {
        let t = task("word_count");
        assert!(verify(&t, "4", "The sky is blue.").unwrap());
        assert!(!verify(&t, "4", "I love music.").unwrap());
        assert!(verify(&t, "2", "a\t\n  b").unwrap());
    }

    #[test]
    fn json_examples() {
        let t = task("json_format");
        assert!(verify(&t, "an animal", r#"{ "fur": "black" }"#).unwrap());
        assert!(!verify(&t, "an animal", r#""Fur": black"#).unwrap());
        assert!(!verify(&t, "an animal", "[1, 2]").unwrap());
        assert!(!verify(&t, "an animal", "\"fur\"").unwrap());
    }

    #[test]
    fn inclusion_exclusion_examples() {
        let inc = task("term_inclusion");
        let exc = task("term_exclusion");
        assert!(verify(&inc, "house", "I live in a tiny house.").unwrap());
        assert!(!verify(&inc, "house", "The rent is too high.").unwrap());
        assert!(verify(&exc, "house", "The rent is too high.").unwrap());
        assert!(!verify(&exc, "house", "I live in a tiny house.").unwrap());
        // raw substring, case-sensitive
        assert!(verify(&inc, "the", "Lathe work").unwrap());
        assert!(!verify(&inc, "house", "House prices").unwrap());
    }

    #[test]
    fn dataset_label_is_not_verifiable() {
        assert!(matches!(
            verify(&task("sentiment"), "positive", "I really liked this product."),
            Err(Error::ExternalLabelTask { .. })
        ));
    }

    #[test]
    fn non_numeric_count_option_is_config_error() {
        assert!(matches!(
            verify(&task("word_count"), "four", "a b c d"),
            Err(Error::Config { .. })
        ));
    }

    proptest! {
        #[test]
        fn inclusion_is_complement_of_exclusion(o in "\\PC{0,4}", t in "\\PC{0,30}") {
            let inc = verify(&task("term_inclusion"), &o, &t).unwrap();
            let exc = verify(&task("term_exclusion"), &o, &t).unwrap();
            prop_assert_eq!(inc, !exc);
        }

        #[test]
        fn verify_is_deterministic(o in 0usize..30, t in "\\PC{0,40}") {
            let wc = task("word_count");
            let a = verify(&wc, &o.to_string(), &t).unwrap();
            let b = verify(&wc, &o.to_string(), &t).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
