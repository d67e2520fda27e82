use std::collections::BTreeMap;
use std::fs;

use probelab::tasks::{
    default_tasks, ingest_labeled_corpus, label_response, swap_negatives, verify, LabeledResponse, Origin,
    TaskDefinition, VerifierKind,
};
use probelab::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn task(id: &str) -> TaskDefinition {
    default_tasks().into_iter().find(|t| t.task_id == id).unwrap()
}

fn custom(kind: VerifierKind, options: &[&str]) -> TaskDefinition {
    TaskDefinition {
        task_id: kind.name().into(),
        prompt_templates: vec!["Do OPTION".into()],
        requested_options: options.iter().map(|s| s.to_string()).collect(),
        verifier_kind: kind,
        data_sources: vec![],
    }
}

#[test]
fn table_examples_label_as_printed() {
    let char_count = custom(VerifierKind::CharCount, &["10"]);
    assert!(verify(&char_count, "10", "Bird sings").unwrap());
    assert!(!verify(&char_count, "10", "Bird sings high.").unwrap());

    let word_count = custom(VerifierKind::WordCount, &["4"]);
    assert!(verify(&word_count, "4", "The sky is blue.").unwrap());
    assert!(!verify(&word_count, "4", "I love music.").unwrap());

    let json = custom(VerifierKind::JsonFormat, &["an animal"]);
    assert!(verify(&json, "an animal", r#"{ "fur": "black" }"#).unwrap());
    assert!(!verify(&json, "an animal", r#""Fur": black"#).unwrap());

    let inc = custom(VerifierKind::TermInclusion, &["house"]);
    let exc = custom(VerifierKind::TermExclusion, &["house"]);
    assert!(verify(&inc, "house", "I live in a tiny house.").unwrap());
    assert!(!verify(&inc, "house", "The rent is too high.").unwrap());
    assert!(verify(&exc, "house", "The rent is too high.").unwrap());
    assert!(!verify(&exc, "house", "I live in a tiny house.").unwrap());
}

#[test]
fn verifier_edge_cases() {
    let cc = custom(VerifierKind::CharCount, &["3"]);
    assert!(verify(&cc, "3", "  abc \n").unwrap());
    assert!(verify(&cc, "3", "héé").unwrap());
    let wc = custom(VerifierKind::WordCount, &["3"]);
    assert!(verify(&wc, "3", "a\tb\n\nc").unwrap());
    assert!(!verify(&wc, "0", "x").unwrap());
    assert!(matches!(verify(&wc, "three", "a b c"), Err(Error::Config { .. })));
    let js = custom(VerifierKind::JsonFormat, &["x"]);
    assert!(!verify(&js, "x", "[1, 2]").unwrap());
    assert!(!verify(&js, "x", "42").unwrap());
    // substring, case-sensitive
    let inc = custom(VerifierKind::TermInclusion, &["cat"]);
    assert!(verify(&inc, "cat", "concatenate").unwrap());
    assert!(!verify(&inc, "cat", "Cat").unwrap());
    let ext = task("sentiment");
    assert!(matches!(verify(&ext, "positive", "fine"), Err(Error::ExternalLabelTask { .. })));
}

#[test]
fn nine_default_tasks_are_valid() {
    let tasks = default_tasks();
    assert_eq!(tasks.len(), 9);
    for t in &tasks {
        t.check().unwrap();
    }
    let heuristic = tasks.iter().filter(|t| t.verifier_kind.is_heuristic()).count();
    assert_eq!(heuristic, 5);
}

fn sentence(rng: &mut ChaCha8Rng, vocab: &[&str], n: usize) -> String {
    (0..n).map(|_| vocab[rng.random_range(0..vocab.len())]).collect::<Vec<_>>().join(" ")
}

/// Correct responses for several options of `t`, generated and verified.
fn positives(t: &TaskDefinition, seed: u64) -> Vec<LabeledResponse> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = ["a", "tiny", "house", "dog", "runs", "the", "and", "cat", "is", "time", "sky"];
    let mut out = Vec::new();
    for _ in 0..400 {
        let opt = &t.requested_options[rng.random_range(0..t.requested_options.len().min(6))];
        let n = rng.random_range(1..30);
        let text = match t.verifier_kind {
            VerifierKind::CharCount => {
                let target: usize = opt.parse().unwrap();
                let s = sentence(&mut rng, &vocab, 80);
                s.chars().take(target).collect::<String>().trim_end().to_string() + &"x".repeat(0)
            }
            VerifierKind::JsonFormat => {
                if rng.random_bool(0.5) {
                    format!(r#"{{"k": "{}"}}"#, sentence(&mut rng, &vocab, n))
                } else {
                    sentence(&mut rng, &vocab, n)
                }
            }
            _ => sentence(&mut rng, &vocab, n),
        };
        let r = label_response(t, format!("prompt {opt}"), opt, &text).unwrap();
        if r.label == 1 {
            out.push(r);
        }
    }
    out
}

#[test]
fn swapped_negatives_always_fail_their_target() {
    for id in ["char_count", "word_count", "term_inclusion", "term_exclusion"] {
        let mut t = task(id);
        if id == "word_count" {
            t.requested_options = (1..=6).map(|i| i.to_string()).collect();
        }
        if id == "char_count" {
            t.requested_options = ["5", "9", "14", "20", "25", "30"].map(String::from).to_vec();
        }
        if id.starts_with("term") {
            t.requested_options = ["house", "dog", "cat", "sky", "time", "and"].map(String::from).to_vec();
        }
        let pos = positives(&t, 3);
        let out = swap_negatives(&pos, &t, 11).unwrap();
        assert!(!out.responses.is_empty(), "{id}");
        let mut balance: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &out.responses {
            assert_eq!(verify(&t, &r.option, &r.response_text).unwrap(), r.label == 1, "{id}: {r:?}");
            let e = balance.entry(r.option.as_str()).or_default();
            if r.label == 1 {
                e.0 += 1;
            } else {
                e.1 += 1;
                assert_eq!(r.origin, Origin::SwappedNegative);
            }
        }
        assert!(balance.values().all(|(p, n)| p == n), "{id}: {balance:?}");
        assert_eq!(swap_negatives(&pos, &t, 11).unwrap(), out);
    }
}

#[test]
fn single_option_input_is_an_error() {
    let t = task("word_count");
    let r = label_response(&t, "p", "5", "a b c d e").unwrap();
    assert!(swap_negatives(&[r.clone(), r], &t, 0).is_err());
}

#[test]
fn corpus_lines_become_positives_and_negatives() {
    let t = task("sentiment");
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.jsonl");
    fs::write(
        &p,
        concat!(
            r#"{"text": "I really liked this product.", "label_option": "positive"}"#,
            "\n",
            r#"{"text": "I hate this product.", "label_option": "negative"}"#,
            "\n",
            r#"{"text": "no label"}"#,
            "\n",
            r#"{"text": "odd", "label_option": "lukewarm"}"#,
            "\n",
        ),
    )
    .unwrap();
    let got = ingest_labeled_corpus(&t, &p).unwrap();
    assert_eq!((got.malformed, got.rejected, got.responses.len()), (1, 1, 2));
    let liked = &got.responses[0];
    assert_eq!((liked.option.as_str(), liked.label, liked.origin), ("positive", 1, Origin::DatasetLabel));
    let swapped = swap_negatives(&got.responses, &t, 0).unwrap();
    let neg = swapped.responses.iter().find(|r| r.option == "negative" && r.label == 0).unwrap();
    assert_eq!(neg.response_text, "I really liked this product.");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn inclusion_is_the_complement_of_exclusion(option in "[a-c]{1,3}", text in "[a-c ]{0,12}") {
        let inc = custom(VerifierKind::TermInclusion, &["x"]);
        let exc = custom(VerifierKind::TermExclusion, &["x"]);
        prop_assert_eq!(verify(&inc, &option, &text).unwrap(), !verify(&exc, &option, &text).unwrap());
    }
}
