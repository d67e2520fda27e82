use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{verify, LabeledResponse, Origin, TaskDefinition};
use crate::error::{Error, Result};
use crate::hash::stable_seed;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SwapOutcome {
    /// Positive/negative pairs, balanced per option.
    pub responses: Vec<LabeledResponse>,
    /// Options with no eligible negative at all; dropped from the output.
    pub skipped_options: Vec<String>,
    /// Options whose positives were trimmed to the number of eligible
    /// negatives, with the count removed.
    pub trimmed: Vec<(String, usize)>,
    /// Input positives that failed re-verification and were discarded.
    pub rejected_positives: usize,
}

/// Builds label-0 examples for each option from correct responses to other
/// options of the same task.
///
/// For heuristic tasks every candidate negative is re-checked and kept only if
/// it fails the target option. Positives are paired one-to-one with
/// negatives, so each option comes out exactly 50/50.
pub fn swap_negatives(
    responses: &[LabeledResponse],
    task: &TaskDefinition,
    seed: u64,
) -> Result<SwapOutcome> {
    let heuristic = task.verifier_kind.is_heuristic();
    let mut outcome = SwapOutcome::default();

    let mut by_option: BTreeMap<&str, Vec<&LabeledResponse>> = BTreeMap::new();
    for r in responses.iter().filter(|r| r.label == 1) {
        if heuristic && !verify(task, &r.option, &r.response_text)? {
            outcome.rejected_positives += 1;
            continue;
        }
        by_option.entry(r.option.as_str()).or_default().push(r);
    }
    if by_option.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "cross-option swapping for task `{}` needs correct responses for at least two options, found {}",
            task.task_id,
            by_option.len()
        )));
    }

    for (&option, positives) in &by_option {
        let mut seen = BTreeSet::new();
        let mut eligible = Vec::new();
        for (&other, pool) in &by_option {
            if other == option {
                continue;
            }
            for cand in pool {
                if !seen.insert(cand.response_text.as_str()) {
                    continue;
                }
                let fails_target = if heuristic {
                    !verify(task, option, &cand.response_text)?
                } else {
                    true
                };
                if fails_target {
                    eligible.push(*cand);
                }
            }
        }

        if eligible.is_empty() {
            log::warn!(
                "task `{}`: no eligible negative for option `{option}`; skipping it",
                task.task_id
            );
            outcome.skipped_options.push(option.to_string());
            continue;
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_seed(option));
        eligible.shuffle(&mut rng);
        let k = positives.len().min(eligible.len());
        if k < positives.len() {
            outcome
                .trimmed
                .push((option.to_string(), positives.len() - k));
        }
        for (pos, neg) in positives.iter().zip(&eligible).take(k) {
            outcome.responses.push((*pos).clone());
            outcome.responses.push(LabeledResponse {
                prompt: pos.prompt.clone(),
                option: option.to_string(),
                response_text: neg.response_text.clone(),
                label: 0,
                origin: Origin::SwappedNegative,
            });
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{default_tasks, label_response};

    fn task(id: &str) -> TaskDefinition {
        default_tasks().into_iter().find(|t| t.task_id == id).unwrap()
    }

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn twenty_word_sentence_is_negative_for_five() {
        let t = task("word_count");
        let pos5 = label_response(&t, "p5", "5", &words(5)).unwrap();
        let pos20 = label_response(&t, "p20", "20", &words(20)).unwrap();
        let out = swap_negatives(&[pos5, pos20], &t, 0).unwrap();
        let neg = out
            .responses
            .iter()
            .find(|r| r.option == "5" && r.label == 0)
            .unwrap();
        assert_eq!(neg.response_text, words(20));
        assert_eq!(neg.prompt, "p5");
        assert_eq!(neg.origin, Origin::SwappedNegative);
    }

    #[test]
    fn exclusion_candidate_that_also_satisfies_target_is_rejected() {
        let t = task("term_exclusion");
        // correct for "dog" (no dog) and also lacks "house": cannot be a negative for "house"
        let r1 = label_response(&t, "p", "dog", "The rent is too high.").unwrap();
        // correct for "house" (no house) but contains "dog": fine negative for "dog"
        let r2 = label_response(&t, "p", "house", "My dog barks.").unwrap();
        let out = swap_negatives(&[r1, r2], &t, 1).unwrap();
        assert_eq!(out.skipped_options, vec!["house".to_string()]);
        for r in &out.responses {
            assert_eq!(u8::from(verify(&t, &r.option, &r.response_text).unwrap()), r.label);
        }
    }

    #[test]
    fn single_option_is_an_error() {
        let t = task("word_count");
        let r = label_response(&t, "p", "3", "a b c").unwrap();
        assert!(swap_negatives(&[r], &t, 0).is_err());
    }

    #[test]
    fn balanced_and_consistent_for_heuristic_tasks() {
        let t = task("word_count");
        let mut input = Vec::new();
        for n in 2..=8 {
            for k in 0..5 {
                let text = format!("{} x{k}", words(n - 1));
                input.push(label_response(&t, format!("p{n}"), &n.to_string(), &text).unwrap());
            }
        }
        let out = swap_negatives(&input, &t, 42).unwrap();
        let mut per_option: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for r in &out.responses {
            assert_eq!(u8::from(verify(&t, &r.option, &r.response_text).unwrap()), r.label);
            let e = per_option.entry(&r.option).or_default();
            if r.label == 1 {
                e.0 += 1
            } else {
                e.1 += 1
            }
        }
        assert_eq!(per_option.len(), 7);
        assert!(per_option.values().all(|(p, n)| p == n && *p == 5));
        assert_eq!(out, swap_negatives(&input, &t, 42).unwrap());
    }

    #[test]
    fn dataset_label_tasks_swap_by_option() {
        let t = task("sentiment");
        let mk = |opt: &str, text: &str| LabeledResponse {
            prompt: t.render_prompt(0, opt),
            option: opt.into(),
            response_text: text.into(),
            label: 1,
            origin: Origin::DatasetLabel,
        };
        let input = vec![
            mk("positive", "I really liked this product."),
            mk("negative", "I hate this product."),
        ];
        let out = swap_negatives(&input, &t, 0).unwrap();
        let neg = out
            .responses
            .iter()
            .find(|r| r.option == "negative" && r.label == 0)
            .unwrap();
        assert_eq!(neg.response_text, "I really liked this product.");
        assert_eq!(neg.prompt, "Write an negative review");
    }
}
