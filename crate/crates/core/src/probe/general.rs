use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, train_logistic, Evaluation, LinearProbe, LogisticConfig};
use crate::data::LabeledSamples;
use crate::error::{Error, Result};
use crate::hash::stable_seed;

/// One task's contribution to the general probe.
#[derive(Debug, Clone)]
pub struct TaskSamples {
    pub task: String,
    pub train: LabeledSamples,
    pub test: LabeledSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralProbe {
    pub probe: LinearProbe,
    /// Training rows drawn from each task.
    pub rows_per_task: usize,
    /// Test accuracy on each task, in input order.
    pub per_task: Vec<(String, Evaluation)>,
}

/// Trains one logistic probe on all tasks pooled, each task subsampled to the
/// smallest task's training size, and evaluates it on every task's test split.
pub fn train_general_probe(tasks: &[TaskSamples], cfg: &LogisticConfig) -> Result<GeneralProbe> {
    if tasks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "the general probe needs at least two tasks, got {}",
            tasks.len()
        )));
    }
    let d = tasks[0].train.dim();
    for t in tasks {
        for (what, s) in [("train", &t.train), ("test", &t.test)] {
            if s.dim() != d {
                return Err(Error::dims(d, s.dim(), format!("task `{}` {what} features", t.task)));
            }
        }
    }
    let m = tasks.iter().map(|t| t.train.len()).min().unwrap_or(0);
    let parts: Vec<LabeledSamples> = tasks
        .iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_seed(&t.task));
            let mut rows = sample(&mut rng, t.train.len(), m).into_vec();
            rows.sort_unstable();
            t.train.subset(&rows)
        })
        .collect();
    let refs: Vec<&LabeledSamples> = parts.iter().collect();
    let pooled = LabeledSamples::concat(&refs)?;
    let probe = train_logistic(&pooled, cfg, None)?.probe;
    let per_task = tasks
        .iter()
        .map(|t| Ok((t.task.clone(), evaluate(&probe, &t.test)?)))
        .collect::<Result<_>>()?;
    Ok(GeneralProbe {
        probe,
        rows_per_task: m,
        per_task,
    })
}
