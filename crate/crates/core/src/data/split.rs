use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::record::{SampleRecord, Split};
use crate::error::{Error, Result};
use crate::hash::stable_seed;

/// Fewest responses per task that can populate all three splits.
pub const MIN_GROUPS_PER_TASK: usize = 10;

/// Split sizes for `n` groups: train = ⌊0.7n⌋, val = ⌊0.15n⌋, test takes the
/// remainder.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 70 / 100;
    let val = n * 15 / 100;
    (train, val, n - train - val)
}

/// Assigns train/val/test per task, grouping rows by response so that all
/// positions of one response share a split. Deterministic given `seed`.
pub fn assign_splits(mut records: Vec<SampleRecord>, seed: u64) -> Result<Vec<SampleRecord>> {
    if records.is_empty() {
        return Err(Error::InsufficientData("no records to split".into()));
    }

    // task -> sorted response keys
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &records {
        groups
            .entry(r.task.clone())
            .or_default()
            .push(r.response_key().to_string());
    }

    let mut assignment: BTreeMap<(String, String), Split> = BTreeMap::new();
    for (task, mut keys) in groups {
        keys.sort();
        keys.dedup();
        if keys.len() < MIN_GROUPS_PER_TASK {
            return Err(Error::InsufficientData(format!(
                "task `{task}` has {} responses; at least {MIN_GROUPS_PER_TASK} are needed for three splits",
                keys.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_seed(&task));
        keys.shuffle(&mut rng);
        let (train, val, _) = split_counts(keys.len());
        for (i, k) in keys.into_iter().enumerate() {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            assignment.insert((task.clone(), k), split);
        }
    }

    for r in &mut records {
        let key = (r.task.clone(), r.response_key().to_string());
        r.split = Some(assignment[&key]);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceEntry {
    pub task: String,
    pub split: Split,
    pub n: usize,
    pub positives: usize,
    /// `None` when the bucket is empty.
    pub positive_fraction: Option<f64>,
    pub degenerate: bool,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub tolerance: f64,
    pub entries: Vec<BalanceEntry>,
}

impl BalanceReport {
    pub fn flagged(&self) -> impl Iterator<Item = &BalanceEntry> {
        self.entries.iter().filter(|e| e.flagged)
    }

    pub fn is_balanced(&self) -> bool {
        self.flagged().next().is_none()
    }
}

pub const DEFAULT_BALANCE_TOLERANCE: f64 = 0.05;

/// Per-task, per-split positive fraction of labeled (non-null) records.
/// Records without a split are ignored.
pub fn check_balance(records: &[SampleRecord], tolerance: f64) -> BalanceReport {
    let mut counts: BTreeMap<(String, Split), (usize, usize)> = BTreeMap::new();
    let mut tasks: std::collections::BTreeSet<String> = Default::default();
    for r in records.iter().filter(|r| !r.is_null_task) {
        tasks.insert(r.task.clone());
        if let Some(split) = r.split {
            let c = counts.entry((r.task.clone(), split)).or_default();
            c.0 += 1;
            c.1 += usize::from(r.label == 1);
        }
    }

    let mut entries = Vec::new();
    for task in tasks {
        for split in Split::ALL {
            let (n, positives) = counts.get(&(task.clone(), split)).copied().unwrap_or((0, 0));
            let fraction = (n > 0).then(|| positives as f64 / n as f64);
            let degenerate = n == 0;
            let flagged = match fraction {
                Some(f) => (f - 0.5).abs() > tolerance,
                None => true,
            };
            entries.push(BalanceEntry {
                task: task.clone(),
                split,
                n,
                positives,
                positive_fraction: fraction,
                degenerate,
                flagged,
            });
        }
    }
    BalanceReport { tolerance, entries }
}
