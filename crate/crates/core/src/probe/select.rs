use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalReport, Family, ProbeId};
use crate::data::{SliceKey, Split};
use crate::error::{Error, Result};

/// One (slice, family) configuration and its validation accuracy per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionCandidate {
    pub key: SliceKey,
    pub family: Family,
    pub mean_val_accuracy: f64,
    pub seeds: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSelection {
    pub task: String,
    pub best_linear: ProbeId,
    pub best_nonlinear: ProbeId,
    pub criterion: String,
    pub linear_candidates: Vec<SelectionCandidate>,
    pub nonlinear_candidates: Vec<SelectionCandidate>,
}

/// Picks, for each family class, the configuration with the highest mean
/// validation accuracy across seeds, then the best seed within it. Ties go to
/// the lower seed (and, between configurations, the earlier one in slice and
/// family order).
pub fn select_best(reports: &[EvalReport]) -> Result<ProbeSelection> {
    let task = match reports.first() {
        Some(r) => r.probe.task.clone(),
        None => return Err(Error::InsufficientData("no evaluation reports to select from".into())),
    };
    let mut groups: BTreeMap<(SliceKey, Family), Vec<(u64, f64)>> = BTreeMap::new();
    for r in reports {
        if r.probe.task != task {
            return Err(Error::InvalidArgument(format!(
                "selection mixes tasks `{task}` and `{}`",
                r.probe.task
            )));
        }
        let acc = r.accuracy(Split::Val).ok_or_else(|| {
            Error::InsufficientData(format!("report for {} has no validation accuracy", r.probe))
        })?;
        groups
            .entry((r.probe.key, r.probe.family))
            .or_default()
            .push((r.probe.seed, acc));
    }

    let mut linear = Vec::new();
    let mut nonlinear = Vec::new();
    for ((key, family), mut seeds) in groups {
        seeds.sort_by_key(|s| s.0);
        let mean = seeds.iter().map(|s| s.1).sum::<f64>() / seeds.len() as f64;
        let c = SelectionCandidate {
            key,
            family,
            mean_val_accuracy: mean,
            seeds,
        };
        if family.is_linear() {
            linear.push(c);
        } else {
            nonlinear.push(c);
        }
    }

    let pick = |cands: &[SelectionCandidate], class: &str| -> Result<ProbeId> {
        let mut best: Option<&SelectionCandidate> = None;
        for c in cands {
            if best.is_none_or(|b| c.mean_val_accuracy > b.mean_val_accuracy) {
                best = Some(c);
            }
        }
        let best = best.ok_or_else(|| {
            Error::InsufficientData(format!("task `{task}` has no {class} probe candidates"))
        })?;
        let mut seed = best.seeds[0];
        for &s in &best.seeds[1..] {
            if s.1 > seed.1 {
                seed = s;
            }
        }
        Ok(ProbeId {
            task: task.clone(),
            key: best.key,
            family: best.family,
            seed: seed.0,
        })
    };

    Ok(ProbeSelection {
        best_linear: pick(&linear, "linear")?,
        best_nonlinear: pick(&nonlinear, "nonlinear")?,
        task: task.clone(),
        criterion: "max mean validation accuracy across seeds; ties to lower seed".into(),
        linear_candidates: linear,
        nonlinear_candidates: nonlinear,
    })
}
