//! Transfer and ablation matrices, the normalized accuracy drop, and
//! rowspace signal intensity.

mod intensity;
mod matrix;

use rayon::prelude::*;

use crate::data::{Dataset, LabeledSamples, Pooling, SliceKey, Split};
use crate::error::{Error, Result};
use crate::inlp::{project, Projector, ProjectorKind};
use crate::probe::{evaluate, Evaluation, Probe, ProbeId};

pub use intensity::{
    intensity, intensity_distribution, write_intensity_csv, GroupSummary, IntensityDistribution,
    IntensityGroup, IntensityMode, SampleGroup,
};
pub use matrix::{CellProvenance, Metric, TaskMatrix};

/// Accuracies at or below this leave the normalized drop undefined.
pub const MIN_BASE_ACCURACY: f64 = 0.51;

/// Chance-adjusted accuracy loss `(base − ablated) / (base − 0.5)`; `None`
/// when `base` is too close to chance for the ratio to mean anything.
pub fn normalized_drop(base: f64, ablated: f64) -> Option<f64> {
    if base.is_nan() || ablated.is_nan() || base <= MIN_BASE_ACCURACY {
        return None;
    }
    Some((base - ablated) / (base - 0.5))
}

/// The same drop from hit counts on one evaluation set of `n` rows. Rounds
/// once, so `(9, 7, 10)` is exactly 0.5.
pub fn normalized_drop_counts(base_hits: usize, ablated_hits: usize, n: usize) -> Option<f64> {
    // base <= 0.51  <=>  100 * hits <= 51 * n
    if n == 0 || 100 * base_hits <= 51 * n {
        return None;
    }
    let num = 2 * (base_hits as i64 - ablated_hits as i64);
    let den = 2 * base_hits as i64 - n as i64;
    Some(num as f64 / den as f64)
}

fn hits(e: &Evaluation) -> usize {
    (e.accuracy * e.n as f64).round() as usize
}

/// A task's selected probe and where it was trained.
#[derive(Debug, Clone)]
pub struct BestProbe {
    pub id: ProbeId,
    pub probe: Probe,
}

impl BestProbe {
    pub fn task(&self) -> &str {
        &self.id.task
    }

    pub fn key(&self) -> SliceKey {
        self.id.key
    }
}

/// The general probe and the slice it was trained on.
#[derive(Debug, Clone)]
pub struct GeneralColumn {
    pub label: String,
    pub key: SliceKey,
    pub probe: Probe,
}

fn test_split(ds: &Dataset, key: &SliceKey, task: &str, pooling: Pooling) -> Result<LabeledSamples> {
    ds.task_split(key, task, Split::Test, pooling)
}

fn check_unique(probes: &[BestProbe]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for p in probes {
        if !seen.insert(p.task()) {
            return Err(Error::InvalidArgument(format!("two probes given for task `{}`", p.task())));
        }
    }
    if probes.is_empty() {
        return Err(Error::InsufficientData("no probes given".into()));
    }
    Ok(())
}

/// Cell `(i, j)` is probe `j`'s test accuracy on task `i`, read at probe
/// `j`'s own slice and through its own normalization. The general probe, if
/// given, is the first column.
pub fn transfer_matrix(
    ds: &Dataset,
    probes: &[BestProbe],
    general: Option<&GeneralColumn>,
    pooling: Pooling,
) -> Result<TaskMatrix> {
    check_unique(probes)?;
    let rows: Vec<String> = probes.iter().map(|p| p.task().to_string()).collect();
    let mut cols: Vec<(String, SliceKey, &Probe, String)> = Vec::new();
    if let Some(g) = general {
        cols.push((g.label.clone(), g.key, &g.probe, format!("{}@{}", g.label, g.key)));
    }
    for p in probes {
        cols.push((p.task().to_string(), p.key(), &p.probe, p.id.stem()));
    }

    let cells: Vec<(f64, CellProvenance)> = rows
        .par_iter()
        .flat_map_iter(|task| cols.iter().map(move |c| (task, c)))
        .map(|(task, (_, key, probe, pid))| {
            let data = test_split(ds, key, task, pooling)?;
            let acc = evaluate(*probe, &data)?.accuracy;
            Ok((
                acc,
                CellProvenance {
                    probe: Some(pid.clone()),
                    projector: None,
                    slice: Some(key.to_string()),
                    n: Some(data.len()),
                    note: None,
                },
            ))
        })
        .collect::<Result<_>>()?;
    TaskMatrix::from_cells(
        Metric::TransferAccuracy,
        rows,
        cols.iter().map(|c| c.0.clone()).collect(),
        cells,
    )
}

/// A task's nullspace projector, keyed by task id.
#[derive(Debug, Clone)]
pub struct NamedProjector {
    pub id: String,
    pub projector: Projector,
}

/// Cell `(i, j)` is the normalized drop of probe `i` on task `i`'s test data
/// when that data is first passed through task `j`'s nullspace projector.
pub fn ablation_matrix(
    ds: &Dataset,
    probes: &[BestProbe],
    nullspaces: &[NamedProjector],
    pooling: Pooling,
) -> Result<TaskMatrix> {
    check_unique(probes)?;
    let find = |task: &str| -> Result<&NamedProjector> {
        nullspaces
            .iter()
            .find(|n| n.projector.source.task == task)
            .ok_or_else(|| Error::InsufficientData(format!("no nullspace projector for task `{task}`")))
    };
    let projs: Vec<&NamedProjector> = probes.iter().map(|p| find(p.task())).collect::<Result<_>>()?;
    for n in &projs {
        if n.projector.kind != ProjectorKind::Nullspace {
            return Err(Error::InvalidArgument(format!("{} is not a nullspace projector", n.id)));
        }
    }

    let bases: Vec<(LabeledSamples, Evaluation)> = probes
        .par_iter()
        .map(|p| {
            let data = test_split(ds, &p.key(), p.task(), pooling)?;
            let e = evaluate(&p.probe, &data)?;
            Ok((data, e))
        })
        .collect::<Result<_>>()?;

    let n = probes.len();
    let cells: Vec<(f64, CellProvenance)> = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / n, c % n);
            let (data, base_eval) = &bases[i];
            let projected = LabeledSamples::new(project(&data.x, &projs[j].projector)?, data.y.clone())?;
            let ablated_eval = evaluate(&probes[i].probe, &projected)?;
            let drop = normalized_drop_counts(hits(base_eval), hits(&ablated_eval), data.len());
            let (base, ablated) = (base_eval.accuracy, ablated_eval.accuracy);
            Ok((
                drop.unwrap_or(f64::NAN),
                CellProvenance {
                    probe: Some(probes[i].id.stem()),
                    projector: Some(projs[j].id.clone()),
                    slice: Some(probes[i].key().to_string()),
                    n: Some(data.len()),
                    note: match drop {
                        Some(_) => Some(format!("base {base:.6}, ablated {ablated:.6}")),
                        None => Some(format!(
                            "undefined: base accuracy {base:.6} <= {MIN_BASE_ACCURACY}"
                        )),
                    },
                },
            ))
        })
        .collect::<Result<_>>()?;
    let labels: Vec<String> = probes.iter().map(|p| p.task().to_string()).collect();
    TaskMatrix::from_cells(Metric::NormDrop, labels.clone(), labels, cells)
}
