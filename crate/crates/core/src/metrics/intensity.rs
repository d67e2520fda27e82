use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Pooling, RowQuery, SliceKey, Split};
use crate::error::{Error, Result};
use crate::fsutil::{csv_err, ensure_parent, fmt_float};
use crate::inlp::{Projector, ProjectorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityMode {
    /// `‖x·P_rowᵀ‖₂` for every sample.
    #[default]
    RowNorm,
    /// One spectral norm `‖X·P_rowᵀ‖₂` per group.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleGroup {
    Success,
    Failure,
    NullTask,
}

impl SampleGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleGroup::Success => "success",
            SampleGroup::Failure => "failure",
            SampleGroup::NullTask => "null_task",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: usize,
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl GroupSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| -> f64 {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        GroupSummary {
            n: v.len(),
            mean: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityGroup {
    pub group: SampleGroup,
    pub values: Vec<f64>,
    pub summary: GroupSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityDistribution {
    /// Task whose rowspace the samples were projected onto.
    pub rowspace_task: String,
    pub key: SliceKey,
    pub mode: IntensityMode,
    pub groups: Vec<IntensityGroup>,
}

impl IntensityDistribution {
    pub fn group(&self, g: SampleGroup) -> Option<&IntensityGroup> {
        self.groups.iter().find(|x| x.group == g)
    }
}

fn check(x: &DMatrix<f64>, p_row: &Projector) -> Result<()> {
    if p_row.kind != ProjectorKind::Rowspace {
        return Err(Error::InvalidArgument(
            "intensity needs a rowspace projector, got a nullspace one".into(),
        ));
    }
    if x.ncols() != p_row.dim() {
        return Err(Error::dims(p_row.dim(), x.ncols(), "activations vs rowspace projector"));
    }
    Ok(())
}

/// Per-row norm of each sample's projection onto the rowspace.
pub fn intensity(x: &DMatrix<f64>, p_row: &Projector) -> Result<Vec<f64>> {
    check(x, p_row)?;
    let proj = x * p_row.matrix.transpose();
    Ok(proj.row_iter().map(|r| r.norm()).collect())
}

fn spectral(x: &DMatrix<f64>, p_row: &Projector) -> Result<f64> {
    check(x, p_row)?;
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let proj = x * p_row.matrix.transpose();
    Ok(proj.svd(false, false).singular_values.iter().copied().fold(0.0, f64::max))
}

/// Intensities of task `task`'s test rows at `key`, split by label, plus the
/// null-task rows at the same slice subsampled (seeded) to the task's count.
pub fn intensity_distribution(
    ds: &Dataset,
    task: &str,
    key: &SliceKey,
    p_row: &Projector,
    pooling: Pooling,
    mode: IntensityMode,
    seed: u64,
) -> Result<IntensityDistribution> {
    let test = ds.task_split(key, task, Split::Test, pooling)?;
    let pick = |label: u8| {
        let rows: Vec<usize> = (0..test.len()).filter(|&i| test.y[i] == label).collect();
        test.x.select_rows(&rows)
    };
    let mut parts = vec![(SampleGroup::Success, pick(1)), (SampleGroup::Failure, pick(0))];
    if ds.has_null_task() {
        let null = ds.samples(
            key,
            RowQuery {
                task: "",
                split: None,
                null_task: true,
                pooling,
            },
        )?;
        let m = test.len().min(null.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = sample(&mut rng, null.len(), m).into_vec();
        rows.sort_unstable();
        parts.push((SampleGroup::NullTask, null.x.select_rows(&rows)));
    }
    let groups = parts
        .into_iter()
        .map(|(group, x)| {
            let values = match mode {
                IntensityMode::RowNorm => intensity(&x, p_row)?,
                IntensityMode::Spectral => vec![spectral(&x, p_row)?],
            };
            let summary = GroupSummary::of(&values);
            Ok(IntensityGroup { group, values, summary })
        })
        .collect::<Result<_>>()?;
    Ok(IntensityDistribution {
        rowspace_task: task.to_string(),
        key: *key,
        mode,
        groups,
    })
}

/// `group,value` rows for density plots.
pub fn write_intensity_csv(path: &Path, dist: &IntensityDistribution) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["group", "value"]).map_err(|e| csv_err(path, e))?;
    for g in &dist.groups {
        for v in &g.values {
            w.write_record([g.group.as_str(), &fmt_float(*v)]).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
