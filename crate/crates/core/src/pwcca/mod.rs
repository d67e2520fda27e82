//! Projection-weighted CCA between task rowspaces, and Ward clustering of
//! the resulting distances.

mod ward;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Pooling, RowQuery, SliceKey, Split};
use crate::error::{Error, Result};
use crate::inlp::{Projector, ProjectorKind};
use crate::metrics::{BestProbe, CellProvenance, Metric, NamedProjector, TaskMatrix};

pub use ward::{ward_cluster, ward_tree, Dendrogram, Merge};

/// Singular values below this fraction of the largest are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseRow {
    pub task: String,
    pub key: SliceKey,
    pub sample_id: String,
}

/// Test activations of several tasks stacked row-wise, each read at its own
/// best probe's slice.
#[derive(Debug, Clone)]
pub struct Universe {
    pub model: String,
    pub x: DMatrix<f64>,
    pub rows: Vec<UniverseRow>,
}

impl Universe {
    /// Copy with every column shifted to zero mean.
    pub fn centered(&self) -> DMatrix<f64> {
        let mut x = self.x.clone();
        if x.nrows() > 0 {
            let mean = x.row_mean();
            for mut r in x.row_iter_mut() {
                r -= &mean;
            }
        }
        x
    }
}

/// Concatenates each probe's task test rows at the probe's slice. A probe's
/// task is looked up in every dataset; all datasets must come from one model.
pub fn build_universe(datasets: &[&Dataset], probes: &[BestProbe], pooling: Pooling) -> Result<Universe> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::InsufficientData("no datasets for the universe".into()))?;
    for ds in datasets {
        if ds.model.name != first.model.name || ds.dim() != first.dim() {
            return Err(Error::InvalidArgument(format!(
                "universe mixes models `{}` (d = {}) and `{}` (d = {})",
                first.model.name,
                first.dim(),
                ds.model.name,
                ds.dim()
            )));
        }
    }
    if probes.is_empty() {
        return Err(Error::InsufficientData("no probes for the universe".into()));
    }
    let d = first.dim();
    let mut data = Vec::new();
    let mut rows = Vec::new();
    for p in probes {
        let key = p.key();
        let ds = datasets
            .iter()
            .find(|ds| ds.slice(&key).is_some() && ds.tasks().iter().any(|t| t == p.task()))
            .ok_or_else(|| Error::InsufficientData(format!("no dataset holds task `{}` at {key}", p.task())))?;
        let q = RowQuery {
            task: p.task(),
            split: Some(Split::Test),
            null_task: false,
            pooling,
        };
        let idx = ds.rows(&key, q)?;
        if idx.is_empty() {
            return Err(Error::InsufficientData(format!("task `{}` has an empty test split at {key}", p.task())));
        }
        let slice = ds.slice(&key).expect("checked above");
        for &r in &idx {
            data.extend(slice.matrix.row(r).iter().map(|v| *v as f64));
            rows.push(UniverseRow {
                task: p.task().to_string(),
                key,
                sample_id: slice.records[r].sample_id.clone(),
            });
        }
    }
    Ok(Universe {
        model: first.model.name.clone(),
        x: DMatrix::from_row_slice(rows.len(), d, &data),
        rows,
    })
}

/// `(X·Pᵀ)·P`: the part of each row that lies in the rowspace.
pub fn view(x: &DMatrix<f64>, p_row: &Projector) -> Result<DMatrix<f64>> {
    if p_row.kind != ProjectorKind::Rowspace {
        return Err(Error::InvalidArgument("views are built from rowspace projectors".into()));
    }
    if x.ncols() != p_row.dim() {
        return Err(Error::dims(p_row.dim(), x.ncols(), "universe vs projector"));
    }
    Ok((x * p_row.matrix.transpose()) * &p_row.matrix)
}

/// Two views of one universe.
#[derive(Debug, Clone)]
pub struct ViewPair {
    pub view_i: DMatrix<f64>,
    pub view_j: DMatrix<f64>,
    pub source_i: String,
    pub source_j: String,
}

impl ViewPair {
    pub fn new(x: &DMatrix<f64>, i: &NamedProjector, j: &NamedProjector) -> Result<Self> {
        Ok(ViewPair {
            view_i: view(x, &i.projector)?,
            view_j: view(x, &j.projector)?,
            source_i: i.id.clone(),
            source_j: j.id.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PwccaDirection {
    /// Weights from how much of view i each canonical direction explains.
    IToJ,
    JToI,
    Symmetrized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwccaResult {
    /// Canonical correlations, descending.
    pub rho: Vec<f64>,
    /// Non-negative, sums to one (empty when a view has rank 0).
    pub alpha: Vec<f64>,
    pub similarity: f64,
    pub direction: PwccaDirection,
    /// A view had numerical rank 0; similarity is 0 by convention.
    pub degenerate: bool,
}

/// Orthonormal basis of the column space, keeping singular values above the
/// relative tolerance. Built as `qr(M·V_r)` from the right singular vectors:
/// the left ones come back inaccurate when `M` is rank-deficient.
fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if m.ncols() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 || !smax.is_finite() {
        return DMatrix::zeros(n, 0);
    }
    let mut keep: Vec<usize> = (0..s.len()).filter(|&k| s[k] / smax >= RANK_TOLERANCE).collect();
    keep.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let vr = vt.select_rows(&keep).transpose();
    (m * vr).qr().q()
}

fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = m.clone();
    let mean = c.row_mean();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    c
}

/// Projection weights: `α_k ∝ Σ_c |⟨h_k, z_c⟩|` over the columns `z_c` of
/// the (centered) view.
fn weights(h: &DMatrix<f64>, z: &DMatrix<f64>) -> Vec<f64> {
    let raw: Vec<f64> = (0..h.ncols())
        .map(|k| {
            let hk = h.column(k);
            z.column_iter().map(|c| hk.dot(&c).abs()).sum()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / raw.len().max(1) as f64; raw.len()]
    }
}

/// The `k` leading eigenvectors of a symmetric PSD matrix, and the square
/// roots of their eigenvalues clamped to `[0, 1]`.
fn top_eigenvectors(g: DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let eig = g.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(k);
    let roots = order.iter().map(|&c| eig.eigenvalues[c].max(0.0).sqrt().min(1.0)).collect();
    (eig.eigenvectors.select_columns(&order), roots)
}

struct Cca {
    rho: Vec<f64>,
    alpha_i: Vec<f64>,
    alpha_j: Vec<f64>,
}

fn cca(view_i: &DMatrix<f64>, view_j: &DMatrix<f64>) -> Result<Option<Cca>> {
    if view_i.shape() != view_j.shape() {
        return Err(Error::InvalidArgument(format!(
            "views have shapes {:?} and {:?}",
            view_i.shape(),
            view_j.shape()
        )));
    }
    if view_i.nrows() < 2 {
        return Err(Error::InsufficientData("PWCCA needs at least 2 rows".into()));
    }
    let (zi, zj) = (center(view_i), center(view_j));
    let (qi, qj) = (range_basis(&zi), range_basis(&zj));
    let k = qi.ncols().min(qj.ncols());
    if k == 0 {
        return Ok(None);
    }
    let m = qi.transpose() * &qj;
    // canonical directions from the two Gram eigenproblems rather than the
    // SVD of m, whose singular vectors degrade when m is rank-deficient
    let (u, rho) = top_eigenvectors(&m * m.transpose(), k);
    let (v, _) = top_eigenvectors(m.transpose() * &m, k);
    let hi = &qi * u;
    let hj = &qj * v;
    Ok(Some(Cca {
        rho,
        alpha_i: weights(&hi, &zi),
        alpha_j: weights(&hj, &zj),
    }))
}

fn finish(rho: Vec<f64>, alpha: Vec<f64>, direction: PwccaDirection) -> PwccaResult {
    let similarity = rho.iter().zip(&alpha).map(|(r, a)| r * a).sum::<f64>().clamp(0.0, 1.0);
    PwccaResult {
        rho,
        alpha,
        similarity,
        direction,
        degenerate: false,
    }
}

fn degenerate(direction: PwccaDirection) -> PwccaResult {
    PwccaResult {
        rho: vec![],
        alpha: vec![],
        similarity: 0.0,
        direction,
        degenerate: true,
    }
}

fn later(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let ord = a.shape().cmp(&b.shape()).then_with(|| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    ord.is_gt()
}

/// PWCCA similarity of two views of the same rows. `IToJ` weights the
/// canonical correlations by view i, `JToI` by view j, `Symmetrized` by the
/// mean of both weightings, which makes it symmetric in its arguments.
pub fn pwcca(view_i: &DMatrix<f64>, view_j: &DMatrix<f64>, direction: PwccaDirection) -> Result<PwccaResult> {
    // a fixed argument order makes the symmetrized value bit-identical under swaps
    if direction == PwccaDirection::Symmetrized && later(view_i, view_j) {
        return pwcca(view_j, view_i, direction);
    }
    let Some(c) = cca(view_i, view_j)? else {
        return Ok(degenerate(direction));
    };
    let alpha = match direction {
        PwccaDirection::IToJ => c.alpha_i,
        PwccaDirection::JToI => c.alpha_j,
        PwccaDirection::Symmetrized => c.alpha_i.iter().zip(&c.alpha_j).map(|(a, b)| 0.5 * (a + b)).collect(),
    };
    Ok(finish(c.rho, alpha, direction))
}

/// Symmetrized PWCCA for one pair of tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSimilarity {
    pub task_i: String,
    pub task_j: String,
    pub result: PwccaResult,
}

/// `1 − sim` over all task pairs (diagonal exactly 0), plus the per-pair
/// results. The universe is centered before projection.
pub fn pwcca_distance_matrix(universe: &Universe, rowspaces: &[NamedProjector]) -> Result<(TaskMatrix, Vec<PairSimilarity>)> {
    let x = universe.centered();
    let views: Vec<DMatrix<f64>> = rowspaces.iter().map(|r| view(&x, &r.projector)).collect::<Result<_>>()?;
    let t = rowspaces.len();
    let pairs: Vec<(usize, usize)> = (0..t).flat_map(|i| (i + 1..t).map(move |j| (i, j))).collect();
    let results: Vec<PwccaResult> = pairs
        .par_iter()
        .map(|&(i, j)| pwcca(&views[i], &views[j], PwccaDirection::Symmetrized))
        .collect::<Result<_>>()?;
    let mut dist = DMatrix::zeros(t, t);
    let mut notes = vec![vec![CellProvenance::default(); t]; t];
    for (&(i, j), r) in pairs.iter().zip(&results) {
        dist[(i, j)] = 1.0 - r.similarity;
        dist[(j, i)] = 1.0 - r.similarity;
        let note = r.degenerate.then(|| "degenerate: rank-0 view".to_string());
        for (a, b) in [(i, j), (j, i)] {
            notes[a][b] = CellProvenance {
                projector: Some(format!("{}|{}", rowspaces[a].id, rowspaces[b].id)),
                n: Some(x.nrows()),
                note: note.clone(),
                ..Default::default()
            };
        }
    }
    let labels: Vec<String> = rowspaces.iter().map(|r| r.projector.source.task.clone()).collect();
    let cells = (0..t * t).map(|c| (dist[(c / t, c % t)], notes[c / t][c % t].clone())).collect();
    let matrix = TaskMatrix::from_cells(Metric::PwccaDistance, labels.clone(), labels, cells)?;
    let pairs = pairs
        .into_iter()
        .zip(results)
        .map(|((i, j), result)| PairSimilarity {
            task_i: rowspaces[i].projector.source.task.clone(),
            task_j: rowspaces[j].projector.source.task.clone(),
            result,
        })
        .collect();
    Ok((matrix, pairs))
}

/// Distances of a [`TaskMatrix`] as a dense matrix.
pub fn to_dense(m: &TaskMatrix) -> DMatrix<f64> {
    let (r, c) = (m.row_labels.len(), m.col_labels.len());
    DMatrix::from_fn(r, c, |i, j| m.values[i][j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Scope, Stream};
    use crate::inlp::ProjectorSource;

    fn proj(dirs: &[&[f64]]) -> Projector {
        let d = dirs[0].len();
        let m = DMatrix::from_fn(dirs.len(), d, |i, j| dirs[i][j]);
        Projector::from_raw_directions(
            &m,
            ProjectorKind::Rowspace,
            ProjectorSource { task: "t".into(), key: SliceKey::new(0, Stream::Mlp, Scope::Eos) },
        )
    }

    #[test]
    fn zero_projector_is_degenerate() {
        let x = DMatrix::from_fn(20, 3, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let a = view(&x, &proj(&[&[1.0, 0.0, 0.0]])).unwrap();
        let z = DMatrix::zeros(20, 3);
        let r = pwcca(&a, &z, PwccaDirection::IToJ).unwrap();
        assert!(r.degenerate && r.similarity == 0.0);
    }

    #[test]
    fn view_rejects_nullspace_projectors() {
        let p = proj(&[&[1.0, 0.0]]).complement();
        assert!(view(&DMatrix::zeros(3, 2), &p).is_err());
    }
}
