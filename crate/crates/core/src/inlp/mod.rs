//! Iterative nullspace projection and the projector type it produces.

mod io;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSamples, SliceKey, Split};
use crate::error::{Error, Result};
use crate::probe::{evaluate, train_logistic, LogisticConfig, Standardizer};

pub use io::{load_projector, save_projector, ProjectorSidecar};

/// Directions whose residual after orthogonalization falls below this are
/// treated as already spanned.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Offset added to the iteration seed when a collinear direction is retried.
const RETRY_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectorKind {
    Rowspace,
    Nullspace,
}

impl fmt::Display for ProjectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectorKind::Rowspace => "rowspace",
            ProjectorKind::Nullspace => "nullspace",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorSource {
    pub task: String,
    pub key: SliceKey,
}

/// An orthogonal projector built from `k` orthonormal directions in raw
/// activation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub matrix: DMatrix<f64>,
    pub kind: ProjectorKind,
    pub source: ProjectorSource,
    /// `k × d`, orthonormal rows.
    pub directions: DMatrix<f64>,
}

impl Projector {
    /// Rowspace (`UᵀU`) or nullspace (`I − UᵀU`) of orthonormal rows `U`.
    pub fn from_directions(u: DMatrix<f64>, kind: ProjectorKind, source: ProjectorSource) -> Self {
        let row = u.tr_mul(&u);
        let matrix = match kind {
            ProjectorKind::Rowspace => row,
            ProjectorKind::Nullspace => DMatrix::identity(u.ncols(), u.ncols()) - row,
        };
        Projector {
            matrix,
            kind,
            source,
            directions: u,
        }
    }

    /// Orthonormalizes arbitrary direction rows first; near-dependent rows
    /// are dropped.
    pub fn from_raw_directions(
        dirs: &DMatrix<f64>,
        kind: ProjectorKind,
        source: ProjectorSource,
    ) -> Self {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for row in dirs.row_iter() {
            let v = row.transpose();
            let n = v.norm();
            if n == 0.0 {
                continue;
            }
            if let Some(r) = orthogonalize(&(v / n), &basis) {
                basis.push(r);
            }
        }
        Self::from_directions(stack_rows(&basis, dirs.ncols()), kind, source)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of retained orthonormal directions (the rowspace rank).
    pub fn n_directions(&self) -> usize {
        self.directions.nrows()
    }

    /// Rank of this projector's own range.
    pub fn rank(&self) -> usize {
        match self.kind {
            ProjectorKind::Rowspace => self.n_directions(),
            ProjectorKind::Nullspace => self.dim() - self.n_directions(),
        }
    }

    /// The paired projector over the same directions.
    pub fn complement(&self) -> Projector {
        let kind = match self.kind {
            ProjectorKind::Rowspace => ProjectorKind::Nullspace,
            ProjectorKind::Nullspace => ProjectorKind::Rowspace,
        };
        Projector::from_directions(self.directions.clone(), kind, self.source.clone())
    }

    /// `‖P − Pᵀ‖∞` and `‖P² − P‖∞` (max-abs entry).
    pub fn defects(&self) -> (f64, f64) {
        let p = &self.matrix;
        let sym = (p - p.transpose()).amax();
        let idem = (p * p - p).amax();
        (sym, idem)
    }
}

pub(crate) fn stack_rows(rows: &[DVector<f64>], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

/// Modified Gram–Schmidt of a unit vector against an orthonormal basis (two
/// passes). `None` if the residual is below [`RESIDUAL_TOLERANCE`].
fn orthogonalize(v: &DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let mut r = v.clone();
    for _ in 0..2 {
        for u in basis {
            let c = r.dot(u);
            r.axpy(-c, u, 1.0);
        }
    }
    let n = r.norm();
    (n >= RESIDUAL_TOLERANCE).then(|| r / n)
}

/// `X·P`, cross-checked against `(X·Pᵀ)·P`.
pub fn project(x: &DMatrix<f64>, p: &Projector) -> Result<DMatrix<f64>> {
    if x.ncols() != p.dim() {
        return Err(Error::dims(p.dim(), x.ncols(), "activations vs projector"));
    }
    let direct = x * &p.matrix;
    let paper_form = (x * p.matrix.transpose()) * &p.matrix;
    let gap = (&direct - paper_form).amax();
    if gap > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "projector is not symmetric idempotent: (X·Pᵀ)·P differs from X·P by {gap:e}"
        )));
    }
    Ok(direct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InlpConfig {
    pub halt_accuracy: f64,
    /// `None` means `min(d, 100)`.
    pub max_iterations: Option<usize>,
    pub eval_split: Split,
    pub seed: u64,
    pub logistic: LogisticConfig,
}

impl Default for InlpConfig {
    fn default() -> Self {
        InlpConfig {
            halt_accuracy: 0.55,
            max_iterations: None,
            eval_split: Split::Val,
            seed: 0,
            // weakly regularized fits on near-separable data wobble off the
            // signal direction and cost extra iterations
            logistic: LogisticConfig { l2: 1e-2, ..LogisticConfig::default() },
        }
    }
}

impl InlpConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.halt_accuracy) {
            return Err(Error::InvalidArgument(format!(
                "halt_accuracy must lie in [0.5, 1), got {}",
                self.halt_accuracy
            )));
        }
        if self.eval_split == Split::Train {
            return Err(Error::InvalidArgument("INLP cannot halt on the training split".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    /// The very first probe was already below the threshold.
    InitiallyBelowThreshold,
    BelowThreshold,
    MaxIterations,
    CollinearDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub seed: u64,
    pub eval_accuracy: f64,
    /// Whether this probe's direction was added to the rowspace.
    pub accepted: bool,
    /// Norm left of the unit direction after removing the accumulated ones;
    /// absent when no direction was proposed.
    pub residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InlpTrace {
    pub iterations: Vec<IterationRecord>,
    pub halt: HaltReason,
    pub halt_accuracy: f64,
    pub eval_split: Split,
    /// Accuracy of the last fresh probe, trained on fully projected data.
    pub final_accuracy: f64,
}

impl InlpTrace {
    pub fn zero_iterations(&self) -> bool {
        self.halt == HaltReason::InitiallyBelowThreshold
    }
}

#[derive(Debug, Clone)]
pub struct InlpOutput {
    pub nullspace: Projector,
    pub rowspace: Projector,
    pub trace: InlpTrace,
}

/// Runs INLP on one slice: trains a logistic probe, removes its direction,
/// and repeats until the probe on projected `eval` data drops below
/// `cfg.halt_accuracy`.
///
/// Probes see the slice's normalization fitted once on the unprojected
/// training data; recorded directions live in raw activation coordinates.
pub fn run_inlp(
    train: &LabeledSamples,
    eval: &LabeledSamples,
    source: ProjectorSource,
    cfg: &InlpConfig,
) -> Result<InlpOutput> {
    cfg.check()?;
    let d = train.dim();
    if d < 2 {
        return Err(Error::InvalidArgument("INLP needs at least two feature dimensions".into()));
    }
    if eval.dim() != d {
        return Err(Error::dims(d, eval.dim(), "INLP eval features"));
    }
    let normalization = Standardizer::fit_isotropic(&train.x)?;
    let max_iter = cfg.max_iterations.unwrap_or(d.min(100));
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut records = Vec::new();
    let mut halt = HaltReason::MaxIterations;
    let mut final_accuracy = f64::NAN;

    let mut i = 0;
    while i <= max_iter {
        let p_null = DMatrix::identity(d, d) - {
            let u = stack_rows(&basis, d);
            u.tr_mul(&u)
        };
        let tr = LabeledSamples::new(&train.x * &p_null, train.y.clone())?;
        let ev = LabeledSamples::new(&eval.x * &p_null, eval.y.clone())?;

        let attempt = |seed: u64| -> Result<(f64, DVector<f64>)> {
            let c = LogisticConfig {
                seed,
                ..cfg.logistic.clone()
            };
            let probe = train_logistic(&tr, &c, Some(&normalization))?.probe;
            let acc = evaluate(&probe, &ev)?.accuracy;
            // the probe only sees x·P_null, so its effective direction is P_null·v
            Ok((acc, &p_null * probe.raw_direction()))
        };

        let seed = cfg.seed.wrapping_add(i as u64);
        let (acc, dir) = attempt(seed)?;
        final_accuracy = acc;
        if acc < cfg.halt_accuracy {
            records.push(IterationRecord {
                iteration: i,
                seed,
                eval_accuracy: acc,
                accepted: false,
                residual: None,
            });
            halt = if i == 0 {
                HaltReason::InitiallyBelowThreshold
            } else {
                HaltReason::BelowThreshold
            };
            break;
        }
        if i == max_iter {
            records.push(IterationRecord {
                iteration: i,
                seed,
                eval_accuracy: acc,
                accepted: false,
                residual: None,
            });
            break;
        }

        let mut accepted = accept(&dir, &mut basis);
        records.push(IterationRecord {
            iteration: i,
            seed,
            eval_accuracy: acc,
            accepted: accepted.is_some(),
            residual: Some(accepted.unwrap_or_else(|| residual_norm(&dir, &basis))),
        });
        if accepted.is_none() {
            let retry_seed = seed.wrapping_add(RETRY_SEED_OFFSET);
            let (acc2, dir2) = attempt(retry_seed)?;
            final_accuracy = acc2;
            accepted = accept(&dir2, &mut basis);
            records.push(IterationRecord {
                iteration: i,
                seed: retry_seed,
                eval_accuracy: acc2,
                accepted: accepted.is_some(),
                residual: Some(accepted.unwrap_or_else(|| residual_norm(&dir2, &basis))),
            });
            if accepted.is_none() {
                log::warn!("INLP on {}: collinear direction at iteration {i}; halting", source.key);
                halt = HaltReason::CollinearDirection;
                break;
            }
        }
        i += 1;
    }

    let u = stack_rows(&basis, d);
    let nullspace = Projector::from_directions(u.clone(), ProjectorKind::Nullspace, source.clone());
    let rowspace = Projector::from_directions(u, ProjectorKind::Rowspace, source);
    Ok(InlpOutput {
        nullspace,
        rowspace,
        trace: InlpTrace {
            iterations: records,
            halt,
            halt_accuracy: cfg.halt_accuracy,
            eval_split: cfg.eval_split,
            final_accuracy,
        },
    })
}

fn unit(v: &DVector<f64>) -> Option<DVector<f64>> {
    let n = v.norm();
    (n > 0.0 && n.is_finite()).then(|| v / n)
}

fn residual_norm(v: &DVector<f64>, basis: &[DVector<f64>]) -> f64 {
    let Some(mut r) = unit(v) else { return 0.0 };
    for u in basis {
        let c = r.dot(u);
        r.axpy(-c, u, 1.0);
    }
    r.norm()
}

/// Adds `v` to the basis if it is independent; returns its residual norm.
fn accept(v: &DVector<f64>, basis: &mut Vec<DVector<f64>>) -> Option<f64> {
    let u = unit(v)?;
    let res = residual_norm(&u, basis);
    let r = orthogonalize(&u, basis)?;
    basis.push(r);
    Some(res)
}
