//! Binary Success/Failure probes over activation slices.

mod general;
mod io;
mod linear;
mod mlp;
mod select;
mod standardize;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledSamples, SliceKey, Split};
use crate::error::{Error, Result};

pub use general::{train_general_probe, GeneralProbe, TaskSamples};
pub use io::{load_probe, read_eval_csv, save_probe, write_eval_csv};
pub use linear::{
    logistic_objective, train_logistic, train_sgd, LinearProbe, LogisticConfig, LogisticFit,
    SgdConfig, SgdLoss, TrainMeta,
};
pub use mlp::{mlp_objective, train_mlp, MlpConfig, MlpMeta, MlpParams, MlpProbe, HIDDEN};
pub use select::{select_best, ProbeSelection, SelectionCandidate};
pub use standardize::Standardizer;

/// Anything that maps feature rows to real-valued scores.
pub trait Classifier {
    fn dim(&self) -> usize;

    /// One logit per row of `x` (raw features).
    fn scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>>;

    /// Success iff the score is strictly positive (probability above 0.5).
    fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<u8>> {
        Ok(self.scores(x)?.iter().map(|&s| u8::from(s > 0.0)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logistic,
    Sgd,
    Mlp,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Logistic => "logistic",
            Family::Sgd => "sgd",
            Family::Mlp => "mlp",
        }
    }

    pub fn is_linear(self) -> bool {
        matches!(self, Family::Logistic | Family::Sgd)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Family::Logistic),
            "sgd" => Ok(Family::Sgd),
            "mlp" => Ok(Family::Mlp),
            other => Err(Error::InvalidArgument(format!("unknown probe family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Probe {
    Linear(LinearProbe),
    Mlp(MlpProbe),
}

impl Probe {
    pub fn as_linear(&self) -> Option<&LinearProbe> {
        match self {
            Probe::Linear(p) => Some(p),
            Probe::Mlp(_) => None,
        }
    }
}

impl Classifier for Probe {
    fn dim(&self) -> usize {
        match self {
            Probe::Linear(p) => p.dim(),
            Probe::Mlp(p) => p.dim(),
        }
    }

    fn scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            Probe::Linear(p) => p.scores(x),
            Probe::Mlp(p) => p.scores(x),
        }
    }
}

/// Training hyperparameters for every family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub logistic: LogisticConfig,
    pub sgd: SgdConfig,
    pub mlp: MlpConfig,
}

/// Trains one probe of `family` with `seed`. `val` drives MLP early stopping.
pub fn train_probe(
    family: Family,
    train: &LabeledSamples,
    val: Option<&LabeledSamples>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Probe> {
    Ok(match family {
        Family::Logistic => {
            let c = LogisticConfig { seed, ..cfg.logistic.clone() };
            Probe::Linear(train_logistic(train, &c, None)?.probe)
        }
        Family::Sgd => {
            let c = SgdConfig { seed, ..cfg.sgd.clone() };
            Probe::Linear(train_sgd(train, &c)?)
        }
        Family::Mlp => {
            let c = MlpConfig { seed, ..cfg.mlp.clone() };
            Probe::Mlp(train_mlp(train, val, &c)?)
        }
    })
}

pub(crate) fn check_trainable(train: &LabeledSamples) -> Result<()> {
    let pos = train.positives();
    if train.is_empty() || pos == 0 || pos == train.len() {
        return Err(Error::InsufficientData(format!(
            "training data needs both classes ({} rows, {} positive)",
            train.len(),
            pos
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub n: usize,
}

/// Fraction of rows whose prediction matches the label.
pub fn evaluate<C: Classifier + ?Sized>(probe: &C, data: &LabeledSamples) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::InsufficientData("cannot evaluate on an empty split".into()));
    }
    if data.dim() != probe.dim() {
        return Err(Error::dims(probe.dim(), data.dim(), "probe vs evaluation features"));
    }
    let pred = probe.predict(&data.x)?;
    let hits = pred.iter().zip(&data.y).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        accuracy: hits as f64 / data.len() as f64,
        n: data.len(),
    })
}

/// Identifies one trained probe.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeId {
    pub task: String,
    pub key: SliceKey,
    pub family: Family,
    pub seed: u64,
}

impl ProbeId {
    /// File stem, e.g. `word_count__L3_mlp_body__logistic__s0`.
    pub fn stem(&self) -> String {
        format!("{}__{}__{}__s{}", self.task, self.key, self.family, self.seed)
    }
}

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.stem())
    }
}

/// Per-split accuracies of one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub probe: ProbeId,
    pub splits: Vec<(Split, Evaluation)>,
}

impl EvalReport {
    pub fn get(&self, split: Split) -> Option<Evaluation> {
        self.splits.iter().find(|(s, _)| *s == split).map(|(_, e)| *e)
    }

    pub fn accuracy(&self, split: Split) -> Option<f64> {
        self.get(split).map(|e| e.accuracy)
    }
}
