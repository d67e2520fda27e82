//! Linear probes: full-batch L2-regularized logistic regression, plus an SGD
//! variant with a selectable loss.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{check_trainable, Classifier};
use crate::data::LabeledSamples;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once an epoch improves the loss by less than this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-3,
            max_epochs: 500,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SgdLoss {
    Hinge,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub loss: SgdLoss,
    pub l2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            loss: SgdLoss::Hinge,
            l2: 1e-4,
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: usize,
    pub l2: f64,
    pub converged: bool,
    pub final_loss: f64,
}

/// `score(x) = w · standardize(x) + b`; predicts Success when the score is
/// strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub normalization: Standardizer,
    pub meta: TrainMeta,
}

impl LinearProbe {
    /// A probe whose score is identically `bias`.
    pub fn constant(d: usize, bias: f64) -> Self {
        LinearProbe {
            weights: DVector::zeros(d),
            bias,
            normalization: Standardizer::identity(d),
            meta: TrainMeta {
                seed: 0,
                epochs: 0,
                l2: 0.0,
                converged: true,
                final_loss: f64::NAN,
            },
        }
    }

    /// The probe's weight vector expressed on raw (unstandardized) features.
    pub fn raw_direction(&self) -> DVector<f64> {
        self.normalization.raw_weights(&self.weights)
    }
}

impl Classifier for LinearProbe {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let z = self.normalization.apply(x)?;
        Ok((z * &self.weights).add_scalar(self.bias))
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean log-loss plus `l2/2 · ‖w‖²` and its gradient, on standardized
/// features `z`. Returns `(loss, ∂w, ∂b)`.
pub fn logistic_objective(
    z: &DMatrix<f64>,
    y: &[u8],
    w: &DVector<f64>,
    b: f64,
    l2: f64,
) -> (f64, DVector<f64>, f64) {
    let n = z.nrows() as f64;
    let scores = (z * w).add_scalar(b);
    let mut loss = 0.0;
    let mut residual = DVector::zeros(scores.len());
    for (i, (&s, &yi)) in scores.iter().zip(y).enumerate() {
        let yi = yi as f64;
        loss += softplus(s) - yi * s;
        residual[i] = sigmoid(s) - yi;
    }
    loss = loss / n + 0.5 * l2 * w.norm_squared();
    let grad_w = z.tr_mul(&residual) / n + w * l2;
    let grad_b = residual.sum() / n;
    (loss, grad_w, grad_b)
}

fn logistic_loss(z: &DMatrix<f64>, y: &[u8], w: &DVector<f64>, b: f64, l2: f64) -> f64 {
    let scores = (z * w).add_scalar(b);
    let data: f64 = scores
        .iter()
        .zip(y)
        .map(|(&s, &yi)| softplus(s) - yi as f64 * s)
        .sum();
    data / z.nrows() as f64 + 0.5 * l2 * w.norm_squared()
}

/// Result of [`train_logistic`], with the per-epoch loss history.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub probe: LinearProbe,
    pub loss_trace: Vec<f64>,
}

/// Full-batch gradient descent with Armijo backtracking, starting from zero.
///
/// `normalization` freezes the feature scaling; when `None` it is fitted on
/// `train`. Hitting `max_epochs` is not an error: the probe is returned with
/// `meta.converged == false`.
pub fn train_logistic(
    train: &LabeledSamples,
    cfg: &LogisticConfig,
    normalization: Option<&Standardizer>,
) -> Result<LogisticFit> {
    check_trainable(train)?;
    let normalization = match normalization {
        Some(s) => s.clone(),
        None => Standardizer::fit(&train.x)?,
    };
    let z = normalization.apply(&train.x)?;
    let d = z.ncols();

    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let (mut loss, mut gw, mut gb) = logistic_objective(&z, &train.y, &w, b, cfg.l2);
    let mut trace = vec![loss];
    let mut step = 1.0;
    let mut converged = false;
    let mut epochs = 0;

    while epochs < cfg.max_epochs {
        let gnorm2 = gw.norm_squared() + gb * gb;
        if gnorm2 == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = None;
        while step > 1e-14 {
            let w_new = &w - &gw * step;
            let b_new = b - gb * step;
            let l_new = logistic_loss(&z, &train.y, &w_new, b_new, cfg.l2);
            if l_new <= loss - 1e-4 * step * gnorm2 {
                accepted = Some((w_new, b_new, l_new));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, b_new, l_new)) = accepted else {
            // no descent step exists at machine precision
            converged = true;
            break;
        };
        epochs += 1;
        let delta = loss - l_new;
        w = w_new;
        b = b_new;
        (loss, gw, gb) = logistic_objective(&z, &train.y, &w, b, cfg.l2);
        trace.push(loss);
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
        step = (step * 2.0).min(1e4);
    }

    if !w.iter().all(|v| v.is_finite()) || !b.is_finite() {
        return Err(Error::Stage {
            stage: "train".into(),
            message: "logistic training diverged to non-finite weights".into(),
        });
    }
    Ok(LogisticFit {
        probe: LinearProbe {
            weights: w,
            bias: b,
            normalization,
            meta: TrainMeta {
                seed: cfg.seed,
                epochs,
                l2: cfg.l2,
                converged,
                final_loss: loss,
            },
        },
        loss_trace: trace,
    })
}

/// Mini-batch SGD on a linear model with hinge or log loss.
pub fn train_sgd(train: &LabeledSamples, cfg: &SgdConfig) -> Result<LinearProbe> {
    check_trainable(train)?;
    let normalization = Standardizer::fit(&train.x)?;
    let z = normalization.apply(&train.x)?;
    let (n, d) = z.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = DVector::<f64>::zeros(d);
    let mut b = 0.0;
    let batch = cfg.batch_size.max(1);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate / (1.0 + 0.1 * epoch as f64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut gw = &w * cfg.l2;
            let mut gb = 0.0;
            let m = chunk.len() as f64;
            for &i in chunk {
                let row = z.row(i);
                let s = row.dot(&w.transpose()) + b;
                let t = if train.y[i] == 1 { 1.0 } else { -1.0 };
                let coef = match cfg.loss {
                    SgdLoss::Hinge => {
                        if t * s < 1.0 {
                            -t
                        } else {
                            0.0
                        }
                    }
                    SgdLoss::Log => -t * sigmoid(-t * s),
                };
                if coef != 0.0 {
                    gw += row.transpose() * (coef / m);
                    gb += coef / m;
                }
            }
            w -= gw * lr;
            b -= gb * lr;
        }
    }
    let final_loss = match cfg.loss {
        SgdLoss::Log => logistic_loss(&z, &train.y, &w, b, cfg.l2),
        SgdLoss::Hinge => {
            let scores = (&z * &w).add_scalar(b);
            let data: f64 = scores
                .iter()
                .zip(&train.y)
                .map(|(&s, &yi)| (1.0 - if yi == 1 { s } else { -s }).max(0.0))
                .sum();
            data / n as f64 + 0.5 * cfg.l2 * w.norm_squared()
        }
    };
    Ok(LinearProbe {
        weights: w,
        bias: b,
        normalization,
        meta: TrainMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
            l2: cfg.l2,
            converged: true,
            final_loss,
        },
    })
}
