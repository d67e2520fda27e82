//! Single-hidden-layer ReLU probe trained with Adam.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::linear::sigmoid;
use super::standardize::Standardizer;
use super::{check_trainable, evaluate, Classifier};
use crate::data::LabeledSamples;
use crate::error::{Error, Result};

pub const HIDDEN: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub learning_rate: f64,
    /// Step size at epoch `t` is `learning_rate / (1 + decay * t)`.
    pub decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            learning_rate: 1e-3,
            decay: 0.01,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// `HIDDEN × d`.
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    pub w2: DVector<f64>,
    pub b2: f64,
}

impl MlpParams {
    fn init(d: usize, rng: &mut ChaCha8Rng) -> Self {
        let he = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("finite std");
        let out = Normal::new(0.0, (1.0 / HIDDEN as f64).sqrt()).expect("finite std");
        MlpParams {
            w1: DMatrix::from_fn(HIDDEN, d, |_, _| he.sample(rng)),
            b1: DVector::zeros(HIDDEN),
            w2: DVector::from_fn(HIDDEN, |_, _| out.sample(rng)),
            b2: 0.0,
        }
    }

    fn zeros_like(&self) -> Self {
        MlpParams {
            w1: DMatrix::zeros(self.w1.nrows(), self.w1.ncols()),
            b1: DVector::zeros(self.b1.len()),
            w2: DVector::zeros(self.w2.len()),
            b2: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.b1.iter()).chain(self.w2.iter()).all(|v| v.is_finite())
            && self.b2.is_finite()
    }

    /// Logits for standardized inputs.
    pub fn forward(&self, z: &DMatrix<f64>) -> DVector<f64> {
        let mut h = z * self.w1.transpose();
        for mut row in h.row_iter_mut() {
            row += self.b1.transpose();
            row.apply(|v| *v = v.max(0.0));
        }
        (h * &self.w2).add_scalar(self.b2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpMeta {
    pub seed: u64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub l2: f64,
    pub early_stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpProbe {
    pub params: MlpParams,
    pub normalization: Standardizer,
    pub meta: MlpMeta,
}

impl Classifier for MlpProbe {
    fn dim(&self) -> usize {
        self.params.w1.ncols()
    }

    fn scores(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.params.forward(&self.normalization.apply(x)?))
    }
}

/// Mean log-loss plus `l2/2 · (‖W1‖² + ‖w2‖²)` and its gradient.
pub fn mlp_objective(z: &DMatrix<f64>, y: &[u8], p: &MlpParams, l2: f64) -> (f64, MlpParams) {
    let m = z.nrows() as f64;
    let mut pre = z * p.w1.transpose();
    for mut row in pre.row_iter_mut() {
        row += p.b1.transpose();
    }
    let act = pre.map(|v| v.max(0.0));
    let s = (&act * &p.w2).add_scalar(p.b2);

    let mut loss = 0.0;
    let mut r = DVector::zeros(s.len());
    for (i, (&si, &yi)) in s.iter().zip(y).enumerate() {
        let yi = yi as f64;
        loss += si.max(0.0) + (-si.abs()).exp().ln_1p() - yi * si;
        r[i] = (sigmoid(si) - yi) / m;
    }
    loss = loss / m + 0.5 * l2 * (p.w1.norm_squared() + p.w2.norm_squared());

    let gw2 = act.tr_mul(&r) + &p.w2 * l2;
    let gb2 = r.sum();
    let mut da = &r * p.w2.transpose();
    da.zip_apply(&pre, |g, h| {
        if h <= 0.0 {
            *g = 0.0
        }
    });
    let gw1 = da.tr_mul(z) + &p.w1 * l2;
    let gb1 = DVector::from_iterator(HIDDEN, da.column_iter().map(|c| c.sum()));
    (
        loss,
        MlpParams {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        },
    )
}

struct Adam {
    m: MlpParams,
    v: MlpParams,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &MlpParams) -> Self {
        Adam {
            m: p.zeros_like(),
            v: p.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, p: &mut MlpParams, g: &MlpParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let upd = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        };
        for (((p, m), v), g) in p
            .w1
            .iter_mut()
            .zip(self.m.w1.iter_mut())
            .zip(self.v.w1.iter_mut())
            .zip(g.w1.iter())
        {
            upd(p, m, v, *g);
        }
        for (((p, m), v), g) in p
            .b1
            .iter_mut()
            .zip(self.m.b1.iter_mut())
            .zip(self.v.b1.iter_mut())
            .zip(g.b1.iter())
        {
            upd(p, m, v, *g);
        }
        for (((p, m), v), g) in p
            .w2
            .iter_mut()
            .zip(self.m.w2.iter_mut())
            .zip(self.v.w2.iter_mut())
            .zip(g.w2.iter())
        {
            upd(p, m, v, *g);
        }
        upd(&mut p.b2, &mut self.m.b2, &mut self.v.b2, g.b2);
    }
}

/// Trains the MLP probe. With a validation set, keeps the parameters from the
/// best validation epoch and stops after `patience` epochs without
/// improvement; without one, runs the full budget.
pub fn train_mlp(
    train: &LabeledSamples,
    val: Option<&LabeledSamples>,
    cfg: &MlpConfig,
) -> Result<MlpProbe> {
    check_trainable(train)?;
    if let Some(v) = val {
        if v.dim() != train.dim() {
            return Err(Error::dims(train.dim(), v.dim(), "validation features"));
        }
    }
    let normalization = Standardizer::fit(&train.x)?;
    let z = normalization.apply(&train.x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MlpParams::init(z.ncols(), &mut rng);
    let mut adam = Adam::new(&params);
    let mut order: Vec<usize> = (0..z.nrows()).collect();
    let batch = cfg.batch_size.max(1);

    let mut probe = MlpProbe {
        params: params.clone(),
        normalization,
        meta: MlpMeta {
            seed: cfg.seed,
            epochs: 0,
            best_epoch: 0,
            l2: cfg.l2,
            early_stopped: false,
        },
    };
    let mut best_acc = match val {
        Some(v) if cfg.max_epochs > 0 => evaluate(&probe, v)?.accuracy,
        _ => f64::NEG_INFINITY,
    };
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.learning_rate / (1.0 + cfg.decay * epoch as f64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let zb = z.select_rows(chunk);
            let yb: Vec<u8> = chunk.iter().map(|&i| train.y[i]).collect();
            let (_, g) = mlp_objective(&zb, &yb, &params, cfg.l2);
            adam.step(&mut params, &g, lr);
        }
        if !params.is_finite() {
            return Err(Error::Stage {
                stage: "train".into(),
                message: "MLP training diverged to non-finite parameters".into(),
            });
        }
        probe.meta.epochs = epoch + 1;
        match val {
            Some(v) => {
                let candidate = MlpProbe {
                    params: params.clone(),
                    ..probe.clone()
                };
                let acc = evaluate(&candidate, v)?.accuracy;
                if acc > best_acc {
                    best_acc = acc;
                    probe.params = candidate.params;
                    probe.meta.best_epoch = epoch + 1;
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        probe.meta.early_stopped = true;
                        break;
                    }
                }
            }
            None => {
                probe.params = params.clone();
                probe.meta.best_epoch = epoch + 1;
            }
        }
    }
    Ok(probe)
}
