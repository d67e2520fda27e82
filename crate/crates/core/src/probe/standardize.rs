use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Features with a standard deviation below this are treated as constant.
const MIN_STD: f64 = 1e-12;

/// Per-feature z-scoring fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InsufficientData("cannot fit normalization on zero rows".into()));
        }
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s < MIN_STD { 1.0 } else { s });
        }
        Ok(Standardizer { mean, std })
    }

    /// Per-feature centering with one shared scale (the root mean feature
    /// variance). Rotation-equivariant, so an L2 penalty on the weights stays
    /// isotropic in raw coordinates.
    pub fn fit_isotropic(x: &DMatrix<f64>) -> Result<Self> {
        let per = Self::fit(x)?;
        let d = per.dim();
        let n = x.nrows() as f64;
        let total: f64 = x
            .column_iter()
            .zip(&per.mean)
            .map(|(col, m)| col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
            .sum();
        let s = (total / d as f64).sqrt();
        let s = if s < MIN_STD { 1.0 } else { s };
        Ok(Standardizer { mean: per.mean, std: vec![s; d] })
    }

    /// Leaves features unchanged.
    pub fn identity(d: usize) -> Self {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::dims(self.dim(), x.ncols(), "features vs normalization stats"));
        }
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(z)
    }

    /// Maps a weight vector acting on standardized features to the equivalent
    /// direction on raw features.
    pub fn raw_weights(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(w.len(), w.iter().zip(&self.std).map(|(wi, si)| wi / si))
    }
}
