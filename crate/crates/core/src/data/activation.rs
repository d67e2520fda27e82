use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Where in the block a hidden state was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Attention,
    Mlp,
}

/// Token-position class within a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Connector,
    Body,
    Eos,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Attention => "attention",
            Stream::Mlp => "mlp",
        }
    }
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Connector => "connector",
            Scope::Body => "body",
            Scope::Eos => "eos",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies one (layer, stream, scope) slice of a model's activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SliceKey {
    pub layer: u32,
    pub stream: Stream,
    pub scope: Scope,
}

impl SliceKey {
    pub fn new(layer: u32, stream: Stream, scope: Scope) -> Self {
        SliceKey { layer, stream, scope }
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}_{}_{}", self.layer, self.stream, self.scope)
    }
}

/// An N×d block of hidden states, stored row-major in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    pub model_id: String,
    pub key: SliceKey,
}

impl ActivationMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        data: Vec<f32>,
        model_id: impl Into<String>,
        key: SliceKey,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "activation matrix must be non-empty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::dims(rows * cols, data.len(), "activation buffer length"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
                context: format!("activations {key}"),
            });
        }
        Ok(ActivationMatrix {
            rows,
            cols,
            data,
            model_id: model_id.into(),
            key,
        })
    }

    /// Builds from an f64 matrix, rounding to f32.
    pub fn from_f64(m: &DMatrix<f64>, model_id: impl Into<String>, key: SliceKey) -> Result<Self> {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)] as f32);
            }
        }
        Self::new(m.nrows(), m.ncols(), data, model_id, key)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.data[i * self.cols + j] as f64)
    }

    /// Gathers the given rows into an f64 matrix.
    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.cols, |i, j| {
            self.data[rows[i] * self.cols + j] as f64
        })
    }
}

/// Feature matrix plus binary labels, the unit every probe trains on.
#[derive(Debug, Clone)]
pub struct LabeledSamples {
    pub x: DMatrix<f64>,
    pub y: Vec<u8>,
}

impl LabeledSamples {
    pub fn new(x: DMatrix<f64>, y: Vec<u8>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dims(x.nrows(), y.len(), "labels vs feature rows"));
        }
        if let Some(bad) = y.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!("label {bad} is not binary")));
        }
        Ok(LabeledSamples { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    /// Row-concatenates several sample sets of equal width.
    pub fn concat(parts: &[&LabeledSamples]) -> Result<Self> {
        let d = parts
            .first()
            .map(|p| p.dim())
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let n: usize = parts.iter().map(|p| p.len()).sum();
        let mut x = DMatrix::zeros(n, d);
        let mut y = Vec::with_capacity(n);
        let mut at = 0;
        for p in parts {
            if p.dim() != d {
                return Err(Error::dims(d, p.dim(), "concatenated sample width"));
            }
            x.rows_mut(at, p.len()).copy_from(&p.x);
            y.extend_from_slice(&p.y);
            at += p.len();
        }
        Ok(LabeledSamples { x, y })
    }

    pub fn subset(&self, rows: &[usize]) -> LabeledSamples {
        let x = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.x[(rows[i], j)]);
        let y = rows.iter().map(|&r| self.y[r]).collect();
        LabeledSamples { x, y }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SliceKey {
        SliceKey::new(3, Stream::Mlp, Scope::Body)
    }

    #[test]
    fn rejects_non_finite_with_position() {
        let mut data = vec![0.0f32; 6];
        data[4] = f32::NAN;
        match ActivationMatrix::new(2, 3, data, "m", key()) {
            Err(Error::NonFinite { row, col, .. }) => assert_eq!((row, col), (1, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_empty() {
        assert!(ActivationMatrix::new(0, 3, vec![], "m", key()).is_err());
    }

    #[test]
    fn select_rows_gathers_in_order() {
        let m = ActivationMatrix::new(3, 2, vec![1., 2., 3., 4., 5., 6.], "m", key()).unwrap();
        let s = m.select_rows(&[2, 0]);
        assert_eq!(s[(0, 0)], 5.0);
        assert_eq!(s[(1, 1)], 2.0);
    }

    #[test]
    fn slice_key_display() {
        assert_eq!(key().to_string(), "L3_mlp_body");
    }
}
