//! Probe accuracy along the generation: connector slots, body progress and
//! the end-of-turn token, with percentile bootstrap bands.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabeledSamples, Pooling, RowQuery, SampleRecord, Scope, SliceKey, Split};
use crate::error::{Error, Result};
use crate::fsutil::{csv_err, ensure_parent, fmt_float, write_json};
use crate::hash::stable_seed;
use crate::probe::{Classifier, Family, Probe, TrainConfig};

/// Where a row sits in its response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "at")]
pub enum Progression {
    /// Negative offset before the body, `-k..=-1`.
    ConnectorSlot(i64),
    /// `100 · token_index / response_length`, in `[0, 100)`.
    BodyPercent(f64),
    Eos,
}

impl Progression {
    pub fn scope(self) -> Scope {
        match self {
            Progression::ConnectorSlot(_) => Scope::Connector,
            Progression::BodyPercent(_) => Scope::Body,
            Progression::Eos => Scope::Eos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeAssignment {
    pub sample_id: String,
    pub scope: Scope,
    pub position: Progression,
    /// Body bin index for the configured bin count; `None` outside the body.
    pub body_bin: Option<usize>,
}

pub fn assign_progression(record: &SampleRecord, body_bins: usize) -> Result<ScopeAssignment> {
    let len = record.response_length as i64;
    let idx = record.token_index;
    let bad = |m: String| Err(Error::InvalidArgument(format!("{}: {m}", record.sample_id)));
    if len == 0 {
        return bad("response_length must be >= 1".into());
    }
    if idx > len {
        return bad(format!("token_index {idx} is past response_length {len}"));
    }
    if body_bins == 0 {
        return bad("body_bins must be >= 1".into());
    }
    let (position, body_bin) = match idx {
        i if i < 0 => (Progression::ConnectorSlot(i), None),
        i if i == len => (Progression::Eos, None),
        i => (
            Progression::BodyPercent(100.0 * i as f64 / len as f64),
            Some((i as usize * body_bins) / len as usize),
        ),
    };
    Ok(ScopeAssignment {
        sample_id: record.sample_id.clone(),
        scope: position.scope(),
        position,
        body_bin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinKind {
    ConnectorSlot,
    BodyPercent,
    Eos,
}

impl BinKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BinKind::ConnectorSlot => "connector_slot",
            BinKind::BodyPercent => "body_percent",
            BinKind::Eos => "eos",
        }
    }
}

/// Bin identity, ordered along the generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum BinId {
    Connector(i64),
    Body(usize),
    Eos,
}

impl fmt::Display for BinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinId::Connector(s) => write!(f, "c{s}"),
            BinId::Body(b) => write!(f, "b{b}"),
            BinId::Eos => f.write_str("eos"),
        }
    }
}

fn bin_of(a: &ScopeAssignment) -> BinId {
    match (a.position, a.body_bin) {
        (Progression::ConnectorSlot(s), _) => BinId::Connector(s),
        (Progression::BodyPercent(_), Some(b)) => BinId::Body(b),
        (Progression::BodyPercent(_), None) => unreachable!("body rows always carry a bin"),
        (Progression::Eos, _) => BinId::Eos,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinConfig {
    /// Number of equal-width body bins (20 gives 5% bins).
    pub body_bins: usize,
    pub min_count: usize,
    pub resamples: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig {
            body_bins: 20,
            min_count: 20,
            resamples: 1000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionBin {
    pub kind: BinKind,
    /// Connector slot (`-k`), body bin start in percent, or 100 for EOS.
    pub position: f64,
    /// Body bin end in percent; equals `position` otherwise.
    pub end: f64,
    pub n: usize,
    pub correct: usize,
    /// NaN when the bin is empty.
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub low_confidence: bool,
}

/// Rows of one slice with their generation positions.
#[derive(Debug, Clone)]
pub struct PositionedSamples {
    pub samples: LabeledSamples,
    pub positions: Vec<ScopeAssignment>,
}

impl PositionedSamples {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// All rows of `task` and `split` at `key`, one per token position.
pub fn positioned_samples(ds: &Dataset, key: &SliceKey, task: &str, split: Split, body_bins: usize) -> Result<PositionedSamples> {
    let q = RowQuery {
        task,
        split: Some(split),
        null_task: false,
        pooling: Pooling::Pool,
    };
    let rows = ds.rows(key, q)?;
    let slice = ds
        .slice(key)
        .ok_or_else(|| Error::InsufficientData(format!("no slice {key}")))?;
    let positions = rows
        .iter()
        .map(|&r| assign_progression(&slice.records[r], body_bins))
        .collect::<Result<_>>()?;
    let samples = LabeledSamples::new(slice.matrix.select_rows(&rows), rows.iter().map(|&r| slice.records[r].label).collect())?;
    Ok(PositionedSamples { samples, positions })
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap interval for the mean of 0/1 outcomes.
pub fn bootstrap_ci(hits: &[bool], resamples: usize, confidence: f64, seed: u64) -> (f64, f64) {
    let n = hits.len();
    if n == 0 || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).filter(|_| hits[rng.random_range(0..n)]).count() as f64 / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - confidence) / 2.0;
    (quantile(&means, tail), quantile(&means, 1.0 - tail))
}

fn bin_stats(id: BinId, hits: &[bool], cfg: &BinConfig) -> ProgressionBin {
    let (kind, position, end) = match id {
        BinId::Connector(s) => (BinKind::ConnectorSlot, s as f64, s as f64),
        BinId::Body(b) => {
            let w = 100.0 / cfg.body_bins as f64;
            (BinKind::BodyPercent, b as f64 * w, (b + 1) as f64 * w)
        }
        BinId::Eos => (BinKind::Eos, 100.0, 100.0),
    };
    let n = hits.len();
    let correct = hits.iter().filter(|h| **h).count();
    let accuracy = if n == 0 { f64::NAN } else { correct as f64 / n as f64 };
    let (lo, hi) = bootstrap_ci(hits, cfg.resamples, cfg.confidence, cfg.seed ^ stable_seed(&id.to_string()));
    ProgressionBin {
        kind,
        position,
        end,
        n,
        correct,
        accuracy,
        // percentile bands can miss the point estimate on tiny bins
        ci_low: lo.min(accuracy),
        ci_high: hi.max(accuracy),
        low_confidence: n < cfg.min_count,
    }
}

fn check_cfg(cfg: &BinConfig) -> Result<()> {
    if cfg.body_bins == 0 || !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::InvalidArgument("body_bins must be >= 1 and confidence in (0, 1)".into()));
    }
    Ok(())
}

/// Groups rows into bins: every connector slot and body bin that occurs, all
/// body bins once any body row exists, and one EOS bin if EOS rows exist.
fn group(positions: &[ScopeAssignment], body_bins: usize) -> BTreeMap<BinId, Vec<usize>> {
    let mut bins: BTreeMap<BinId, Vec<usize>> = BTreeMap::new();
    for (i, a) in positions.iter().enumerate() {
        bins.entry(bin_of(a)).or_default().push(i);
    }
    if bins.keys().any(|b| matches!(b, BinId::Body(_))) {
        for b in 0..body_bins {
            bins.entry(BinId::Body(b)).or_default();
        }
    }
    bins
}

/// One probe evaluated at every position of `data`.
pub fn progression_curve(probe: &Probe, data: &PositionedSamples, cfg: &BinConfig) -> Result<Vec<ProgressionBin>> {
    check_cfg(cfg)?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no rows to build a progression curve from".into()));
    }
    if probe.dim() != data.samples.dim() {
        return Err(Error::dims(probe.dim(), data.samples.dim(), "probe vs activations"));
    }
    let pred = probe.predict(&data.samples.x)?;
    let hit: Vec<bool> = pred.iter().zip(&data.samples.y).map(|(p, y)| p == y).collect();
    let bins: Vec<(BinId, Vec<usize>)> = group(&data.positions, cfg.body_bins).into_iter().collect();
    Ok(bins
        .par_iter()
        .map(|(id, rows)| {
            let h: Vec<bool> = rows.iter().map(|&r| hit[r]).collect();
            bin_stats(*id, &h, cfg)
        })
        .collect())
}

fn subset(d: &PositionedSamples, rows: &[usize]) -> LabeledSamples {
    d.samples.subset(rows)
}

/// One probe per bin, trained on that bin's `train` rows and scored on its
/// `eval` rows. Bins where training is impossible (too few rows or a single
/// class) come back empty and low-confidence.
pub fn per_bin_curve(
    family: Family,
    train: &PositionedSamples,
    eval: &PositionedSamples,
    train_cfg: &TrainConfig,
    seed: u64,
    cfg: &BinConfig,
) -> Result<Vec<ProgressionBin>> {
    check_cfg(cfg)?;
    if eval.is_empty() {
        return Err(Error::InsufficientData("no rows to build a progression curve from".into()));
    }
    let train_bins = group(&train.positions, cfg.body_bins);
    let bins: Vec<(BinId, Vec<usize>)> = group(&eval.positions, cfg.body_bins).into_iter().collect();
    bins.par_iter()
        .map(|(id, rows)| {
            let tr_rows = train_bins.get(id).cloned().unwrap_or_default();
            let tr = subset(train, &tr_rows);
            let trainable = tr.len() >= 2 && tr.positives() > 0 && tr.positives() < tr.len();
            if !trainable || rows.is_empty() {
                let mut b = bin_stats(*id, &[], cfg);
                b.low_confidence = true;
                return Ok(b);
            }
            let probe = crate::probe::train_probe(family, &tr, None, train_cfg, seed)?;
            let ev = subset(eval, rows);
            let pred = probe.predict(&ev.x)?;
            let h: Vec<bool> = pred.iter().zip(&ev.y).map(|(p, y)| p == y).collect();
            Ok(bin_stats(*id, &h, cfg))
        })
        .collect()
}

/// A labeled curve, one per (task, family).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionCurve {
    pub model: String,
    pub task: String,
    pub family: Family,
    pub bins: Vec<ProgressionBin>,
}

/// Row-weighted mean of bin accuracies.
pub fn weighted_accuracy(bins: &[ProgressionBin]) -> f64 {
    let n: usize = bins.iter().map(|b| b.n).sum();
    let c: usize = bins.iter().map(|b| b.correct).sum();
    c as f64 / n as f64
}

/// `model,task,family,bin_kind,bin_position,n,accuracy,ci_low,ci_high`.
pub fn write_curves_csv(path: &Path, curves: &[ProgressionCurve]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["model", "task", "family", "bin_kind", "bin_position", "n", "accuracy", "ci_low", "ci_high"])
        .map_err(|e| csv_err(path, e))?;
    for c in curves {
        for b in &c.bins {
            w.write_record([
                c.model.as_str(),
                &c.task,
                c.family.as_str(),
                b.kind.as_str(),
                &fmt_float(b.position),
                &b.n.to_string(),
                &fmt_float(b.accuracy),
                &fmt_float(b.ci_low),
                &fmt_float(b.ci_high),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_curves_json(path: &Path, curves: &[ProgressionCurve]) -> Result<()> {
    write_json(path, &curves)
}

/// Concatenates per-scope sample sets (they share `d`).
pub fn concat(parts: &[PositionedSamples]) -> Result<PositionedSamples> {
    let refs: Vec<&LabeledSamples> = parts.iter().map(|p| &p.samples).collect();
    let samples = if refs.is_empty() {
        LabeledSamples::new(DMatrix::zeros(0, 0), vec![])?
    } else {
        LabeledSamples::concat(&refs)?
    };
    Ok(PositionedSamples {
        samples,
        positions: parts.iter().flat_map(|p| p.positions.iter().cloned()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(idx: i64, len: u32) -> SampleRecord {
        SampleRecord {
            sample_id: format!("r#{idx}"),
            task: "t".into(),
            requested_option: "o".into(),
            label: 1,
            split: None,
            token_index: idx,
            response_length: len,
            is_null_task: false,
        }
    }

    #[test]
    fn assignment_examples() {
        let body = assign_progression(&rec(5, 10), 20).unwrap();
        assert_eq!(body.position, Progression::BodyPercent(50.0));
        assert_eq!(body.body_bin, Some(10));
        assert_eq!(assign_progression(&rec(-2, 10), 20).unwrap().position, Progression::ConnectorSlot(-2));
        let eos = assign_progression(&rec(10, 10), 20).unwrap();
        assert_eq!((eos.position, eos.scope), (Progression::Eos, Scope::Eos));
        assert!(assign_progression(&rec(11, 10), 20).is_err());
        assert_eq!(assign_progression(&rec(9, 10), 20).unwrap().body_bin, Some(18));
        assert_eq!(assign_progression(&rec(0, 3), 20).unwrap().body_bin, Some(0));
    }

    #[test]
    fn bootstrap_degenerate_and_covering() {
        assert_eq!(bootstrap_ci(&[true; 30], 200, 0.95, 1), (1.0, 1.0));
        let hits: Vec<bool> = (0..200).map(|i| i % 4 != 0).collect();
        let (lo, hi) = bootstrap_ci(&hits, 1000, 0.95, 2);
        assert!(lo < 0.75 && 0.75 < hi && hi - lo < 0.15);
        assert!(bootstrap_ci(&[], 10, 0.95, 0).0.is_nan());
    }
}
