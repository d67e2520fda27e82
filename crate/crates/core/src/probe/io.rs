//! Probe files (JSON header plus NPY parameter arrays) and evaluation CSVs.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    EvalReport, Evaluation, Family, LinearProbe, MlpMeta, MlpParams, MlpProbe, Probe, ProbeId,
    Standardizer, TrainMeta,
};
use crate::data::{Scope, SliceKey, Split, Stream};
use crate::error::{Error, Result};
use crate::fsutil::{csv_err, ensure_parent, fmt_float, read_json, write_json};
use crate::npy;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Header {
    Linear {
        id: ProbeId,
        bias: f64,
        weights: String,
        normalization: Standardizer,
        meta: TrainMeta,
    },
    Mlp {
        id: ProbeId,
        w1: String,
        b1: String,
        w2: String,
        b2: f64,
        normalization: Standardizer,
        meta: MlpMeta,
    },
}

fn write_vec(dir: &Path, name: &str, v: &DVector<f64>) -> Result<String> {
    npy::write_file(&dir.join(name), &[v.len()], v.as_slice())?;
    Ok(name.to_string())
}

fn read_vec(dir: &Path, name: &str) -> Result<DVector<f64>> {
    let a = npy::read_file::<f64>(&dir.join(name))?;
    if a.shape.len() != 1 {
        return Err(Error::Npy(format!("{name}: expected a 1-D array, got shape {:?}", a.shape)));
    }
    Ok(DVector::from_vec(a.data))
}

/// Writes `<stem>.json` and its arrays into `dir`; returns the header path.
pub fn save_probe(dir: &Path, id: &ProbeId, probe: &Probe) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = id.stem();
    let header = match probe {
        Probe::Linear(p) => Header::Linear {
            id: id.clone(),
            bias: p.bias,
            weights: write_vec(dir, &format!("{stem}.weights.npy"), &p.weights)?,
            normalization: p.normalization.clone(),
            meta: p.meta.clone(),
        },
        Probe::Mlp(p) => {
            let w1 = format!("{stem}.w1.npy");
            // NPY is row-major; nalgebra stores columns
            let rows: Vec<f64> = p.params.w1.transpose().as_slice().to_vec();
            npy::write_file(&dir.join(&w1), &[p.params.w1.nrows(), p.params.w1.ncols()], &rows)?;
            Header::Mlp {
                id: id.clone(),
                w1,
                b1: write_vec(dir, &format!("{stem}.b1.npy"), &p.params.b1)?,
                w2: write_vec(dir, &format!("{stem}.w2.npy"), &p.params.w2)?,
                b2: p.params.b2,
                normalization: p.normalization.clone(),
                meta: p.meta.clone(),
            }
        }
    };
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &header)?;
    Ok(path)
}

pub fn load_probe(header_path: &Path) -> Result<(ProbeId, Probe)> {
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let header: Header = read_json(header_path, "probe header")?;
    Ok(match header {
        Header::Linear {
            id,
            bias,
            weights,
            normalization,
            meta,
        } => {
            let weights = read_vec(dir, &weights)?;
            if weights.len() != normalization.dim() {
                return Err(Error::dims(normalization.dim(), weights.len(), "probe weights"));
            }
            (
                id,
                Probe::Linear(LinearProbe {
                    weights,
                    bias,
                    normalization,
                    meta,
                }),
            )
        }
        Header::Mlp {
            id,
            w1,
            b1,
            w2,
            b2,
            normalization,
            meta,
        } => {
            let a = npy::read_file::<f64>(&dir.join(&w1))?;
            if a.shape.len() != 2 || a.shape[1] != normalization.dim() {
                return Err(Error::Npy(format!("{w1}: unexpected shape {:?}", a.shape)));
            }
            let params = MlpParams {
                w1: DMatrix::from_row_slice(a.shape[0], a.shape[1], &a.data),
                b1: read_vec(dir, &b1)?,
                w2: read_vec(dir, &w2)?,
                b2,
            };
            (
                id,
                Probe::Mlp(MlpProbe {
                    params,
                    normalization,
                    meta,
                }),
            )
        }
    })
}

#[derive(Serialize, Deserialize)]
struct EvalRow {
    task: String,
    layer: u32,
    stream: Stream,
    scope: Scope,
    family: Family,
    seed: u64,
    split: Split,
    accuracy: String,
    n: usize,
}

/// One row per (probe, split).
pub fn write_eval_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in reports {
        for (split, e) in &r.splits {
            w.serialize(EvalRow {
                task: r.probe.task.clone(),
                layer: r.probe.key.layer,
                stream: r.probe.key.stream,
                scope: r.probe.key.scope,
                family: r.probe.family,
                seed: r.probe.seed,
                split: *split,
                accuracy: fmt_float(e.accuracy),
                n: e.n,
            })
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an evaluation CSV back, regrouping rows by probe in file order.
pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalReport>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: Vec<EvalReport> = Vec::new();
    for row in rd.deserialize::<EvalRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let id = ProbeId {
            task: row.task,
            key: SliceKey::new(row.layer, row.stream, row.scope),
            family: row.family,
            seed: row.seed,
        };
        let accuracy: f64 = row.accuracy.parse().map_err(|_| Error::Parse {
            what: "csv",
            path: path.to_path_buf(),
            message: format!("bad accuracy `{}`", row.accuracy),
        })?;
        let e = Evaluation { accuracy, n: row.n };
        match out.iter_mut().find(|r| r.probe == id) {
            Some(r) => r.splits.push((row.split, e)),
            None => out.push(EvalReport {
                probe: id,
                splits: vec![(row.split, e)],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabeledSamples;
    use crate::probe::{train_probe, Classifier, TrainConfig};

    fn data() -> LabeledSamples {
        let x = DMatrix::from_fn(40, 3, |i, j| ((i * 13 + j * 7) % 11) as f64 + (i % 2) as f64 * 3.0);
        let y = (0..40).map(|i| (i % 2) as u8).collect();
        LabeledSamples::new(x, y).unwrap()
    }

    fn id(family: Family) -> ProbeId {
        ProbeId {
            task: "t".into(),
            key: SliceKey::new(2, Stream::Attention, Scope::Body),
            family,
            seed: 1,
        }
    }

    #[test]
    fn probes_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let d = data();
        let cfg = TrainConfig::default();
        for family in [Family::Logistic, Family::Mlp] {
            let p = train_probe(family, &d, None, &cfg, 1).unwrap();
            let path = save_probe(dir.path(), &id(family), &p).unwrap();
            let (rid, back) = load_probe(&path).unwrap();
            assert_eq!(rid, id(family));
            assert_eq!(back, p);
            assert_eq!(back.scores(&d.x).unwrap(), p.scores(&d.x).unwrap());
        }
    }

    #[test]
    fn eval_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        let reports = vec![EvalReport {
            probe: id(Family::Logistic),
            splits: vec![
                (Split::Val, Evaluation { accuracy: 0.75, n: 8 }),
                (Split::Test, Evaluation { accuracy: 0.5, n: 4 }),
            ],
        }];
        write_eval_csv(&path, &reports).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("task,layer,stream,scope,family,seed,split,accuracy,n\n"));
        assert!(text.contains("t,2,attention,body,logistic,1,val,0.750000,8"));
        assert_eq!(read_eval_csv(&path).unwrap(), reports);
    }
}
