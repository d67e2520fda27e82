//! Dataset manifests: a JSON index binding NPY activation matrices to
//! row-aligned JSONL record files, with a SHA-256 per file.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::{ActivationMatrix, LabeledSamples, Scope, SliceKey, Stream};
use super::record::{SampleRecord, Split};
use crate::error::{Error, Result};
use crate::hash::{sha256_file, stable_seed};
use crate::npy;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub name: String,
    pub n_layers: u32,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path to the NPY matrix, relative to the manifest's directory.
    pub matrix: String,
    /// Path to the JSONL record file, relative to the manifest's directory.
    pub records: String,
    pub layer: u32,
    pub stream: Stream,
    pub scope: Scope,
    pub matrix_sha256: String,
    pub records_sha256: String,
}

impl ManifestEntry {
    pub fn key(&self) -> SliceKey {
        SliceKey::new(self.layer, self.stream, self.scope)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub model: ModelDescriptor,
    pub entries: Vec<ManifestEntry>,
}

/// One (layer, stream, scope) matrix with its aligned records.
#[derive(Debug, Clone)]
pub struct Slice {
    pub matrix: ActivationMatrix,
    pub records: Vec<SampleRecord>,
}

impl Slice {
    pub fn new(matrix: ActivationMatrix, records: Vec<SampleRecord>) -> Result<Self> {
        if matrix.nrows() != records.len() {
            return Err(Error::RowCountMismatch {
                matrix: PathBuf::from(matrix.key.to_string()),
                records: PathBuf::from(matrix.key.to_string()),
                matrix_rows: matrix.nrows(),
                record_rows: records.len(),
            });
        }
        Ok(Slice { matrix, records })
    }

    pub fn key(&self) -> SliceKey {
        self.matrix.key
    }
}

/// How token positions of one response are turned into probe samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Every position row in the scope is a sample.
    #[default]
    Pool,
    /// One seeded position per response.
    OnePerResponse { seed: u64 },
}

/// Row filter for pulling samples out of a slice.
#[derive(Debug, Clone, Copy)]
pub struct RowQuery<'a> {
    pub task: &'a str,
    pub split: Option<Split>,
    pub null_task: bool,
    pub pooling: Pooling,
}

/// An in-memory dataset. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub model: ModelDescriptor,
    pub slices: Vec<Slice>,
}

impl Dataset {
    pub fn new(model: ModelDescriptor, slices: Vec<Slice>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &slices {
            if s.matrix.ncols() != model.hidden_dim {
                return Err(Error::dims(
                    model.hidden_dim,
                    s.matrix.ncols(),
                    format!("slice {} vs model hidden_dim", s.key()),
                ));
            }
            if s.key().layer >= model.n_layers {
                return Err(Error::InvalidArgument(format!(
                    "slice {} uses layer {} but the model has {} layers",
                    s.key(),
                    s.key().layer,
                    model.n_layers
                )));
            }
            if !seen.insert(s.key()) {
                return Err(Error::InvalidArgument(format!("duplicate slice {}", s.key())));
            }
        }
        Ok(Dataset { model, slices })
    }

    pub fn dim(&self) -> usize {
        self.model.hidden_dim
    }

    pub fn slice(&self, key: &SliceKey) -> Option<&Slice> {
        self.slices.iter().find(|s| &s.key() == key)
    }

    pub fn keys(&self) -> Vec<SliceKey> {
        let mut keys: Vec<_> = self.slices.iter().map(Slice::key).collect();
        keys.sort();
        keys
    }

    /// Constrained (non-null) task ids, sorted.
    pub fn tasks(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .slices
            .iter()
            .flat_map(|s| s.records.iter())
            .filter(|r| !r.is_null_task)
            .map(|r| r.task.as_str())
            .collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn has_null_task(&self) -> bool {
        self.slices
            .iter()
            .any(|s| s.records.iter().any(|r| r.is_null_task))
    }

    /// Row indices into `key`'s matrix matching the query.
    pub fn rows(&self, key: &SliceKey, q: RowQuery<'_>) -> Result<Vec<usize>> {
        let slice = self
            .slice(key)
            .ok_or_else(|| Error::InsufficientData(format!("dataset has no slice {key}")))?;
        let matches: Vec<usize> = slice
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.is_null_task == q.null_task
                    && (q.null_task || r.task == q.task)
                    && (q.split.is_none() || r.split == q.split)
            })
            .map(|(i, _)| i)
            .collect();
        Ok(match q.pooling {
            Pooling::Pool => matches,
            Pooling::OnePerResponse { seed } => one_per_response(&slice.records, &matches, seed),
        })
    }

    pub fn samples(&self, key: &SliceKey, q: RowQuery<'_>) -> Result<LabeledSamples> {
        let rows = self.rows(key, q)?;
        let slice = self.slice(key).expect("checked by rows()");
        let x = slice.matrix.select_rows(&rows);
        let y = rows.iter().map(|&r| slice.records[r].label).collect();
        LabeledSamples::new(x, y)
    }

    /// Samples for one task/split; errors if the selection is empty.
    pub fn task_split(
        &self,
        key: &SliceKey,
        task: &str,
        split: Split,
        pooling: Pooling,
    ) -> Result<LabeledSamples> {
        let s = self.samples(
            key,
            RowQuery {
                task,
                split: Some(split),
                null_task: false,
                pooling,
            },
        )?;
        if s.is_empty() {
            return Err(Error::InsufficientData(format!(
                "task `{task}` has no {split} rows in slice {key}"
            )));
        }
        Ok(s)
    }
}

fn one_per_response(records: &[SampleRecord], rows: &[usize], seed: u64) -> Vec<usize> {
    let mut groups: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for &r in rows {
        groups.entry(records[r].response_key()).or_default().push(r);
    }
    let mut picked: Vec<usize> = groups
        .into_iter()
        .map(|(k, members)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_seed(k));
            *members.choose(&mut rng).expect("non-empty group")
        })
        .collect();
    picked.sort_unstable();
    picked
}

fn parse_err(what: &'static str, path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        what,
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<SampleRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord = serde_json::from_str(&line)
            .map_err(|e| parse_err("record file", path, format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn verify_hash(path: &Path, expected: &str) -> Result<()> {
    let actual = sha256_file(path)?;
    if !actual.eq_ignore_ascii_case(expected) {
        return Err(Error::HashMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            actual,
        });
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| parse_err("manifest", path, e.to_string()))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(parse_err(
            "manifest",
            path,
            format!(
                "unsupported schema_version `{}` (expected `{SCHEMA_VERSION}`)",
                manifest.schema_version
            ),
        ));
    }
    Ok(manifest)
}

/// Loads and fully verifies a dataset from its manifest.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut slices = Vec::with_capacity(manifest.entries.len());

    for entry in &manifest.entries {
        let matrix_path = root.join(&entry.matrix);
        let records_path = root.join(&entry.records);
        for p in [&matrix_path, &records_path] {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        verify_hash(&matrix_path, &entry.matrix_sha256)?;
        verify_hash(&records_path, &entry.records_sha256)?;

        let arr = npy::read_file::<f32>(&matrix_path)?;
        if arr.shape.len() != 2 {
            return Err(Error::Npy(format!(
                "{}: expected a 2-D array, got shape {:?}",
                matrix_path.display(),
                arr.shape
            )));
        }
        let (n, d) = (arr.shape[0], arr.shape[1]);
        if d != manifest.model.hidden_dim {
            return Err(Error::dims(
                manifest.model.hidden_dim,
                d,
                format!("{} vs manifest hidden_dim", matrix_path.display()),
            ));
        }
        let records = read_records(&records_path)?;
        if records.len() != n {
            return Err(Error::RowCountMismatch {
                matrix: matrix_path,
                records: records_path,
                matrix_rows: n,
                record_rows: records.len(),
            });
        }
        for r in &records {
            r.check_position(entry.scope)
                .map_err(|m| parse_err("record file", &records_path, m))?;
        }
        let matrix = ActivationMatrix::new(n, d, arr.data, &manifest.model.name, entry.key())
            .map_err(|e| match e {
                Error::NonFinite { row, col, .. } => Error::NonFinite {
                    row,
                    col,
                    context: matrix_path.display().to_string(),
                },
                other => other,
            })?;
        slices.push(Slice { matrix, records });
    }
    Dataset::new(manifest.model, slices)
}

/// Writes every slice as `<stem>.npy` + `<stem>.jsonl` under `dir` and a
/// manifest named `manifest_name`. Returns the manifest path.
pub fn write_dataset(dir: &Path, manifest_name: &str, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.slices.len());
    for s in &dataset.slices {
        let stem = s.key().to_string();
        let matrix_rel = format!("{stem}.npy");
        let records_rel = format!("{stem}.jsonl");
        let matrix_path = dir.join(&matrix_rel);
        let records_path = dir.join(&records_rel);
        npy::write_file(
            &matrix_path,
            &[s.matrix.nrows(), s.matrix.ncols()],
            s.matrix.as_slice(),
        )?;
        write_records(&records_path, &s.records)?;
        entries.push(ManifestEntry {
            matrix: matrix_rel,
            records: records_rel,
            layer: s.key().layer,
            stream: s.key().stream,
            scope: s.key().scope,
            matrix_sha256: sha256_file(&matrix_path)?,
            records_sha256: sha256_file(&records_path)?,
        });
    }
    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        model: dataset.model.clone(),
        entries,
    };
    let path = dir.join(manifest_name);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
