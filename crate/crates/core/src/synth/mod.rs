//! Synthetic activation datasets with planted linear (or XOR) signal.
//!
//! Each response of a task gets a label `y ∈ {−1, +1}` and one row per slice
//! position: `x = y·Σ s·u + ε`, `ε ~ N(0, σ²I)`, where the signal is present
//! only in the scopes and layers the task's mask allows. The output is a
//! regular [`Dataset`] plus a [`GroundTruth`] with the closed-form Bayes
//! accuracy and the planted subspace of every task.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::{
    assign_splits, write_dataset, ActivationMatrix, Dataset, ModelDescriptor, SampleRecord, Scope,
    Slice, SliceKey, Stream, POSITION_SEPARATOR,
};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::hash::stable_seed;
use crate::inlp::Projector;

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const NULL_TASK: &str = "null_task";

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionSpec {
    /// A named random unit direction; equal names give the same vector, and
    /// all named directions are mutually orthogonal.
    Shared(String),
    /// The `k`-th coordinate axis.
    Axis(usize),
    /// An explicit vector, normalized on use.
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub direction: DirectionSpec,
    pub strength: f64,
}

/// Label = whether the signs along `a` and `b` agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorSpec {
    pub a: DirectionSpec,
    pub b: DirectionSpec,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    #[serde(default)]
    pub signals: Vec<SignalSpec>,
    #[serde(default)]
    pub xor: Option<XorSpec>,
    /// Scopes carrying the signal; all when absent.
    #[serde(default)]
    pub signal_scopes: Option<Vec<Scope>>,
    /// Layers carrying the signal; all when absent.
    #[serde(default)]
    pub signal_layers: Option<Vec<u32>>,
    /// Extra label-independent Gaussian noise along a direction, `strength`
    /// being its standard deviation. Tilts the optimal linear direction away
    /// from the mean shift.
    #[serde(default)]
    pub extra_noise: Vec<SignalSpec>,
}

/// Variable-length responses with connector, body and end-of-turn rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSpec {
    pub connector_slots: usize,
    pub min_len: u32,
    pub max_len: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullTaskSpec {
    pub responses: usize,
    /// Multiplies `σ` for null rows.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

fn one() -> f64 {
    1.0
}

fn default_layers() -> Vec<u32> {
    vec![0]
}

fn default_streams() -> Vec<Stream> {
    vec![Stream::Mlp]
}

fn default_scopes() -> Vec<Scope> {
    vec![Scope::Eos]
}

fn default_model() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub sigma: f64,
    pub samples_per_class: usize,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_layers")]
    pub layers: Vec<u32>,
    #[serde(default = "default_streams")]
    pub streams: Vec<Stream>,
    /// Ignored when `temporal` is set, which always emits all three scopes.
    #[serde(default = "default_scopes")]
    pub scopes: Vec<Scope>,
    #[serde(default)]
    pub temporal: Option<TemporalSpec>,
    #[serde(default)]
    pub null_task: Option<NullTaskSpec>,
}

impl SyntheticSpec {
    /// One task, one slice (`L0_mlp_eos`).
    pub fn simple(d: usize, sigma: f64, samples_per_class: usize, seed: u64, task: TaskSpec) -> Self {
        SyntheticSpec {
            d,
            sigma,
            samples_per_class,
            seed,
            tasks: vec![task],
            model_name: default_model(),
            layers: default_layers(),
            streams: default_streams(),
            scopes: default_scopes(),
            temporal: None,
            null_task: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, "synthetic spec")
    }

    pub fn slice_keys(&self) -> Vec<SliceKey> {
        let scopes: Vec<Scope> = if self.temporal.is_some() {
            vec![Scope::Connector, Scope::Body, Scope::Eos]
        } else {
            self.scopes.clone()
        };
        let mut keys = Vec::new();
        for &layer in &self.layers {
            for &stream in &self.streams {
                for &scope in &scopes {
                    keys.push(SliceKey::new(layer, stream, scope));
                }
            }
        }
        keys
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.tasks.is_empty() {
            return bad("at least one task is required".into());
        }
        if self.samples_per_class * 2 < crate::data::MIN_GROUPS_PER_TASK {
            return bad("samples_per_class is too small to fill three splits".into());
        }
        if self.layers.is_empty() || self.streams.is_empty() || self.slice_keys().is_empty() {
            return bad("at least one layer, stream and scope are required".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for t in &self.tasks {
            if t.name.is_empty() || t.name == NULL_TASK || t.name.contains(POSITION_SEPARATOR) {
                return bad(format!("invalid task name `{}`", t.name));
            }
            if !names.insert(&t.name) {
                return bad(format!("duplicate task `{}`", t.name));
            }
            let strengths = t
                .signals
                .iter()
                .chain(&t.extra_noise)
                .map(|s| s.strength)
                .chain(t.xor.as_ref().map(|x| x.strength));
            for s in strengths {
                if !(s >= 0.0 && s.is_finite()) {
                    return bad(format!("task `{}`: strengths must be >= 0", t.name));
                }
            }
        }
        if let Some(tp) = &self.temporal {
            if tp.min_len == 0 || tp.min_len > tp.max_len {
                return bad("temporal lengths need 1 <= min_len <= max_len".into());
            }
        }
        if let Some(n) = &self.null_task {
            if n.responses < crate::data::MIN_GROUPS_PER_TASK || n.noise_scale <= 0.0 {
                return bad("null task needs >= 10 responses and a positive noise_scale".into());
            }
        }
        Ok(())
    }
}

/// What the generator planted for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTruth {
    pub task: String,
    /// Unit signal directions (including XOR axes), one per entry.
    pub directions: Vec<Vec<f64>>,
    pub strengths: Vec<f64>,
    /// `Σ s·u`, the positive-class mean where the signal is present.
    pub mean_shift: Vec<f64>,
    /// Closed-form optimal accuracy on signal-bearing rows; absent when no
    /// closed form applies (XOR mixed with linear signal, or XOR axes that are
    /// not orthogonal).
    pub bayes_accuracy: Option<f64>,
    pub xor: bool,
    pub signal_scopes: Vec<Scope>,
    pub signal_layers: Vec<u32>,
    #[serde(default)]
    pub noise_directions: Vec<Vec<f64>>,
    #[serde(default)]
    pub noise_strengths: Vec<f64>,
}

impl TaskTruth {
    /// Orthonormal basis (`k × d`) of the planted subspace.
    pub fn subspace(&self, d: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(self.directions.len(), d, |i, j| self.directions[i][j]);
        orthonormal_rows(&raw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub d: usize,
    pub sigma: f64,
    pub seed: u64,
    pub named_directions: BTreeMap<String, Vec<f64>>,
    pub tasks: Vec<TaskTruth>,
}

impl GroundTruth {
    pub fn task(&self, name: &str) -> Option<&TaskTruth> {
        self.tasks.iter().find(|t| t.task == name)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path, "ground truth")
    }
}

fn orthonormal_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for row in m.row_iter() {
        let mut r = row.transpose();
        for _ in 0..2 {
            for u in &basis {
                let c = r.dot(u);
                r.axpy(-c, u, 1.0);
            }
        }
        let n = r.norm();
        if n > 1e-10 {
            basis.push(r / n);
        }
    }
    crate::inlp::stack_rows(&basis, m.ncols())
}

/// Principal angles (radians, ascending) between the row spans of two
/// orthonormal-row matrices; `min(k, r)` of them.
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let k = a.nrows().min(b.nrows());
    if k == 0 {
        return Vec::new();
    }
    let m = a * b.transpose();
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv.truncate(k);
    sv.into_iter().map(|c| c.clamp(0.0, 1.0).acos()).collect()
}

/// Largest principal angle between a recovered rowspace and the planted
/// subspace; `π/2` when either is empty.
pub fn ground_truth_subspace_error(p_row: &Projector, truth: &TaskTruth) -> f64 {
    let planted = truth.subspace(p_row.dim());
    principal_angles(&p_row.directions, &planted)
        .into_iter()
        .fold(None, |acc: Option<f64>, a| Some(acc.map_or(a, |m| m.max(a))))
        .unwrap_or(std::f64::consts::FRAC_PI_2)
}

struct Resolver {
    d: usize,
    named: BTreeMap<String, DVector<f64>>,
}

impl Resolver {
    fn new(spec: &SyntheticSpec) -> Result<Self> {
        let mut tags: Vec<String> = Vec::new();
        let mut visit = |ds: &DirectionSpec| {
            if let DirectionSpec::Shared(t) = ds {
                if !tags.contains(t) {
                    tags.push(t.clone());
                }
            }
        };
        for t in &spec.tasks {
            t.signals.iter().for_each(|s| visit(&s.direction));
            if let Some(x) = &t.xor {
                visit(&x.a);
                visit(&x.b);
            }
            t.extra_noise.iter().for_each(|s| visit(&s.direction));
        }
        if tags.len() > spec.d {
            return Err(Error::InvalidArgument(format!(
                "{} named directions cannot be orthogonal in d = {}",
                tags.len(),
                spec.d
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stable_seed("directions"));
        let g = DMatrix::from_fn(tags.len(), spec.d, |_, _| StandardNormal.sample(&mut rng));
        let q = orthonormal_rows(&g);
        if q.nrows() != tags.len() {
            return Err(Error::InvalidArgument("degenerate random directions; change the seed".into()));
        }
        let named = tags
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, q.row(i).transpose()))
            .collect();
        Ok(Resolver { d: spec.d, named })
    }

    fn resolve(&self, ds: &DirectionSpec) -> Result<DVector<f64>> {
        match ds {
            DirectionSpec::Shared(t) => Ok(self.named[t].clone()),
            DirectionSpec::Axis(k) => {
                if *k >= self.d {
                    return Err(Error::InvalidArgument(format!("axis {k} out of range for d = {}", self.d)));
                }
                let mut v = DVector::zeros(self.d);
                v[*k] = 1.0;
                Ok(v)
            }
            DirectionSpec::Vector(v) => {
                if v.len() != self.d {
                    return Err(Error::dims(self.d, v.len(), "explicit signal direction"));
                }
                let v = DVector::from_column_slice(v);
                let n = v.norm();
                if !(n > 0.0 && n.is_finite()) {
                    return Err(Error::InvalidArgument("signal direction must be non-zero".into()));
                }
                Ok(v / n)
            }
        }
    }
}

struct PlantedTask {
    mean: DVector<f64>,
    xor: Option<(DVector<f64>, DVector<f64>, f64)>,
    noise: Vec<(DVector<f64>, f64)>,
    scopes: Vec<Scope>,
    layers: Vec<u32>,
}

impl PlantedTask {
    fn active(&self, key: &SliceKey) -> bool {
        self.scopes.contains(&key.scope) && self.layers.contains(&key.layer)
    }
}

fn plant(spec: &SyntheticSpec, res: &Resolver, t: &TaskSpec) -> Result<(PlantedTask, TaskTruth)> {
    let d = spec.d;
    let mut mean = DVector::zeros(d);
    let mut directions = Vec::new();
    let mut strengths = Vec::new();
    for s in &t.signals {
        let u = res.resolve(&s.direction)?;
        mean.axpy(s.strength, &u, 1.0);
        directions.push(u.as_slice().to_vec());
        strengths.push(s.strength);
    }
    let xor = match &t.xor {
        Some(x) => {
            let a = res.resolve(&x.a)?;
            let b = res.resolve(&x.b)?;
            directions.push(a.as_slice().to_vec());
            directions.push(b.as_slice().to_vec());
            strengths.push(x.strength);
            strengths.push(x.strength);
            Some((a, b, x.strength))
        }
        None => None,
    };
    let noise = t
        .extra_noise
        .iter()
        .map(|s| Ok((res.resolve(&s.direction)?, s.strength)))
        .collect::<Result<Vec<_>>>()?;
    let bayes_accuracy = match &xor {
        // classes at ±μ with shared covariance Σ: Φ(√(μᵀΣ⁻¹μ))
        None => {
            let mut cov = DMatrix::identity(d, d) * spec.sigma.powi(2);
            for (v, s) in &noise {
                cov += v * v.transpose() * s.powi(2);
            }
            let solved = cov.cholesky().expect("noise covariance is positive definite").solve(&mean);
            Some(phi(mean.dot(&solved).sqrt()))
        }
        Some((a, b, s)) if t.signals.is_empty() && a.dot(b).abs() < 1e-12 => {
            let p = phi(s / spec.sigma);
            Some(p * p + (1.0 - p) * (1.0 - p))
        }
        Some(_) => None,
    };
    let scopes = t.signal_scopes.clone().unwrap_or_else(|| vec![Scope::Connector, Scope::Body, Scope::Eos]);
    let layers = t.signal_layers.clone().unwrap_or_else(|| spec.layers.clone());
    let truth = TaskTruth {
        task: t.name.clone(),
        directions,
        strengths,
        mean_shift: mean.as_slice().to_vec(),
        bayes_accuracy,
        xor: xor.is_some(),
        signal_scopes: scopes.clone(),
        signal_layers: layers.clone(),
        noise_directions: noise.iter().map(|(v, _)| v.as_slice().to_vec()).collect(),
        noise_strengths: noise.iter().map(|(_, s)| *s).collect(),
    };
    Ok((
        PlantedTask {
            mean,
            xor,
            noise,
            scopes,
            layers,
        },
        truth,
    ))
}

/// One response: its id, label, length, and which XOR cluster it sits in.
struct Response {
    id: String,
    label: u8,
    length: u32,
    cluster: (f64, f64),
}

fn responses(spec: &SyntheticSpec, task: &str, n: usize, balanced: bool) -> Vec<Response> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ stable_seed(&format!("lengths/{task}")));
    (0..n)
        .map(|i| {
            let label = if balanced { (i % 2) as u8 } else { 0 };
            // y=1 clusters (+,+),(−,−); y=0 clusters (+,−),(−,+)
            let flip = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let cluster = if label == 1 { (flip, flip) } else { (flip, -flip) };
            let length = match &spec.temporal {
                Some(tp) => rng.random_range(tp.min_len..=tp.max_len),
                None => 10,
            };
            Response {
                id: format!("{task}-{i:06}"),
                label,
                length,
                cluster,
            }
        })
        .collect()
}

/// Token positions emitted for one response in one scope: (tag, token_index).
fn positions(spec: &SyntheticSpec, scope: Scope, length: u32) -> Vec<(String, i64)> {
    let len = length as i64;
    match (&spec.temporal, scope) {
        (Some(tp), Scope::Connector) => (1..=tp.connector_slots as i64)
            .rev()
            .map(|k| (format!("c{k}"), -k))
            .collect(),
        (Some(_), Scope::Body) => (0..len).map(|i| (format!("b{i}"), i)).collect(),
        (None, Scope::Connector) => vec![("c1".into(), -1)],
        (None, Scope::Body) => vec![(format!("b{}", len / 2), len / 2)],
        (_, Scope::Eos) => vec![("eos".into(), len)],
    }
}

/// Builds the dataset and its ground truth. Deterministic in `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.check()?;
    let res = Resolver::new(spec)?;
    let mut planted = Vec::new();
    let mut truths = Vec::new();
    for t in &spec.tasks {
        let (p, tr) = plant(spec, &res, t)?;
        planted.push(p);
        truths.push(tr);
    }
    let normal = Normal::new(0.0, spec.sigma).expect("sigma checked positive");

    let mut groups: Vec<(Option<usize>, Vec<Response>)> = spec
        .tasks
        .iter()
        .enumerate()
        .map(|(ti, t)| (Some(ti), responses(spec, &t.name, 2 * spec.samples_per_class, true)))
        .collect();
    if let Some(n) = &spec.null_task {
        groups.push((None, responses(spec, NULL_TASK, n.responses, false)));
    }

    let mut slices = Vec::new();
    for key in spec.slice_keys() {
        let mut rows: Vec<f64> = Vec::new();
        let mut records = Vec::new();
        for (ti, group) in &groups {
            let name = ti.map_or(NULL_TASK, |i| spec.tasks[i].name.as_str());
            let mut rng = ChaCha8Rng::seed_from_u64(
                spec.seed ^ stable_seed(&format!("{name}/{key}")),
            );
            let scale = match ti {
                Some(_) => 1.0,
                None => spec.null_task.as_ref().map_or(1.0, |n| n.noise_scale),
            };
            for r in group {
                for (tag, token_index) in positions(spec, key.scope, r.length) {
                    let mut x = DVector::from_fn(spec.d, |_, _| scale * normal.sample(&mut rng));
                    if let Some(p) = ti.map(|i| &planted[i]) {
                        if p.active(&key) {
                            let y = if r.label == 1 { 1.0 } else { -1.0 };
                            x.axpy(y, &p.mean, 1.0);
                            if let Some((a, b, s)) = &p.xor {
                                x.axpy(s * r.cluster.0, a, 1.0);
                                x.axpy(s * r.cluster.1, b, 1.0);
                            }
                            for (v, s) in &p.noise {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                x.axpy(s * z, v, 1.0);
                            }
                        }
                    }
                    rows.extend(x.iter());
                    records.push(SampleRecord {
                        sample_id: format!("{}{POSITION_SEPARATOR}{tag}", r.id),
                        task: name.to_string(),
                        requested_option: "synthetic".into(),
                        label: r.label,
                        split: None,
                        token_index,
                        response_length: r.length,
                        is_null_task: ti.is_none(),
                    });
                }
            }
        }
        let records = assign_splits(records, spec.seed)?;
        let n = records.len();
        let m = DMatrix::from_row_slice(n, spec.d, &rows);
        let matrix = ActivationMatrix::from_f64(&m, &spec.model_name, key)?;
        slices.push(Slice::new(matrix, records)?);
    }

    let n_layers = spec.layers.iter().max().map_or(1, |l| l + 1);
    let dataset = Dataset::new(
        ModelDescriptor {
            name: spec.model_name.clone(),
            n_layers,
            hidden_dim: spec.d,
        },
        slices,
    )?;
    let truth = GroundTruth {
        d: spec.d,
        sigma: spec.sigma,
        seed: spec.seed,
        named_directions: res
            .named
            .iter()
            .map(|(k, v)| (k.clone(), v.as_slice().to_vec()))
            .collect(),
        tasks: truths,
    };
    Ok((dataset, truth))
}

/// Generates and writes `dataset.json` (plus matrices) and
/// `ground_truth.json` into `dir`; returns the manifest path.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<PathBuf> {
    let (dataset, truth) = generate(spec)?;
    let manifest = write_dataset(dir, DATASET_MANIFEST, &dataset)?;
    write_json(&dir.join(GROUND_TRUTH_FILE), &truth)?;
    Ok(manifest)
}
