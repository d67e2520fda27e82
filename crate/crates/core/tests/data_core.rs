use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use nalgebra::DMatrix;
use probelab::data::{
    assign_splits, check_balance, load_dataset, read_manifest, split_counts, write_dataset, ActivationMatrix,
    Dataset, ModelDescriptor, Pooling, RowQuery, SampleRecord, Scope, Slice, SliceKey, Split, Stream,
};
use probelab::npy;
use probelab::Error;
use proptest::prelude::*;

fn records(n_responses: usize, positions: usize) -> Vec<SampleRecord> {
    (0..n_responses)
        .flat_map(|r| {
            (0..positions).map(move |p| SampleRecord {
                sample_id: format!("resp{r:04}#b{p}"),
                task: "t".into(),
                requested_option: "o".into(),
                label: (r % 2) as u8,
                split: None,
                token_index: p as i64,
                response_length: positions as u32,
                is_null_task: false,
            })
        })
        .collect()
}

fn response_splits(recs: &[SampleRecord]) -> BTreeMap<&str, BTreeSet<Split>> {
    let mut m: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
    for r in recs {
        m.entry(r.response_key()).or_default().insert(r.split.unwrap());
    }
    m
}

#[test]
fn splits_realize_seventy_fifteen_fifteen() {
    assert_eq!(split_counts(100), (70, 15, 15));
    assert_eq!(split_counts(10), (7, 1, 2));
    let recs = assign_splits(records(100, 3), 4).unwrap();
    let by_resp = response_splits(&recs);
    assert!(by_resp.values().all(|s| s.len() == 1));
    let mut sizes = BTreeMap::new();
    for s in by_resp.values() {
        *sizes.entry(*s.iter().next().unwrap()).or_insert(0) += 1;
    }
    assert_eq!(sizes.values().copied().collect::<Vec<_>>(), vec![70, 15, 15]);
    assert_eq!(assign_splits(records(100, 3), 4).unwrap(), recs);
    assert!(matches!(assign_splits(records(9, 2), 0), Err(Error::InsufficientData(_))));
}

#[test]
fn balance_report_flags_skewed_splits() {
    let mut recs = assign_splits(records(200, 1), 1).unwrap();
    assert!(check_balance(&recs, 0.1).is_balanced());
    for r in recs.iter_mut().filter(|r| r.split == Some(Split::Val)) {
        r.label = 1;
    }
    let rep = check_balance(&recs, 0.1);
    let flagged: Vec<_> = rep.flagged().map(|e| e.split).collect();
    assert_eq!(flagged, vec![Split::Val]);
}

fn tiny_dataset() -> Dataset {
    let model = ModelDescriptor { name: "m".into(), n_layers: 2, hidden_dim: 3 };
    let mut slices = Vec::new();
    for (layer, scope) in [(0, Scope::Eos), (1, Scope::Body)] {
        let key = SliceKey::new(layer, Stream::Attention, scope);
        let recs: Vec<SampleRecord> = assign_splits(records(12, 1), 7)
            .unwrap()
            .into_iter()
            .map(|mut r| {
                if scope == Scope::Eos {
                    r.token_index = r.response_length as i64;
                }
                r
            })
            .collect();
        let m = DMatrix::from_fn(recs.len(), 3, |i, j| (i * 3 + j) as f64 * 0.5 - layer as f64);
        slices.push(Slice::new(ActivationMatrix::from_f64(&m, "m", key).unwrap(), recs).unwrap());
    }
    Dataset::new(model, slices).unwrap()
}

#[test]
fn manifest_round_trip_preserves_everything() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset();
    let path = write_dataset(dir.path(), "m.json", &ds).unwrap();
    let manifest = read_manifest(&path).unwrap();
    assert_eq!(manifest.entries.len(), 2);
    assert_eq!(manifest.entries[0].matrix_sha256.len(), 64);
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.model, ds.model);
    for (a, b) in ds.slices.iter().zip(&back.slices) {
        assert_eq!(a.key(), b.key());
        assert_eq!(a.records, b.records);
        assert_eq!(a.matrix.as_slice(), b.matrix.as_slice());
    }
    let key = SliceKey::new(0, Stream::Attention, Scope::Eos);
    let q = RowQuery { task: "t", split: Some(Split::Train), null_task: false, pooling: Pooling::Pool };
    assert_eq!(back.rows(&key, q).unwrap(), ds.rows(&key, q).unwrap());
}

#[test]
fn tampered_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), "m.json", &tiny_dataset()).unwrap();
    let manifest = read_manifest(&path).unwrap();
    let rec = dir.path().join(&manifest.entries[0].records);
    let original = fs::read_to_string(&rec).unwrap();

    fs::write(&rec, original.replace("\"label\":1", "\"label\":0")).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::HashMismatch { .. })));

    fs::remove_file(&rec).unwrap();
    let err = load_dataset(&path).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn row_count_mismatch_is_detected_even_with_fresh_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset();
    let mut short = ds.clone();
    short.slices[0].records.pop();
    // write a consistent pair then swap in a shorter record file and rehash
    let path = write_dataset(dir.path(), "m.json", &ds).unwrap();
    let mut manifest = read_manifest(&path).unwrap();
    let rec = dir.path().join(&manifest.entries[0].records);
    probelab::data::write_records(&rec, &short.slices[0].records).unwrap();
    manifest.entries[0].records_sha256 = probelab::hash::sha256_file(&rec).unwrap();
    fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(load_dataset(&path), Err(Error::RowCountMismatch { matrix_rows: 12, record_rows: 11, .. })));

    assert!(Slice::new(ds.slices[0].matrix.clone(), short.slices[0].records.clone()).is_err());
}

#[test]
fn wrong_schema_version_and_dimension_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), "m.json", &tiny_dataset()).unwrap();
    let mut manifest = read_manifest(&path).unwrap();
    manifest.schema_version = "99".into();
    fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    assert!(matches!(read_manifest(&path), Err(Error::Parse { .. })));

    let ds = tiny_dataset();
    let model = ModelDescriptor { hidden_dim: 4, ..ds.model.clone() };
    assert!(matches!(Dataset::new(model, ds.slices), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn non_finite_activations_are_refused() {
    let key = SliceKey::new(0, Stream::Mlp, Scope::Eos);
    let err = ActivationMatrix::new(2, 2, vec![0.0, 1.0, f32::NAN, 2.0], "m", key).unwrap_err();
    assert!(matches!(err, Error::NonFinite { row: 1, col: 0, .. }), "{err}");
}

#[test]
fn implied_scope_follows_token_index() {
    let mut r = records(1, 1).remove(0);
    r.response_length = 5;
    for (idx, scope) in [(-2, Some(Scope::Connector)), (0, Some(Scope::Body)), (4, Some(Scope::Body)), (5, Some(Scope::Eos)), (6, None)] {
        r.token_index = idx;
        assert_eq!(r.implied_scope(), scope, "{idx}");
    }
    r.token_index = 5;
    assert!(r.check_position(Scope::Eos).is_ok());
    assert!(r.check_position(Scope::Body).is_err());
}

#[test]
fn one_per_response_pooling_picks_a_single_row_each() {
    let recs = assign_splits(records(40, 4), 2).unwrap();
    let key = SliceKey::new(0, Stream::Mlp, Scope::Body);
    let m = DMatrix::from_fn(recs.len(), 2, |i, _| i as f64);
    let ds = Dataset::new(
        ModelDescriptor { name: "m".into(), n_layers: 1, hidden_dim: 2 },
        vec![Slice::new(ActivationMatrix::from_f64(&m, "m", key).unwrap(), recs.clone()).unwrap()],
    )
    .unwrap();
    let q = |pooling| RowQuery { task: "t", split: None, null_task: false, pooling };
    assert_eq!(ds.rows(&key, q(Pooling::Pool)).unwrap().len(), 160);
    let one = ds.rows(&key, q(Pooling::OnePerResponse { seed: 3 })).unwrap();
    assert_eq!(one.len(), 40);
    let keys: BTreeSet<&str> = one.iter().map(|&i| recs[i].response_key()).collect();
    assert_eq!(keys.len(), 40);
    assert_eq!(one, ds.rows(&key, q(Pooling::OnePerResponse { seed: 3 })).unwrap());
}

#[test]
fn npy_round_trips_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.npy");
    let m = DMatrix::from_fn(3, 5, |i, j| (i as f64) - 0.25 * j as f64);
    npy::write_matrix(&p, &m).unwrap();
    assert_eq!(npy::read_matrix(&p).unwrap(), m);
    let bytes = npy::to_bytes(&[2, 2], &[1.0f32, 2.0, 3.0, 4.0]).unwrap();
    assert!(bytes.starts_with(b"\x93NUMPY"));
    let arr = npy::from_bytes::<f32>(&bytes).unwrap();
    assert_eq!((arr.shape, arr.data), (vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
    assert!(npy::from_bytes::<f32>(b"not an npy file").is_err());
    assert!(npy::from_bytes::<f64>(&bytes).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn split_sizes_within_rounding(n in 10usize..400, positions in 1usize..4, seed in any::<u64>()) {
        let recs = assign_splits(records(n, positions), seed).unwrap();
        let by_resp = response_splits(&recs);
        prop_assert!(by_resp.values().all(|s| s.len() == 1));
        let mut counts: BTreeMap<Split, usize> = BTreeMap::new();
        for s in by_resp.values() {
            *counts.entry(*s.iter().next().unwrap()).or_default() += 1;
        }
        let (tr, va, te) = split_counts(n);
        prop_assert_eq!(tr + va + te, n);
        let got = |s| *counts.get(&s).unwrap_or(&0);
        prop_assert_eq!((got(Split::Train), got(Split::Val), got(Split::Test)), (tr, va, te));
        for (c, f) in [(tr, 0.70), (va, 0.15), (te, 0.15)] {
            prop_assert!((c as f64 - f * n as f64).abs() <= 2.0);
        }
    }

    #[test]
    fn npy_f32_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u32>()) {
        let data: Vec<f32> = (0..rows * cols).map(|i| (i as f32 + seed as f32).sin()).collect();
        let arr = npy::from_bytes::<f32>(&npy::to_bytes(&[rows, cols], &data).unwrap()).unwrap();
        prop_assert_eq!(arr.shape, vec![rows, cols]);
        prop_assert_eq!(arr.data, data);
    }
}
