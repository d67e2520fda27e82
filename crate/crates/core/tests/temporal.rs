use probelab::data::{Dataset, Pooling, Scope, SliceKey, Split};
use probelab::probe::{evaluate, train_probe, Family, LinearProbe, Probe, TrainConfig};
use probelab::synth::{generate, DirectionSpec, SignalSpec, SyntheticSpec, TaskSpec, TemporalSpec};
use probelab::temporal::{
    bootstrap_ci, concat, per_bin_curve, positioned_samples, progression_curve, weighted_accuracy, write_curves_csv,
    BinConfig, BinKind, PositionedSamples, ProgressionBin, ProgressionCurve,
};
use proptest::prelude::*;

const BINS: usize = 20;

fn temporal_dataset(scopes: Option<Vec<Scope>>, per_class: usize, seed: u64) -> Dataset {
    let task = TaskSpec {
        name: "t".into(),
        signals: vec![SignalSpec { direction: DirectionSpec::Shared("u".into()), strength: 3.0 }],
        xor: None,
        signal_scopes: scopes,
        signal_layers: None,
        extra_noise: vec![],
    };
    let mut spec = SyntheticSpec::simple(8, 1.0, per_class, seed, task);
    spec.temporal = Some(TemporalSpec { connector_slots: 2, min_len: 10, max_len: 40 });
    generate(&spec).unwrap().0
}

fn key(ds: &Dataset, scope: Scope) -> SliceKey {
    *ds.keys().iter().find(|k| k.scope == scope).unwrap()
}

fn all_scopes(ds: &Dataset, split: Split) -> PositionedSamples {
    let parts: Vec<_> = [Scope::Connector, Scope::Body, Scope::Eos]
        .into_iter()
        .map(|s| positioned_samples(ds, &key(ds, s), "t", split, BINS).unwrap())
        .collect();
    concat(&parts).unwrap()
}

fn body_probe(ds: &Dataset) -> Probe {
    let train = ds.task_split(&key(ds, Scope::Body), "t", Split::Train, Pooling::Pool).unwrap();
    train_probe(Family::Logistic, &train, None, &TrainConfig::default(), 0).unwrap()
}

fn cfg() -> BinConfig {
    BinConfig { resamples: 200, seed: 7, ..BinConfig::default() }
}

fn of_kind(bins: &[ProgressionBin], kind: BinKind) -> Vec<&ProgressionBin> {
    bins.iter().filter(|b| b.kind == kind).collect()
}

#[test]
fn body_only_signal_shows_up_only_in_body_bins() {
    let ds = temporal_dataset(Some(vec![Scope::Body]), 2000, 3);
    let probe = body_probe(&ds);
    let test = all_scopes(&ds, Split::Test);
    let bins = progression_curve(&probe, &test, &cfg()).unwrap();

    let conn = of_kind(&bins, BinKind::ConnectorSlot);
    assert_eq!(conn.iter().map(|b| b.position).collect::<Vec<_>>(), vec![-2.0, -1.0]);
    for b in conn {
        assert!((b.accuracy - 0.5).abs() <= 0.05, "connector slot {}: {}", b.position, b.accuracy);
    }
    let body = of_kind(&bins, BinKind::BodyPercent);
    assert_eq!(body.len(), BINS);
    for b in body {
        assert!(b.accuracy >= 0.9, "body bin {}: {}", b.position, b.accuracy);
        assert!(!b.low_confidence);
    }
    let eos = of_kind(&bins, BinKind::Eos);
    assert_eq!(eos.len(), 1);
    assert!((eos[0].accuracy - 0.5).abs() <= 0.05, "eos: {}", eos[0].accuracy);
}

#[test]
fn signal_in_every_scope_is_decodable_everywhere() {
    let ds = temporal_dataset(None, 600, 4);
    let bins = progression_curve(&body_probe(&ds), &all_scopes(&ds, Split::Test), &cfg()).unwrap();
    assert!(bins.iter().all(|b| b.accuracy >= 0.9), "{bins:?}");
}

#[test]
fn weighted_bin_accuracy_equals_overall_accuracy() {
    let ds = temporal_dataset(Some(vec![Scope::Body]), 400, 5);
    let probe = body_probe(&ds);
    let test = all_scopes(&ds, Split::Test);
    let bins = progression_curve(&probe, &test, &cfg()).unwrap();
    let overall = evaluate(&probe, &test.samples).unwrap().accuracy;
    let n: usize = bins.iter().map(|b| b.n).sum();
    let correct: usize = bins.iter().map(|b| b.correct).sum();
    assert_eq!(n, test.len());
    assert_eq!(correct as f64 / n as f64, overall);
    assert_eq!(weighted_accuracy(&bins), overall);
    let manual: f64 = bins.iter().filter(|b| b.n > 0).map(|b| b.accuracy * b.n as f64).sum::<f64>() / n as f64;
    assert!((manual - overall).abs() < 1e-12);
}

#[test]
fn constant_probe_scores_the_base_rate() {
    let ds = temporal_dataset(None, 200, 6);
    let test = all_scopes(&ds, Split::Test);
    let zero = Probe::Linear(LinearProbe::constant(8, 0.0));
    let bins = progression_curve(&zero, &test, &cfg()).unwrap();
    let negatives = test.samples.len() - test.samples.positives();
    assert_eq!(bins.iter().map(|b| b.correct).sum::<usize>(), negatives);
    for b in bins.iter().filter(|b| b.n > 0) {
        assert!(b.ci_low <= b.accuracy && b.accuracy <= b.ci_high);
    }
}

#[test]
fn per_bin_training_recovers_the_mask() {
    let ds = temporal_dataset(Some(vec![Scope::Body]), 1500, 8);
    let train = all_scopes(&ds, Split::Train);
    let test = all_scopes(&ds, Split::Test);
    let bins = per_bin_curve(Family::Logistic, &train, &test, &TrainConfig::default(), 0, &cfg()).unwrap();
    for b in &bins {
        match b.kind {
            BinKind::BodyPercent => assert!(b.accuracy >= 0.9, "{b:?}"),
            _ => assert!((b.accuracy - 0.5).abs() <= 0.06, "{b:?}"),
        }
    }
}

#[test]
fn cis_cover_point_estimates_and_small_bins_are_flagged() {
    let ds = temporal_dataset(Some(vec![Scope::Body]), 30, 9);
    let test = all_scopes(&ds, Split::Test);
    let probe = body_probe(&ds);
    let c = BinConfig { body_bins: 50, ..cfg() };
    let test50 = {
        let parts: Vec<_> = [Scope::Connector, Scope::Body, Scope::Eos]
            .into_iter()
            .map(|s| positioned_samples(&ds, &key(&ds, s), "t", Split::Test, 50).unwrap())
            .collect();
        concat(&parts).unwrap()
    };
    assert_eq!(test50.len(), test.len());
    let bins = progression_curve(&probe, &test50, &c).unwrap();
    assert_eq!(of_kind(&bins, BinKind::BodyPercent).len(), 50);
    for b in &bins {
        if b.n == 0 {
            assert!(b.accuracy.is_nan() && b.low_confidence);
        } else {
            assert!(b.ci_low <= b.accuracy && b.accuracy <= b.ci_high, "{b:?}");
            assert_eq!(b.low_confidence, b.n < c.min_count);
        }
    }
}

#[test]
fn curve_is_deterministic_and_writes_csv() {
    let ds = temporal_dataset(Some(vec![Scope::Body]), 100, 10);
    let probe = body_probe(&ds);
    let test = all_scopes(&ds, Split::Test);
    let a = progression_curve(&probe, &test, &cfg()).unwrap();
    let b = progression_curve(&probe, &test, &cfg()).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("temporal.csv");
    let curve = ProgressionCurve { model: "synthetic".into(), task: "t".into(), family: Family::Logistic, bins: a.clone() };
    write_curves_csv(&path, &[curve]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,task,family,bin_kind,bin_position,n,accuracy,ci_low,ci_high"));
    assert_eq!(lines.count(), a.len());
    assert!(text.contains("synthetic,t,logistic,connector_slot,-2.000000,"));
}

#[test]
fn dimension_mismatch_is_an_error() {
    let ds = temporal_dataset(None, 50, 11);
    let wrong = Probe::Linear(LinearProbe::constant(3, 0.0));
    assert!(progression_curve(&wrong, &all_scopes(&ds, Split::Test), &cfg()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bootstrap_interval_brackets_the_mean(hits in prop::collection::vec(any::<bool>(), 1..80), seed in any::<u64>()) {
        let (lo, hi) = bootstrap_ci(&hits, 300, 0.95, seed);
        prop_assert!(lo <= hi);
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        if hits.iter().all(|h| *h) || hits.iter().all(|h| !*h) {
            prop_assert_eq!(lo, hi);
        }
    }
}
