use std::fs;
use std::path::{Path, PathBuf};

use probelab::orchestrator::{
    render_report, run, validate_config, RunOptions, Severity, StageName, StageStatus, StageToggles, RUN_MANIFEST,
};
use probelab::synth::{write_synthetic, DirectionSpec, NullTaskSpec, SignalSpec, SyntheticSpec, TaskSpec, TemporalSpec};
use probelab::Error;
use serde_json::json;

fn task(name: &str, dir: &str) -> TaskSpec {
    TaskSpec {
        name: name.into(),
        signals: vec![SignalSpec { direction: DirectionSpec::Shared(dir.into()), strength: 2.5 }],
        xor: None,
        signal_scopes: None,
        signal_layers: None,
        extra_noise: vec![],
    }
}

fn write(path: &Path, v: serde_json::Value) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
}

fn model_json() -> serde_json::Value {
    json!({
        "name": "synthetic",
        "prompt_template": "<|user|>\nPROMPT\n",
        "response_connector": "<|assistant|>\n",
        "end_of_turn_token": "<|end|>",
        "end_of_turn_token_id": 2,
        "n_layers": 1,
        "hidden_dim": 8
    })
}

/// Synthetic three-task dataset with all scopes and a null task, plus model
/// and experiment configs; returns the experiment path.
fn fixture(root: &Path, out: &str) -> PathBuf {
    let data = root.join("data");
    if !data.join("dataset.json").exists() {
        let mut spec = SyntheticSpec::simple(8, 1.0, 120, 5, task("a", "u"));
        spec.tasks = vec![task("a", "u"), task("b", "u"), task("c", "w")];
        spec.temporal = Some(TemporalSpec { connector_slots: 2, min_len: 3, max_len: 6 });
        spec.null_task = Some(NullTaskSpec { responses: 60, noise_scale: 1.0 });
        write_synthetic(&spec, &data).unwrap();
        write(&root.join("model.json"), model_json());
    }
    let exp = root.join(format!("{out}.json"));
    write(
        &exp,
        json!({
            "type": "all_tasks",
            "model_path": "model.json",
            "dataset": "data/dataset.json",
            "output_dir": out,
            "seeds": [0, 1],
            "train": { "mlp": { "max_epochs": 30 } },
            "temporal": { "resamples": 100 }
        }),
    );
    exp
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn all_stages_write_the_contract_layout_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = fixture(tmp.path(), "out");
    let rep = run(&exp, &RunOptions::default()).unwrap();
    assert_eq!(rep.ran(), StageName::ALL.to_vec());
    assert_eq!(rep.tasks, vec!["a", "b", "c"]);
    let out = tmp.path().join("out");
    for f in [
        "probes/eval.csv",
        "probes/selection.json",
        "probes/general.json",
        "projectors/a__null.json",
        "projectors/c__row.npy",
        "matrices/transfer.csv",
        "matrices/ablation.csv",
        "intensity/a.csv",
        "intensity/summary.json",
        "pwcca/distances.csv",
        "pwcca/dendrogram.json",
        "temporal/curves.csv",
        RUN_MANIFEST,
        "report.md",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let transfer = fs::read_to_string(out.join("matrices/transfer.csv")).unwrap();
    assert!(transfer.lines().next().unwrap().contains("general"));
    let temporal = fs::read_to_string(out.join("temporal/curves.csv")).unwrap();
    assert!(temporal.contains(",connector_slot,") && temporal.contains(",body_percent,") && temporal.contains(",eos,"));

    let before = csv_files(&out);
    let mtime = fs::metadata(out.join("probes/eval.csv")).unwrap().modified().unwrap();
    let report = fs::read_to_string(out.join("report.md")).unwrap();
    let again = run(&exp, &RunOptions::default()).unwrap();
    assert!(again.ran().is_empty(), "{:?}", again.stages);
    assert!(again.stages.iter().all(|s| s.status == StageStatus::Cached));
    assert_eq!(csv_files(&out), before);
    assert_eq!(fs::metadata(out.join("probes/eval.csv")).unwrap().modified().unwrap(), mtime);
    assert_eq!(fs::read_to_string(out.join("report.md")).unwrap(), report);
    assert_eq!(render_report(&out).unwrap(), report);

    // a damaged output invalidates that stage and everything keyed on it stays put
    fs::write(out.join("pwcca/distances.csv"), "tampered").unwrap();
    let healed = run(&exp, &RunOptions::default()).unwrap();
    assert_eq!(healed.ran(), vec![StageName::Pwcca]);
    assert_eq!(csv_files(&out), before);

    let forced = run(&exp, &RunOptions { force: true, ..Default::default() }).unwrap();
    assert_eq!(forced.ran().len(), StageName::ALL.len());
    assert_eq!(csv_files(&out), before);
}

#[test]
fn same_seed_gives_byte_identical_csvs_and_seed_override_changes_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let e1 = fixture(tmp.path(), "run1");
    let e2 = fixture(tmp.path(), "run2");
    let stages = Some(StageToggles::only("train,inlp,transfer,ablate").unwrap());
    let r1 = run(&e1, &RunOptions { stages, jobs: Some(1), ..Default::default() }).unwrap();
    let r2 = run(&e2, &RunOptions { stages, jobs: Some(3), ..Default::default() }).unwrap();
    let (a, b) = (csv_files(&tmp.path().join("run1")), csv_files(&tmp.path().join("run2")));
    assert!(a.len() >= 4);
    assert_eq!(a, b);
    assert_eq!(r1.stages, r2.stages);

    let r3 = run(&e2, &RunOptions { stages, seed_override: Some(9), ..Default::default() }).unwrap();
    assert_eq!(r3.status(StageName::Train), Some(StageStatus::Ran));
    let eval = fs::read_to_string(tmp.path().join("run2/probes/eval.csv")).unwrap();
    assert!(eval.contains(",9,") && eval.contains(",10,") && !eval.contains(",0,train,"));
}

#[test]
fn disabled_upstream_without_cache_is_a_dependency_error() {
    let tmp = tempfile::tempdir().unwrap();
    let exp = fixture(tmp.path(), "dep");
    let only_ablate = StageToggles::only("ablate").unwrap();
    let err = run(&exp, &RunOptions { stages: Some(only_ablate), ..Default::default() }).unwrap_err();
    assert!(matches!(err, Error::MissingUpstream { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);

    // once train and inlp outputs exist, ablate alone reuses them
    let up = StageToggles::only("train,inlp").unwrap();
    run(&exp, &RunOptions { stages: Some(up), ..Default::default() }).unwrap();
    let r = run(&exp, &RunOptions { stages: Some(only_ablate), ..Default::default() }).unwrap();
    assert_eq!(r.ran(), vec![StageName::Ablate]);
    assert_eq!(r.status(StageName::Train), Some(StageStatus::Disabled));
}

#[test]
fn single_task_run_skips_the_general_probe() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "unused");
    let exp = tmp.path().join("single.json");
    write(
        &exp,
        json!({
            "type": "single_task", "model_path": "model.json", "dataset": "data/dataset.json",
            "output_dir": "single", "tasks": ["c"], "seeds": [0],
            "stages": { "temporal": false, "pwcca": false },
            "train": { "mlp": { "max_epochs": 20 } }
        }),
    );
    let r = run(&exp, &RunOptions::default()).unwrap();
    assert_eq!(r.tasks, vec!["c"]);
    let out = tmp.path().join("single");
    assert!(!out.join("probes/general.json").exists());
    let ablation = fs::read_to_string(out.join("matrices/ablation.csv")).unwrap();
    assert_eq!(ablation.lines().count(), 2);
}

#[test]
fn config_and_data_errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    fixture(tmp.path(), "unused");
    let bad = tmp.path().join("bad.json");
    write(&bad, json!({ "type": "sometimes", "model_path": "model.json", "dataset": "data/dataset.json", "output_dir": "x" }));
    assert_eq!(run(&bad, &RunOptions::default()).unwrap_err().exit_code(), 1);

    let unknown_task = tmp.path().join("unknown.json");
    write(
        &unknown_task,
        json!({ "type": "all_tasks", "model_path": "model.json", "dataset": "data/dataset.json", "output_dir": "x", "tasks": ["zzz"] }),
    );
    assert_eq!(run(&unknown_task, &RunOptions::default()).unwrap_err().exit_code(), 2);

    fs::write(tmp.path().join("data/L0_mlp_eos.jsonl"), "{}\n").unwrap();
    let exp = fixture(tmp.path(), "corrupt");
    let err = run(&exp, &RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::HashMismatch { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn validate_reports_findings_with_fields() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = model_json();
    m.as_object_mut().unwrap().remove("response_connector");
    let p = tmp.path().join("model.json");
    write(&p, m);
    let f = validate_config(&p).unwrap();
    assert_eq!(f.len(), 1);
    assert_eq!((f[0].severity, f[0].field.as_str()), (Severity::Error, "response_connector"));

    let mut twice = model_json();
    twice["prompt_template"] = json!("PROMPT and PROMPT");
    write(&p, twice);
    assert_eq!(validate_config(&p).unwrap()[0].field, "prompt_template");

    write(&p, model_json());
    assert!(validate_config(&p).unwrap().is_empty());

    let t = tmp.path().join("task.json");
    write(
        &t,
        json!({ "task_id": "t", "prompts": ["Write OPTION words"], "requested_options": ["3"], "logic_class": "vibes" }),
    );
    let f = validate_config(&t).unwrap();
    assert_eq!(f.len(), 1);
    assert!(f[0].message.contains("vibes") && f[0].message.contains("word_count"), "{}", f[0].message);

    write(
        &t,
        json!({ "task_id": "t", "prompts": ["Write OPTION words"], "requested_options": ["3"], "logic_class": "word_count" }),
    );
    assert!(validate_config(&t).unwrap().is_empty());

    let e = tmp.path().join("exp.json");
    write(
        &e,
        json!({ "type": "all_tasks", "model_path": "model.json", "dataset": "nope.json", "output_dir": "o", "task_paths": ["task.json"] }),
    );
    let f = validate_config(&e).unwrap();
    assert_eq!(f.len(), 1);
    assert_eq!(f[0].field, "dataset");

    fs::write(tmp.path().join("broken.json"), "{ not json").unwrap();
    assert!(validate_config(&tmp.path().join("broken.json")).is_err());
}
