use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use probelab::synth::{DirectionSpec, NullTaskSpec, SignalSpec, SyntheticSpec, TaskSpec};
use serde_json::json;

fn probelab(dir: &Path, args: &[&str], seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_probelab"));
    cmd.current_dir(dir).args(args).env("RUST_LOG", "warn").env_remove("PROBELAB_SEED");
    if let Some(s) = seed {
        cmd.env("PROBELAB_SEED", s);
    }
    cmd.output().unwrap()
}

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

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn setup(root: &Path) {
    let mut spec = SyntheticSpec::simple(6, 1.0, 80, 2, task("a", "u"));
    spec.tasks = vec![task("a", "u"), task("b", "w")];
    spec.null_task = Some(NullTaskSpec { responses: 40, noise_scale: 1.0 });
    fs::write(root.join("spec.json"), serde_json::to_string(&spec).unwrap()).unwrap();
    let model = json!({
        "name": "synthetic",
        "prompt_template": "<|user|>\nPROMPT\n",
        "response_connector": "<|assistant|>\n",
        "end_of_turn_token": "<|end|>",
        "end_of_turn_token_id": 2,
        "n_layers": 1,
        "hidden_dim": 6
    });
    fs::write(root.join("model.json"), model.to_string()).unwrap();
    let exp = json!({
        "type": "all_tasks",
        "model_path": "model.json",
        "dataset": "data/dataset.json",
        "output_dir": "out",
        "seeds": [0],
        "stages": { "temporal": false },
        "train": { "mlp": { "max_epochs": 10 } }
    });
    fs::write(root.join("exp.json"), exp.to_string()).unwrap();
}

#[test]
fn synth_validate_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);

    let o = probelab(root, &["synth", "spec.json", "--out", "data"], None);
    assert!(o.status.success(), "{}", text(&o));
    assert!(root.join("data/dataset.json").exists());

    for cfg in ["spec.json", "model.json", "exp.json"] {
        let o = probelab(root, &["validate", cfg], None);
        assert!(o.status.success(), "{cfg}: {}", text(&o));
    }

    let args = ["run", "exp.json", "--stages", "train,inlp,transfer,ablate"];
    let o = probelab(root, &args, None);
    assert!(o.status.success(), "{}", text(&o));
    assert!(root.join("out/matrices/transfer.csv").exists());
    assert!(root.join("out/matrices/ablation.csv").exists());

    let again = probelab(root, &args, None);
    assert!(again.status.success(), "{}", text(&again));
    let cached = String::from_utf8_lossy(&again.stdout).lines().filter(|l| l.ends_with("cached")).count();
    assert_eq!(cached, 4, "{}", text(&again));

    let o = probelab(root, &["report", "out"], None);
    assert!(o.status.success(), "{}", text(&o));
    assert!(!o.stdout.is_empty());
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    setup(root);

    fs::write(root.join("broken.json"), "{ not json").unwrap();
    assert_eq!(probelab(root, &["validate", "broken.json"], None).status.code(), Some(1));
    assert_eq!(probelab(root, &["run", "exp.json"], Some("seven")).status.code(), Some(1));
    // a config pointing at a missing dataset is a config problem
    assert_eq!(probelab(root, &["run", "exp.json"], None).status.code(), Some(1));

    assert!(probelab(root, &["synth", "spec.json", "--out", "data"], None).status.success());
    let records = fs::read_dir(root.join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .unwrap();
    fs::write(&records, "{}\n").unwrap();
    assert_eq!(probelab(root, &["run", "exp.json"], None).status.code(), Some(2));
}
