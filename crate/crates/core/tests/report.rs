use std::path::Path;

use icot_core::basemodels::{GenerativeConfig, LearnerSpec, PrototypeConfig};
use icot_core::cotrain::{CoTrainConfig, Executor, LearnerEntry};
use icot_core::oodgate::OodConfig;
use icot_core::report::{
    harmonic_mean, load_summary, run_experiment, Ablation, DatasetSource, GzslSetting, Pipeline,
    RunConfig, ALPHA_GRID,
};
use icot_core::synthbench::SynthSpec;

fn spec() -> SynthSpec {
    SynthSpec {
        seen_classes: 4,
        unseen_classes: 3,
        attr_dim: 6,
        feature_dim: 12,
        train_per_class: 20,
        test_per_seen_class: 10,
        test_per_unseen_class: 12,
        sigma: 0.4,
        nonlinear: true,
        sharing: 0.2,
        unseen_jitter: 0.1,
        gain: 1.5,
        seed: 2,
    }
}

fn config(out: &Path, pipeline: Pipeline) -> RunConfig {
    let mut cfg = RunConfig::new("t", DatasetSource::Synthetic(spec()), 5);
    cfg.pipeline = pipeline;
    cfg.out_dir = out.to_path_buf();
    cfg.learners = vec![
        LearnerEntry::new(
            "A",
            LearnerSpec::Prototype(PrototypeConfig {
                hidden: 16,
                epochs: 5,
                ..Default::default()
            }),
        ),
        LearnerEntry::new(
            "B",
            LearnerSpec::Generative(GenerativeConfig {
                n_syn: 20,
                epochs: 5,
                ..Default::default()
            }),
        ),
    ];
    cfg.cotrain = CoTrainConfig {
        iterations: 2,
        ..Default::default()
    };
    cfg.ood = OodConfig {
        hidden: 16,
        epochs: 5,
        ..Default::default()
    };
    cfg
}

#[test]
fn zsl_run_writes_reloadable_deterministic_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), Pipeline::Zsl);
    let exec = Executor::sequential();
    let res = run_experiment(&cfg, &exec).unwrap();
    let run_dir = dir.path().join("t");
    assert_eq!(load_summary(&run_dir).unwrap(), res);

    let first = std::fs::read(run_dir.join("summary.json")).unwrap();
    run_experiment(&cfg, &exec).unwrap();
    assert_eq!(std::fs::read(run_dir.join("summary.json")).unwrap(), first);

    let acc = res.acc.unwrap();
    assert!((0.0..=100.0).contains(&acc));
    let mean = res.per_class.values().sum::<f64>() / res.per_class.len() as f64;
    assert!((mean - acc).abs() < 1e-9);
    assert_eq!(res.per_class.len(), 3);
    assert_eq!(res.learners.len(), 2);
    assert_eq!(res.pipeline, "zsl");
    assert_eq!(res.config_fingerprint, cfg.fingerprint());

    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("section,key,value\nsummary,acc,"));
    let jsonl = std::fs::read_to_string(run_dir.join("history.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = jsonl
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|v| v["branch"].is_string()));
    let saved: RunConfig = RunConfig::from_json(
        &std::fs::read_to_string(run_dir.join("config.json")).unwrap(),
        dir.path(),
    )
    .unwrap();
    assert_eq!(saved.fingerprint(), cfg.fingerprint());
}

#[test]
fn gzsl_summary_h_is_the_harmonic_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), Pipeline::Gzsl);
    cfg.gzsl_setting = GzslSetting::Plain;
    let res = run_experiment(&cfg, &Executor::sequential()).unwrap();
    let g = res.gzsl.unwrap();
    assert!((g.h - harmonic_mean(g.seen, g.unseen)).abs() < 1e-9);
    let csv = std::fs::read_to_string(dir.path().join("t/predictions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 10 + 3 * 12);
    assert_eq!(res.pipeline, "gzsl-plain");
}

#[test]
fn ablations_emit_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let exec = Executor::sequential();
    let mut cfg = config(dir.path(), Pipeline::Ablation);
    cfg.ablation = Some(Ablation::AlphaSweep);
    let res = run_experiment(&cfg, &exec).unwrap();
    let params: Vec<f64> = res.ablation.iter().map(|r| r.param.unwrap()).collect();
    assert_eq!(params, ALPHA_GRID);
    let csv = std::fs::read_to_string(dir.path().join("t/ablation.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("label,param,acc,apr"));
    assert_eq!(csv.lines().count(), 8);

    cfg.ablation = Some(Ablation::Diversity);
    let res = run_experiment(&cfg, &exec).unwrap();
    let labels: Vec<&str> = res.ablation.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["A+B", "A+A'", "B+B'"]);
    assert!(res
        .ablation
        .iter()
        .all(|r| r.apr.is_some_and(|a| (0.0..=1.0).contains(&a))));

    cfg.ablation = Some(Ablation::IncrementalVsOneOff);
    let res = run_experiment(&cfg, &exec).unwrap();
    assert_eq!(res.ablation.len(), 2);
}

#[test]
fn config_errors_are_reported_before_any_work() {
    let base = Path::new("/data/configs");
    let err = RunConfig::from_json(
        r#"{"name": "x", "dataset": {"reference": {}}, "seed": 1, "extra": 0}"#,
        base,
    )
    .unwrap_err();
    assert!(err.is_config());
    assert!(
        RunConfig::from_json(r#"{"name": "x", "dataset": {"reference": {}}}"#, base)
            .unwrap_err()
            .is_config()
    );

    let cfg = RunConfig::from_json(
        r#"{"name": "x", "dataset": {"dir": "sets/a"}, "seed": 1}"#,
        base,
    )
    .unwrap();
    assert_eq!(cfg.dataset, DatasetSource::Dir(base.join("sets/a")));
    let abs = RunConfig::from_json(
        r#"{"name": "x", "dataset": {"dir": "/abs"}, "seed": 1}"#,
        base,
    )
    .unwrap();
    assert_eq!(abs.dataset, DatasetSource::Dir("/abs".into()));

    let mut other = cfg.clone();
    other.seed = 2;
    assert_ne!(cfg.fingerprint(), other.fingerprint());

    let dir = tempfile::tempdir().unwrap();
    let mut single = config(dir.path(), Pipeline::Ablation);
    single.ablation = Some(Ablation::AlphaSweep);
    single.learners.truncate(1);
    assert!(run_experiment(&single, &Executor::sequential())
        .unwrap_err()
        .is_config());
    let mut missing = config(dir.path(), Pipeline::Ablation);
    missing.ablation = None;
    assert!(missing.validate().unwrap_err().is_config());
    assert!(!dir.path().join("t").exists());
}
