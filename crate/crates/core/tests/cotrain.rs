use icot_core::basemodels::{
    hard_labels, predict, BaseLearner, FitJob, GenerativeConfig, LearnerSpec, PrototypeConfig,
};
use icot_core::cotrain::{
    derive_seed, exchange, fuse_predictions, icot_gzsl_run, icot_zsl_run, select_candidates,
    CoTrainConfig, CoTrainProblem, ExchangePolicy, Executor, FusionWeights, LearnerEntry,
    SelectionMode,
};
use icot_core::datamodel::{merge_train_set, ClassId, PseudoLabeledSet, ZslData};
use icot_core::synthbench::{generate, SynthSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_data() -> ZslData {
    generate(&SynthSpec {
        seen_classes: 4,
        unseen_classes: 3,
        attr_dim: 6,
        feature_dim: 12,
        train_per_class: 20,
        test_per_seen_class: 10,
        test_per_unseen_class: 15,
        sigma: 0.4,
        nonlinear: true,
        sharing: 0.2,
        unseen_jitter: 0.1,
        gain: 1.5,
        seed: 5,
    })
    .unwrap()
}

fn a_spec() -> LearnerSpec {
    LearnerSpec::Prototype(PrototypeConfig {
        hidden: 24,
        epochs: 5,
        ..Default::default()
    })
}

fn b_spec() -> LearnerSpec {
    LearnerSpec::Generative(GenerativeConfig {
        n_syn: 20,
        epochs: 5,
        ..Default::default()
    })
}

fn roster() -> Vec<LearnerEntry> {
    vec![
        LearnerEntry::new("A", a_spec()),
        LearnerEntry::new("B", b_spec()),
    ]
}

#[test]
fn one_iteration_unrolls_to_train_exchange_retrain() {
    let data = small_data();
    let train = data.train_set();
    let pool = data.test_unseen();
    let problem = CoTrainProblem {
        seen: &train,
        pool: &pool.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: None,
    };
    let cfg = CoTrainConfig {
        iterations: 1,
        ..Default::default()
    };
    let seed = 11;
    let out = icot_zsl_run(&roster(), problem, &cfg, seed, &Executor::sequential()).unwrap();

    let classes = data.space.unseen().to_vec();
    let specs = [a_spec(), b_spec()];
    let names = ["A", "B"];
    let fit = |i: usize, t: usize, set: &PseudoLabeledSet| {
        let d = merge_train_set(&train, set, &pool.pool).unwrap();
        specs[i]
            .fit(FitJob::new(
                &d,
                &data.semantics,
                &classes,
                derive_seed(seed, names[i], t, "fit"),
            ))
            .unwrap()
    };
    let empty = PseudoLabeledSet::empty(0, 0);
    let labels0: Vec<Vec<ClassId>> = (0..2)
        .map(|i| {
            hard_labels(
                &predict(fit(i, 0, &empty).as_ref(), pool.pool.features(), &classes).unwrap(),
                &classes,
            )
        })
        .collect();
    assert_eq!(labels0, out.initial_labels);
    let offered: Vec<Vec<(usize, ClassId)>> = labels0
        .iter()
        .map(|l| l.iter().copied().enumerate().collect())
        .collect();
    let received = exchange(&offered, &labels0, &ExchangePolicy::Cross).unwrap();
    let probs: Vec<_> = (0..2)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, names[i], 1, "select"));
            let set =
                select_candidates(&received[i], 1, 1, SelectionMode::Incremental, i, &mut rng)
                    .unwrap();
            assert_eq!(set.len(), pool.len());
            predict(fit(i, 1, &set).as_ref(), pool.pool.features(), &classes).unwrap()
        })
        .collect();
    let fused = fuse_predictions(&probs, &FusionWeights::alpha(0.5).unwrap(), &classes).unwrap();
    assert_eq!(fused, out.labels);
    assert_eq!(out.history.len(), 2);
}

#[test]
fn history_grows_with_the_budget() {
    let data = small_data();
    let train = data.train_set();
    let pool = data.test_unseen();
    let problem = CoTrainProblem {
        seen: &train,
        pool: &pool.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: Some(&pool.truth),
    };
    let cfg = CoTrainConfig {
        iterations: 4,
        ..Default::default()
    };
    let out = icot_zsl_run(&roster(), problem, &cfg, 3, &Executor::sequential()).unwrap();
    assert_eq!(
        out.history.iter().map(|h| h.t).collect::<Vec<_>>(),
        vec![0, 1, 2, 3, 4]
    );
    assert!(out.history[0].train_size.iter().all(|&s| s == train.len()));
    for w in out.history.windows(2) {
        for i in 0..2 {
            assert!(w[1].train_size[i] >= w[0].train_size[i]);
        }
    }
    let m = pool.len();
    for (t, h) in out.history.iter().enumerate().skip(1) {
        assert!(
            h.train_size.iter().all(|&s| s == train.len() + m * t / 4),
            "{h:?}"
        );
        assert!(h.acc.is_some() && h.fused_acc.is_some());
    }
    assert!(out.history[0].apr.is_some());

    let one = icot_zsl_run(
        &roster(),
        problem,
        &CoTrainConfig {
            mode: SelectionMode::OneOff,
            ..cfg
        },
        3,
        &Executor::sequential(),
    )
    .unwrap();
    assert!(one.history[1..]
        .iter()
        .all(|h| h.train_size.iter().all(|&s| s == train.len() + m)));
}

#[test]
fn twin_learners_on_one_stream_reduce_to_self_training() {
    let data = small_data();
    let train = data.train_set();
    let pool = data.test_unseen();
    let problem = CoTrainProblem {
        seen: &train,
        pool: &pool.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: None,
    };
    let twin = |name: &str| LearnerEntry {
        name: name.into(),
        stream: Some("shared".into()),
        spec: a_spec(),
    };
    let cfg = CoTrainConfig {
        iterations: 3,
        ..Default::default()
    };
    let pair = icot_zsl_run(
        &[twin("A1"), twin("A2")],
        problem,
        &cfg,
        9,
        &Executor::sequential(),
    )
    .unwrap();
    let single = icot_zsl_run(
        &[twin("A")],
        problem,
        &CoTrainConfig {
            policy: ExchangePolicy::SelfFeed,
            ..cfg
        },
        9,
        &Executor::sequential(),
    )
    .unwrap();
    assert_eq!(pair.labels, single.labels);
    assert_eq!(pair.final_probs[0], single.final_probs[0]);
}

#[test]
fn thread_count_does_not_change_results() {
    let data = small_data();
    let train = data.train_set();
    let pool = data.test_unseen();
    let problem = CoTrainProblem {
        seen: &train,
        pool: &pool.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: Some(&pool.truth),
    };
    let cfg = CoTrainConfig {
        iterations: 2,
        ..Default::default()
    };
    let a = icot_zsl_run(&roster(), problem, &cfg, 4, &Executor::sequential()).unwrap();
    let b = icot_zsl_run(
        &roster(),
        problem,
        &cfg,
        4,
        &Executor::with_threads(4).unwrap(),
    )
    .unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.final_probs, b.final_probs);
    assert_eq!(a.history, b.history);
}

#[test]
fn roster_and_policy_are_checked_before_training() {
    let data = small_data();
    let train = data.train_set();
    let pool = data.test_unseen();
    let problem = CoTrainProblem {
        seen: &train,
        pool: &pool.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: None,
    };
    let three = vec![
        LearnerEntry::new("A", a_spec()),
        LearnerEntry::new("B", b_spec()),
        LearnerEntry::new("C", a_spec()),
    ];
    let exec = Executor::sequential();
    let err = icot_zsl_run(&three, problem, &CoTrainConfig::default(), 1, &exec).unwrap_err();
    assert!(err.is_config(), "{err}");
    let cyclic = CoTrainConfig {
        policy: ExchangePolicy::Cyclic {
            order: vec![0, 0, 1],
        },
        ..Default::default()
    };
    assert!(icot_zsl_run(&three, problem, &cyclic, 1, &exec)
        .unwrap_err()
        .is_config());
    assert!(icot_zsl_run(&[], problem, &CoTrainConfig::default(), 1, &exec).is_err());
    let agree = CoTrainConfig {
        policy: ExchangePolicy::Agreement,
        iterations: 1,
        ..Default::default()
    };
    let out = icot_zsl_run(&three, problem, &agree, 1, &exec).unwrap();
    assert_eq!(out.final_probs.len(), 3);
}

#[test]
fn gzsl_history_counts_cover_the_pool() {
    let data = small_data();
    let train = data.train_set();
    let compound = data.compound();
    let problem = CoTrainProblem {
        seen: &train,
        pool: &compound.pool,
        semantics: &data.semantics,
        space: &data.space,
        truth: Some(&compound.truth),
    };
    let cfg = CoTrainConfig {
        iterations: 2,
        ..Default::default()
    };
    let out = icot_gzsl_run(&roster(), problem, &cfg, 2, &Executor::sequential()).unwrap();
    assert_eq!(out.classes, data.space.all());
    for h in &out.history {
        let (s, u) = (
            h.predicted_seen.as_ref().unwrap(),
            h.predicted_unseen.as_ref().unwrap(),
        );
        for i in 0..2 {
            assert_eq!(s[i] + u[i], compound.len());
        }
        // only rows predicted unseen by the partner can be added
        if h.t > 0 {
            assert!(h
                .train_size
                .iter()
                .all(|&n| n <= train.len() + compound.len()));
        }
    }
}
