use super::*;
use crate::numeric::{grad_check, kl_to_uniform};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn small() -> OodConfig {
    OodConfig {
        hidden: 32,
        epochs: 40,
        lr: 1e-2,
        batch: 32,
        ..Default::default()
    }
}

fn blobs(centers: &[Vec<f64>], per: usize, sd: f64, seed: u64) -> (Matrix, Vec<ClassId>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = vec![];
    let mut labels = vec![];
    for (c, mu) in centers.iter().enumerate() {
        for _ in 0..per {
            rows.push(
                mu.iter()
                    .map(|m| m + sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect::<Vec<_>>(),
            );
            labels.push(ClassId(c as u32));
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

#[test]
fn base_detector_separates_two_blobs_and_is_deterministic() {
    let (x, y) = blobs(&[vec![3.0, 0.0], vec![-3.0, 0.0]], 50, 0.5, 1);
    let seen = LabeledDataset::seen(x.clone(), y.clone()).unwrap();
    let det = train_base_detector(&seen, &small(), 4).unwrap();
    assert_eq!(det.net.output_dim(), 2);
    let hits = det
        .classify(&x)
        .iter()
        .zip(&y)
        .filter(|(a, b)| a == b)
        .count();
    assert!(hits as f64 / y.len() as f64 >= 0.95);
    assert_eq!(train_base_detector(&seen, &small(), 4).unwrap(), det);
}

#[test]
fn detector_loss_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for init in 0..3 {
        let net = Mlp::new(4, 6, 3, &mut rng).unwrap();
        let xs =
            Matrix::from_vec(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let xu =
            Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = [0, 2, 1, 1, 0];
        let err = grad_check(
            |p| {
                detector_loss(
                    &Mlp::from_params(4, 6, 3, p.to_vec()).unwrap(),
                    &xs,
                    &y,
                    &xu,
                )
            },
            net.params(),
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "init {init}: {err}");
    }
}

#[test]
fn semantic_loss_gradient_checks() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let net = Mlp::new(4, 6, 3, &mut rng).unwrap();
    let x = Matrix::from_vec(5, 4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let attrs = Matrix::from_vec(2, 3, (0..6).map(|_| rng.random::<f64>()).collect()).unwrap();
    let y = [0, 1, 1, 0, 1];
    let err = grad_check(
        |p| {
            semantic_loss(
                &Mlp::from_params(4, 6, 3, p.to_vec()).unwrap(),
                &x,
                &y,
                &attrs,
            )
        },
        net.params(),
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn kl_term_matches_the_probability_helper() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net = Mlp::new(2, 5, 4, &mut rng).unwrap();
    let xu = Matrix::from_rows(&[vec![0.3, -0.7]]).unwrap();
    let empty_seen = Matrix::zeros(0, 2);
    let (loss, _) = detector_loss(&net, &empty_seen, &[], &xu);
    let p = softmax_row(&net, &xu);
    assert!((loss - kl_to_uniform(&p).unwrap()).abs() < 1e-12);
}

fn softmax_row(net: &Mlp, x: &Matrix) -> ProbVector {
    crate::numeric::softmax(net.forward(x).row(0)).unwrap()
}

#[test]
fn score_examples() {
    let u = ProbVector::uniform(5).unwrap();
    assert!((ood_score(&u) - 5f64.ln()).abs() < 1e-12);
    assert!((max_softmax_score(&u) - 0.8).abs() < 1e-12);
    let one = ProbVector::new(vec![0.0, 1.0, 0.0]).unwrap();
    assert_eq!(ood_score(&one), 0.0);
    assert_eq!(max_softmax_score(&one), 0.0);
    let p = ProbVector::new(vec![0.7, 0.3]).unwrap();
    assert!((ood_score(&p) - 0.6108643020548935).abs() < 1e-12);
    assert!((max_softmax_score(&ProbVector::new(vec![0.6, 0.4]).unwrap()) - 0.4).abs() < 1e-12);
}

#[test]
fn threshold_rule_on_the_worked_example() {
    let c = tnr_at_fnr(&[1.0, 2.0, 3.0, 4.0], &[2.5, 3.5, 4.5, 5.5], &[0.25]).unwrap();
    assert_eq!(c.points[0].threshold, 3.0);
    assert_eq!(c.points[0].tnr, 0.75);
}

#[test]
fn perfect_separation_gives_full_tnr() {
    let seen: Vec<f64> = (0..50).map(|i| i as f64 / 100.0).collect();
    let unseen: Vec<f64> = (0..50).map(|i| 1.0 + i as f64).collect();
    let c = tnr_at_fnr(&seen, &unseen, &DEFAULT_FNR_TARGETS).unwrap();
    assert!(c.points.iter().all(|p| p.tnr == 1.0));
    assert_eq!(c.average_tnr, 1.0);
}

#[test]
fn identical_distributions_give_tnr_near_fnr() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let seen: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let unseen: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let c = tnr_at_fnr(&seen, &unseen, &DEFAULT_FNR_TARGETS).unwrap();
    for p in &c.points {
        assert!((p.tnr - p.fnr_target).abs() < 0.015, "{p:?}");
    }
}

#[test]
fn curve_input_errors() {
    assert!(tnr_at_fnr(&[], &[1.0], &[0.1]).is_err());
    assert!(tnr_at_fnr(&[1.0], &[], &[0.1]).is_err());
    assert!(tnr_at_fnr(&[1.0], &[1.0], &[0.2, 0.1]).is_err());
    assert!(tnr_at_fnr(&[1.0], &[1.0], &[1.0]).is_err());
    let csv = tnr_at_fnr(&[1.0, 2.0], &[3.0], &[0.5]).unwrap().to_csv();
    assert!(
        csv.starts_with("fnr_target,threshold,tnr\n0.5,1,1\n"),
        "{csv}"
    );
}

#[test]
fn iter_selection_takes_the_least_confident() {
    // a one-input detector whose logits are [x, 0]: confidence rises with |x|
    let mut params = vec![0.0; Mlp::param_count(1, 1, 2)];
    params[0] = 1.0; // w1
    params[2] = 1.0; // w2 to class 0
    let det = OodDetector {
        net: Mlp::from_params(1, 1, 2, params).unwrap(),
        seen_classes: vec![ClassId(0), ClassId(1)],
        loss_history: vec![],
    };
    let pool = Matrix::from_rows(&[vec![3.0], vec![0.2], vec![1.0]]).unwrap();
    assert_eq!(
        select_simulated_iter(&det, &pool, 2).unwrap().rows,
        vec![1, 2]
    );
    assert_eq!(select_simulated_iter(&det, &pool, 1).unwrap().rows, vec![1]);
    assert_eq!(
        select_simulated_iter(&det, &pool, 3).unwrap().rows,
        vec![0, 1, 2]
    );
    assert!(select_simulated_iter(&det, &pool, 0).is_err());
    assert!(select_simulated_iter(&det, &pool, 4).is_err());
}

fn semantic_fixture() -> (LabeledDataset, SemanticTable, ClassSpace) {
    // features are scaled attribute vectors, so the map is easy to learn
    let attrs = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 1.0, 0.0],
    ];
    let feats: Vec<Vec<f64>> = attrs[..3]
        .iter()
        .map(|a| a.iter().map(|v| 3.0 * v).collect())
        .collect();
    let (x, y) = blobs(&feats, 40, 0.2, 3);
    let seen = LabeledDataset::seen(x, y).unwrap();
    let sem = SemanticTable::new(Matrix::from_rows(&attrs).unwrap()).unwrap();
    let space =
        ClassSpace::new(vec![ClassId(0), ClassId(1), ClassId(2)], vec![ClassId(3)]).unwrap();
    (seen, sem, space)
}

#[test]
fn semantic_selection_rarely_picks_fitted_seen_rows() {
    let (seen, sem, space) = semantic_fixture();
    let cfg = small();
    let clf = train_semantic_classifier(&seen, &sem, &cfg, 9).unwrap();
    let seen_pool = seen.features().clone();
    let picked = semantic_selection(&clf, &seen_pool, &sem, &space, 0.0).unwrap();
    assert!(
        picked.len() as f64 <= 0.05 * seen_pool.rows() as f64,
        "{}",
        picked.len()
    );
}

#[test]
fn semantic_selection_follows_the_argmax_over_all_classes() {
    let (_, sem, space) = semantic_fixture();
    // F(x) = relu(x): the unseen class [1, 1, 0] wins strictly inside the 0-1 edge
    let mut params = vec![0.0; Mlp::param_count(3, 3, 3)];
    for i in 0..3 {
        params[i * 4] = 1.0;
        params[12 + i * 4] = 1.0;
    }
    let clf = SemanticClassifier {
        net: Mlp::from_params(3, 3, 3, params).unwrap(),
        unit_attributes: false,
    };
    let edge: Vec<Vec<f64>> = (0..=10)
        .map(|i| {
            let a = i as f64 / 10.0;
            vec![3.0 * a, 3.0 * (1.0 - a), 0.0]
        })
        .collect();
    let edge = Matrix::from_rows(&edge).unwrap();
    let picked = semantic_selection(&clf, &edge, &sem, &space, 0.0).unwrap();
    assert_eq!(picked.rows, (1..10).collect::<Vec<_>>());
    assert_eq!(picked.method, OodMethod::Semantic);
    // the margin is on probabilities: a huge margin removes every row
    assert!(semantic_selection(&clf, &edge, &sem, &space, 0.99)
        .unwrap()
        .rows
        .is_empty());
    // unit-length attributes drop the norm advantage of [1, 1, 0]: only rows within 1/sqrt(2) of the middle remain
    let unit = SemanticClassifier {
        unit_attributes: true,
        ..clf
    };
    assert_eq!(
        semantic_selection(&unit, &edge, &sem, &space, 0.0)
            .unwrap()
            .rows,
        (3..8).collect::<Vec<_>>()
    );
}

#[test]
fn empty_simulated_set_is_refused() {
    let (seen, _, _) = semantic_fixture();
    let err = train_ood_detector(&seen, &Matrix::zeros(0, 3), &small(), 1).unwrap_err();
    assert!(err.to_string().contains("max-softmax"));
}

#[test]
fn simulated_copy_of_seen_data_still_terminates() {
    let (seen, _, _) = semantic_fixture();
    let det = train_ood_detector(&seen, seen.features(), &small(), 2).unwrap();
    assert_eq!(det.loss_history.len(), small().epochs);
    assert_eq!(det.net.output_dim(), 3);
}

#[test]
fn ood_training_raises_entropy_on_simulated_rows() {
    let (seen, _, _) = semantic_fixture();
    let (sim, _) = blobs(&[vec![-3.0, -3.0, -3.0]], 40, 0.2, 8);
    let det = train_ood_detector(&seen, &sim, &small(), 3).unwrap();
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(det.scores(&sim)) > mean(det.scores(seen.features())));
}

proptest! {
    #[test]
    fn tnr_is_monotone_in_the_target(
        seen in prop::collection::vec(0.0f64..10.0, 1..80),
        unseen in prop::collection::vec(0.0f64..10.0, 1..80),
    ) {
        let c = tnr_at_fnr(&seen, &unseen, &DEFAULT_FNR_TARGETS).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[1].tnr >= w[0].tnr);
            prop_assert!(w[1].threshold <= w[0].threshold);
        }
        for p in &c.points {
            let above = seen.iter().filter(|&&s| s > p.threshold).count() as f64;
            prop_assert!(above / seen.len() as f64 <= p.fnr_target + 1e-9);
            prop_assert!((0.0..=1.0).contains(&p.tnr));
        }
    }
}
