//! Built-in gradient checks and metric oracles.
//!
//! Each check compares a library routine with an independent computation on
//! seeded random instances.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basemodels::prototype_loss;
use crate::cotrain::{apr, fuse_predictions, incremental_select, FusionWeights};
use crate::datamodel::ClassId;
use crate::numeric::{grad_check, kl_to_uniform, Matrix, Mlp, ProbVector};
use crate::oodgate::{detector_loss, semantic_loss};
use crate::report::harmonic_mean;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .expect("shape")
}

fn random_probs(k: usize, rng: &mut ChaCha8Rng) -> ProbVector {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
    let s: f64 = raw.iter().sum();
    ProbVector::new(raw.into_iter().map(|v| v / s).collect()).expect("normalized")
}

const GRAD_TOL: f64 = 1e-4;
const INITS: u64 = 10;

/// Worst relative gradient error of `loss` over ten random networks.
fn worst_grad_error(
    seed: u64,
    (i, h, o): (usize, usize, usize),
    loss: impl Fn(&Mlp, &mut ChaCha8Rng) -> Box<dyn Fn(&[f64]) -> (f64, Vec<f64>)>,
) -> f64 {
    (0..INITS)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + k);
            let net = Mlp::new(i, h, o, &mut rng).expect("widths");
            let f = loss(&net, &mut rng);
            grad_check(f, net.params(), 1e-5).unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max)
}

/// Gradient checks for the three hand-differentiated losses plus the KL
/// identities.
pub fn numerical_checks() -> Vec<Check> {
    let mut out = vec![];
    let proto = worst_grad_error(100, (4, 8, 5), |_, rng| {
        let attrs = random_matrix(3, 4, rng);
        let x = random_matrix(7, 5, rng);
        let slot: Vec<usize> = (0..7).map(|_| rng.random_range(0..3)).collect();
        Box::new(move |p: &[f64]| {
            prototype_loss(
                &Mlp::from_params(4, 8, 5, p.to_vec()).expect("params"),
                &attrs,
                &x,
                &slot,
                1e-3,
            )
        })
    });
    out.push(Check::new(
        "grad_check prototype loss",
        proto <= GRAD_TOL,
        format!("max rel err {proto:.2e}"),
    ));

    let det = worst_grad_error(200, (5, 8, 4), |_, rng| {
        let xs = random_matrix(6, 5, rng);
        let xu = random_matrix(4, 5, rng);
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
        Box::new(move |p: &[f64]| {
            detector_loss(
                &Mlp::from_params(5, 8, 4, p.to_vec()).expect("params"),
                &xs,
                &y,
                &xu,
            )
        })
    });
    out.push(Check::new(
        "grad_check detector loss",
        det <= GRAD_TOL,
        format!("max rel err {det:.2e}"),
    ));

    let sem = worst_grad_error(300, (5, 8, 3), |_, rng| {
        let x = random_matrix(6, 5, rng);
        let attrs = random_matrix(4, 3, rng);
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
        Box::new(move |p: &[f64]| {
            semantic_loss(
                &Mlp::from_params(5, 8, 3, p.to_vec()).expect("params"),
                &x,
                &y,
                &attrs,
            )
        })
    });
    out.push(Check::new(
        "grad_check semantic loss",
        sem <= GRAD_TOL,
        format!("max rel err {sem:.2e}"),
    ));

    let mut one_hot = vec![0.0; 10];
    one_hot[3] = 1.0;
    let kl1 = kl_to_uniform(&ProbVector::new(one_hot).expect("valid")).unwrap_or(f64::NAN);
    let kl0 = kl_to_uniform(&ProbVector::uniform(10).expect("valid")).unwrap_or(f64::NAN);
    out.push(Check::new(
        "kl_to_uniform identities",
        (kl1 - 10f64.ln()).abs() <= 1e-9 && kl0.abs() <= 1e-12,
        format!("one-hot {kl1:.12}, uniform {kl0:e}"),
    ));
    out
}

/// Metric and selection oracles.
pub fn metric_oracles() -> Vec<Check> {
    let mut out = vec![];
    let h = harmonic_mean(81.8, 84.8);
    out.push(Check::new(
        "harmonic_mean published rows",
        (h - 83.3).abs() <= 0.05 && harmonic_mean(74.6, 74.6) == 74.6,
        format!("H(81.8, 84.8) = {h:.4}"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let worst = (0..1000)
        .map(|_| {
            let (s, u) = (rng.random_range(0.01..100.0), rng.random_range(0.01..100.0));
            let h: f64 = harmonic_mean(s, u);
            // 1/H is the mean of 1/S and 1/U
            (1.0 / (0.5 * (1.0 / s + 1.0 / u)) - h).abs()
        })
        .fold(0.0, f64::max);
    out.push(Check::new(
        "harmonic_mean recomputation",
        worst <= 1e-9,
        format!("max deviation {worst:.1e}"),
    ));

    let mut bad = vec![];
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    for m in 1..=50usize {
        let labels: Vec<ClassId> = (0..m).map(|i| ClassId((i % 3) as u32)).collect();
        for big_t in 1..=10usize {
            for t in 1..=big_t {
                let got = incremental_select(&labels, t, big_t, &mut rng).map(|s| s.len());
                if got.as_ref().ok() != Some(&(m * t / big_t)) {
                    bad.push(format!("M={m} T={big_t} t={t}: {got:?}"));
                }
            }
        }
    }
    out.push(Check::new(
        "incremental_select budget grid",
        bad.is_empty(),
        bad.first()
            .cloned()
            .unwrap_or_else(|| "all sizes match".into()),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let classes: Vec<ClassId> = (0..5).map(ClassId).collect();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let learners = rng.random_range(2..=4);
        let rows = rng.random_range(1..6);
        let probs: Vec<Vec<ProbVector>> = (0..learners)
            .map(|_| (0..rows).map(|_| random_probs(5, &mut rng)).collect())
            .collect();
        let w: Vec<f64> = (0..learners).map(|_| rng.random_range(0.05..1.0)).collect();
        let got = fuse_predictions(
            &probs,
            &FusionWeights::new(w.clone()).expect("positive"),
            &classes,
        );
        let expect: Vec<ClassId> = (0..rows)
            .map(|r| {
                let mut best = (f64::NEG_INFINITY, ClassId(0));
                for (ci, c) in classes.iter().enumerate() {
                    let score: f64 = (0..learners)
                        .map(|i| w[i] * probs[i][r].as_slice()[ci])
                        .sum();
                    if score > best.0 {
                        best = (score, *c);
                    }
                }
                best.1
            })
            .collect();
        if got.ok() != Some(expect) {
            mismatches += 1;
        }
    }
    out.push(Check::new(
        "fuse_predictions brute force",
        mismatches == 0,
        format!("{mismatches} mismatches in 1000"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut failures = 0;
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let k = rng.random_range(1..6u32);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<ClassId> {
            (0..n).map(|_| ClassId(rng.random_range(0..k))).collect()
        };
        let (a, b, t) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let classes: Vec<ClassId> = (0..k).map(ClassId).collect();
        let mut per: BTreeMap<ClassId, Vec<bool>> = BTreeMap::new();
        for i in 0..n {
            per.entry(t[i]).or_default().push(a[i] != b[i]);
        }
        let oracle = per
            .values()
            .map(|v| v.iter().filter(|&&d| d).count() as f64 / v.len() as f64)
            .sum::<f64>()
            / per.len() as f64;
        let ab = apr(&a, &b, &t, &classes).unwrap_or(f64::NAN);
        let ba = apr(&b, &a, &t, &classes).unwrap_or(f64::NAN);
        if (ab - oracle).abs() > 1e-12 || ab != ba || !(0.0..=1.0).contains(&ab) {
            failures += 1;
        }
    }
    out.push(Check::new(
        "apr tally oracle",
        failures == 0,
        format!("{failures} failures in 200"),
    ));
    out
}

pub fn run_all() -> Vec<Check> {
    let mut all = numerical_checks();
    all.extend(metric_oracles());
    all
}
