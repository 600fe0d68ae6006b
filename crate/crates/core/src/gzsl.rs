//! Generalized zero-shot pipelines.
//!
//! `plain_gzsl_run` co-trains over all classes on the compound pool. The two
//! two-stage pipelines first gate the pool with an OOD detector: gated rows
//! are labeled by zero-shot co-training over the unseen classes, the rest by
//! a seen-class classifier (setting 1) or by GZSL co-training (setting 2).

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::cotrain::icot_gzsl_run;
use crate::cotrain::{
    derive_seed, icot_zsl_run, CoTrainConfig, CoTrainProblem, Executor, IterationRecord,
    LearnerEntry,
};
use crate::datamodel::{ClassId, ClassSpace, LabeledDataset, SemanticTable, UnlabeledPool};
use crate::error::{Error, Result};
use crate::oodgate::{
    calibrate_threshold, select_simulated_semantic, train_ood_detector, OodConfig, OodDetector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    GatedUnseen,
    Remaining,
}

impl std::fmt::Display for Route {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Route::GatedUnseen => "gated-unseen",
            Route::Remaining => "remaining",
        })
    }
}

/// One label and one route per compound-pool row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GzslPrediction {
    pub labels: Vec<ClassId>,
    pub routes: Vec<Route>,
}

impl GzslPrediction {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gated_rows(&self) -> Vec<usize> {
        (0..self.routes.len())
            .filter(|&i| self.routes[i] == Route::GatedUnseen)
            .collect()
    }

    /// Checks that gated rows carry unseen-class labels only.
    pub fn check(&self, space: &ClassSpace) -> Result<()> {
        if self.labels.len() != self.routes.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} routes",
                self.labels.len(),
                self.routes.len()
            )));
        }
        for (i, (l, r)) in self.labels.iter().zip(&self.routes).enumerate() {
            if !space.contains(*l) {
                return Err(Error::InvalidInput(format!(
                    "row {i}: label {l} is outside the class space"
                )));
            }
            if *r == Route::GatedUnseen && !space.is_unseen(*l) {
                return Err(Error::InvalidInput(format!(
                    "row {i}: gated row carries seen label {l}"
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("row_index,predicted_class,route\n");
        for (i, (l, r)) in self.labels.iter().zip(&self.routes).enumerate() {
            out.push_str(&format!("{i},{},{r}\n", l.0));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GzslConfig {
    pub cotrain: CoTrainConfig,
    pub ood: OodConfig,
    /// Fraction of seen calibration rows allowed above the gate threshold.
    pub gate_fnr: f64,
    /// Fraction of each seen class held out of gate training and used to
    /// calibrate its threshold. Zero calibrates on the training rows.
    pub gate_holdout: f64,
    /// Train the GZSL branch of setting 2 on every compound row instead of
    /// the rows left after gating.
    pub gzsl_on_all_rows: bool,
}

impl Default for GzslConfig {
    fn default() -> Self {
        Self {
            cotrain: CoTrainConfig::default(),
            ood: OodConfig::default(),
            gate_fnr: 0.05,
            gate_holdout: 0.2,
            gzsl_on_all_rows: false,
        }
    }
}

impl GzslConfig {
    pub fn validate(&self, learners: usize) -> Result<()> {
        self.cotrain.validate(learners)?;
        self.ood.validate()?;
        if !(self.gate_fnr > 0.0 && self.gate_fnr < 1.0) {
            return Err(Error::Config(format!(
                "gate_fnr must be in (0, 1), got {}",
                self.gate_fnr
            )));
        }
        if !(0.0..1.0).contains(&self.gate_holdout) {
            return Err(Error::Config(format!(
                "gate_holdout must be in [0, 1), got {}",
                self.gate_holdout
            )));
        }
        Ok(())
    }
}

/// Inputs shared by the GZSL pipelines. `truth`, when present, only feeds
/// the co-training histories.
#[derive(Debug, Clone, Copy)]
pub struct GzslProblem<'a> {
    pub seen: &'a LabeledDataset,
    pub compound: &'a UnlabeledPool,
    pub semantics: &'a SemanticTable,
    pub space: &'a ClassSpace,
    pub truth: Option<&'a [ClassId]>,
}

#[derive(Debug, Clone)]
pub struct GzslOutcome {
    pub prediction: GzslPrediction,
    pub zsl_history: Vec<IterationRecord>,
    pub gzsl_history: Vec<IterationRecord>,
    /// Size of the simulated unseen set used to train the gate.
    pub simulated: Option<usize>,
    pub threshold: Option<f64>,
}

fn subproblem<'a>(
    p: &GzslProblem<'a>,
    pool: &'a UnlabeledPool,
    truth: Option<&'a [ClassId]>,
) -> CoTrainProblem<'a> {
    CoTrainProblem {
        seen: p.seen,
        pool,
        semantics: p.semantics,
        space: p.space,
        truth,
    }
}

/// Splits the seen rows into (gate training, calibration). Each class keeps
/// at least one training row and, when `fraction > 0`, gives at least one
/// calibration row.
pub fn calibration_split(
    seen: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if fraction == 0.0 {
        return Ok((seen.clone(), seen.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fit, mut hold) = (vec![], vec![]);
    for c in seen.classes() {
        let mut rows: Vec<usize> = (0..seen.len()).filter(|&i| seen.labels()[i] == c).collect();
        if rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "class {c} needs two rows to hold one out for calibration"
            )));
        }
        rows.shuffle(&mut rng);
        let k = ((rows.len() as f64 * fraction).round() as usize).clamp(1, rows.len() - 1);
        hold.extend_from_slice(&rows[..k]);
        fit.extend_from_slice(&rows[k..]);
    }
    fit.sort_unstable();
    hold.sort_unstable();
    let part = |rows: &[usize]| {
        LabeledDataset::seen(
            seen.features().select_rows(rows),
            rows.iter().map(|&i| seen.labels()[i]).collect(),
        )
    };
    Ok((part(&fit)?, part(&hold)?))
}

fn gate_rows(
    detector: &OodDetector,
    calib: &LabeledDataset,
    pool: &UnlabeledPool,
    fnr: f64,
) -> Result<(f64, Vec<usize>)> {
    let theta = calibrate_threshold(&detector.scores(calib.features()), fnr)?;
    let scores = detector.scores(pool.features());
    Ok((
        theta,
        (0..scores.len()).filter(|&i| scores[i] > theta).collect(),
    ))
}

fn complement(n: usize, rows: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    for &r in rows {
        keep[r] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

fn sub_truth(truth: Option<&[ClassId]>, rows: &[usize]) -> Option<Vec<ClassId>> {
    truth.map(|t| rows.iter().map(|&r| t[r]).collect())
}

/// Co-training over all classes on the whole compound pool.
pub fn plain_gzsl_run(
    learners: &[LearnerEntry],
    problem: GzslProblem<'_>,
    config: &GzslConfig,
    seed: u64,
    exec: &Executor,
) -> Result<GzslOutcome> {
    let out = icot_gzsl_run(
        learners,
        subproblem(&problem, problem.compound, problem.truth),
        &config.cotrain,
        seed,
        exec,
    )?;
    Ok(GzslOutcome {
        prediction: GzslPrediction {
            routes: vec![Route::Remaining; out.labels.len()],
            labels: out.labels,
        },
        zsl_history: vec![],
        gzsl_history: out.history,
        simulated: None,
        threshold: None,
    })
}

/// Setting 1: the real unseen pool is available at training time and serves
/// as the simulated unseen set of the detector. Rows left after gating are
/// labeled by the detector's seen-class head.
pub fn two_stage_ood_run(
    learners: &[LearnerEntry],
    problem: GzslProblem<'_>,
    unseen_pool: &UnlabeledPool,
    config: &GzslConfig,
    seed: u64,
    exec: &Executor,
) -> Result<GzslOutcome> {
    config.validate(learners.len())?;
    let n = problem.compound.len();
    let (fit, calib) = calibration_split(
        problem.seen,
        config.gate_holdout,
        derive_seed(seed, "gate", 0, "calibrate"),
    )?;
    let detector = train_ood_detector(
        &fit,
        unseen_pool.features(),
        &config.ood,
        derive_seed(seed, "gate", 0, "fit"),
    )?;
    let (theta, gated) = gate_rows(&detector, &calib, problem.compound, config.gate_fnr)?;
    let mut labels = detector.classify(problem.compound.features());
    let mut routes = vec![Route::Remaining; n];
    let mut zsl_history = vec![];
    if gated.is_empty() {
        warn!("the gate passed no rows; every row goes to the seen-class classifier");
    } else {
        let pool = problem
            .compound
            .subset(&gated)
            .expect("gated rows are in range");
        let truth = sub_truth(problem.truth, &gated)
            .filter(|t| t.iter().all(|c| problem.space.is_unseen(*c)));
        let out = icot_zsl_run(
            learners,
            subproblem(&problem, &pool, truth.as_deref()),
            &config.cotrain,
            seed,
            exec,
        )?;
        for (&r, l) in gated.iter().zip(out.labels) {
            labels[r] = l;
            routes[r] = Route::GatedUnseen;
        }
        zsl_history = out.history;
    }
    let prediction = GzslPrediction { labels, routes };
    prediction.check(problem.space)?;
    Ok(GzslOutcome {
        prediction,
        zsl_history,
        gzsl_history: vec![],
        simulated: Some(unseen_pool.len()),
        threshold: Some(theta),
    })
}

/// Setting 2: only the compound pool is available. A semantic selection
/// trains the gate; gated rows get zero-shot co-training and the remaining
/// rows GZSL co-training.
pub fn two_stage_sod_run(
    learners: &[LearnerEntry],
    problem: GzslProblem<'_>,
    config: &GzslConfig,
    seed: u64,
    exec: &Executor,
) -> Result<GzslOutcome> {
    config.validate(learners.len())?;
    let n = problem.compound.len();
    let x = problem.compound.features();
    let gate_seed = derive_seed(seed, "gate", 0, "fit");
    let sim = select_simulated_semantic(
        problem.seen,
        x,
        problem.semantics,
        problem.space,
        &config.ood,
        gate_seed ^ 0x5e,
    )?;
    let (gated, threshold) = if sim.is_empty() {
        warn!("semantic selection found no unseen rows; the whole pool goes to GZSL co-training");
        (vec![], None)
    } else {
        let (fit, calib) = calibration_split(
            problem.seen,
            config.gate_holdout,
            derive_seed(seed, "gate", 0, "calibrate"),
        )?;
        let detector = train_ood_detector(&fit, &x.select_rows(&sim.rows), &config.ood, gate_seed)?;
        let (theta, gated) = gate_rows(&detector, &calib, problem.compound, config.gate_fnr)?;
        (gated, Some(theta))
    };
    let remaining = complement(n, &gated);

    let mut labels = vec![ClassId(u32::MAX); n];
    let mut routes = vec![Route::Remaining; n];
    let mut zsl_history = vec![];
    let mut gzsl_history = vec![];
    if !gated.is_empty() {
        let pool = problem
            .compound
            .subset(&gated)
            .expect("gated rows are in range");
        let truth = sub_truth(problem.truth, &gated)
            .filter(|t| t.iter().all(|c| problem.space.is_unseen(*c)));
        let out = icot_zsl_run(
            learners,
            subproblem(&problem, &pool, truth.as_deref()),
            &config.cotrain,
            seed,
            exec,
        )?;
        for (&r, l) in gated.iter().zip(out.labels) {
            labels[r] = l;
            routes[r] = Route::GatedUnseen;
        }
        zsl_history = out.history;
    }
    if !remaining.is_empty() {
        let train_rows: Vec<usize> = if config.gzsl_on_all_rows {
            (0..n).collect()
        } else {
            remaining.clone()
        };
        let pool = problem
            .compound
            .subset(&train_rows)
            .expect("rows are in range");
        let truth = sub_truth(problem.truth, &train_rows);
        let out = icot_gzsl_run(
            learners,
            subproblem(&problem, &pool, truth.as_deref()),
            &config.cotrain,
            seed,
            exec,
        )?;
        if config.gzsl_on_all_rows {
            for &r in &remaining {
                labels[r] = out.labels[r];
            }
        } else {
            for (&r, l) in remaining.iter().zip(out.labels) {
                labels[r] = l;
            }
        }
        gzsl_history = out.history;
    }
    let prediction = GzslPrediction { labels, routes };
    prediction.check(problem.space)?;
    Ok(GzslOutcome {
        prediction,
        zsl_history,
        gzsl_history,
        simulated: Some(sim.len()),
        threshold,
    })
}
