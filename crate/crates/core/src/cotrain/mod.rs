//! Iterative co-training: learners trained on seen data pseudo-label an
//! unlabeled pool, swap class-balanced samples of their labels, retrain on
//! seen plus received rows with a budget that grows each iteration, and
//! finally fuse their predictions.

mod exec;
mod select;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use exec::{derive_seed, Executor};
pub use select::{
    apr, apr_vs_pair, budget, exchange, fuse_predictions, incremental_select, sample_balanced,
    select_candidates, ExchangePolicy, FusionWeights, SelectionMode,
};

use crate::basemodels::{hard_labels, predict, BaseLearner, FitJob, LearnerSpec, ZslModel};
use crate::datamodel::{
    merge_train_set, ClassId, ClassSpace, LabeledDataset, PseudoLabeledSet, SemanticTable,
    UnlabeledPool,
};
use crate::error::{Error, Result};
use crate::numeric::ProbVector;
use crate::report::per_class_acc;

/// One learner in a co-training roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerEntry {
    pub name: String,
    /// RNG stream tag; defaults to `name`. Two entries sharing a stream
    /// and spec train identically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
    #[serde(flatten)]
    pub spec: LearnerSpec,
}

impl LearnerEntry {
    pub fn new(name: impl Into<String>, spec: LearnerSpec) -> Self {
        Self {
            name: name.into(),
            stream: None,
            spec,
        }
    }

    pub fn stream(&self) -> &str {
        self.stream.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoTrainConfig {
    /// Number of co-training iterations `T`.
    pub iterations: usize,
    pub policy: ExchangePolicy,
    /// Fusion weights; `[0.5, 0.5]` for two learners, uniform otherwise.
    pub fusion: Option<FusionWeights>,
    pub mode: SelectionMode,
    /// Start each retraining from the learner's previous parameters.
    pub warm_start: bool,
}

impl Default for CoTrainConfig {
    fn default() -> Self {
        Self {
            iterations: 8,
            policy: ExchangePolicy::Cross,
            fusion: None,
            mode: SelectionMode::Incremental,
            warm_start: false,
        }
    }
}

impl CoTrainConfig {
    pub fn validate(&self, learners: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        self.policy.check_arity(learners)?;
        if let Some(w) = &self.fusion {
            if w.len() != learners {
                return Err(Error::Config(format!(
                    "{} fusion weights for {learners} learners",
                    w.len()
                )));
            }
        }
        Ok(())
    }

    pub fn weights(&self, learners: usize) -> Result<FusionWeights> {
        match &self.fusion {
            Some(w) => Ok(w.clone()),
            None if learners == 2 => FusionWeights::alpha(0.5),
            None => FusionWeights::uniform(learners),
        }
    }
}

/// Inputs shared by every co-training run.
#[derive(Clone, Copy)]
pub struct CoTrainProblem<'a> {
    pub seen: &'a LabeledDataset,
    pub pool: &'a UnlabeledPool,
    pub semantics: &'a SemanticTable,
    pub space: &'a ClassSpace,
    /// Ground truth of the pool, used only for reporting.
    pub truth: Option<&'a [ClassId]>,
}

/// Per-iteration summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 for the seen-only initialization, then 1..=T.
    pub t: usize,
    pub train_size: Vec<usize>,
    /// Per-learner ACC on the pool (percent), when truth is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_acc: Option<f64>,
    /// APR between the first two learners over unseen-truth rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apr: Option<f64>,
    /// Per-learner count of rows predicted as seen / unseen (GZSL only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_seen: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_unseen: Option<Vec<usize>>,
}

/// History as JSON lines.
pub fn history_jsonl(history: &[IterationRecord]) -> Result<String> {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub struct CoTrainOutcome {
    /// Class list every probability vector is ordered by.
    pub classes: Vec<ClassId>,
    /// Fused final label per pool row.
    pub labels: Vec<ClassId>,
    /// Final per-learner predictions.
    pub final_probs: Vec<Vec<ProbVector>>,
    /// Seen-only (inductive) labels per learner.
    pub initial_labels: Vec<Vec<ClassId>>,
    pub history: Vec<IterationRecord>,
    pub models: Vec<Box<dyn ZslModel>>,
}

impl std::fmt::Debug for CoTrainOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoTrainOutcome")
            .field("classes", &self.classes)
            .field("labels", &self.labels.len())
            .field("history", &self.history)
            .finish()
    }
}

impl CoTrainOutcome {
    /// Fuses the final predictions again with other weights.
    pub fn refuse(&self, weights: &FusionWeights) -> Result<Vec<ClassId>> {
        fuse_predictions(&self.final_probs, weights, &self.classes)
    }

    pub fn final_labels(&self, learner: usize) -> Vec<ClassId> {
        hard_labels(&self.final_probs[learner], &self.classes)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Domain {
    Zsl,
    Gzsl,
}

/// Co-training over an unseen-only pool; predictions span `Y^U`.
pub fn icot_zsl_run(
    learners: &[LearnerEntry],
    problem: CoTrainProblem<'_>,
    config: &CoTrainConfig,
    seed: u64,
    exec: &Executor,
) -> Result<CoTrainOutcome> {
    run(learners, problem, config, seed, exec, Domain::Zsl)
}

/// Co-training over a mixed pool; predictions span all classes and only
/// rows pseudo-labeled as unseen are exchanged.
pub fn icot_gzsl_run(
    learners: &[LearnerEntry],
    problem: CoTrainProblem<'_>,
    config: &CoTrainConfig,
    seed: u64,
    exec: &Executor,
) -> Result<CoTrainOutcome> {
    run(learners, problem, config, seed, exec, Domain::Gzsl)
}

fn run(
    learners: &[LearnerEntry],
    problem: CoTrainProblem<'_>,
    config: &CoTrainConfig,
    seed: u64,
    exec: &Executor,
    domain: Domain,
) -> Result<CoTrainOutcome> {
    if learners.is_empty() {
        return Err(Error::Config(
            "co-training needs at least one learner".into(),
        ));
    }
    config.validate(learners.len())?;
    for l in learners {
        l.spec.validate()?;
    }
    let weights = config.weights(learners.len())?;
    let pool = problem.pool;
    if pool.is_empty() {
        return Err(Error::InvalidInput("the unlabeled pool is empty".into()));
    }
    if let Some(t) = problem.truth {
        if t.len() != pool.len() {
            return Err(Error::Shape(format!(
                "{} truths for a pool of {}",
                t.len(),
                pool.len()
            )));
        }
    }
    problem.seen.check_labels(problem.space)?;
    let mut classes = match domain {
        Domain::Zsl => problem.space.unseen().to_vec(),
        Domain::Gzsl => problem.space.all(),
    };
    classes.sort();
    let big_t = config.iterations;

    let fit_all = |t: usize,
                   sets: &[PseudoLabeledSet],
                   prev: &[Box<dyn ZslModel>]|
     -> Result<Vec<Box<dyn ZslModel>>> {
        let jobs: Vec<usize> = (0..learners.len()).collect();
        exec.map(jobs, |i| {
            let entry = &learners[i];
            let data = merge_train_set(problem.seen, &sets[i], pool)?;
            let mut job = FitJob::new(
                &data,
                problem.semantics,
                &classes,
                derive_seed(seed, entry.stream(), t, "fit"),
            );
            if config.warm_start {
                job.warm_start = prev.get(i).map(|m| m.as_ref());
            }
            entry.spec.fit(job)
        })
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| e.context(format!("iteration {t}, learner {:?}", learners[i].name)))
        })
        .collect()
    };
    let predict_all = |models: &[Box<dyn ZslModel>]| -> Result<Vec<Vec<ProbVector>>> {
        models
            .iter()
            .map(|m| predict(m.as_ref(), pool.features(), &classes))
            .collect()
    };
    let select_next = |t_next: usize, labels: &[Vec<ClassId>]| -> Result<Vec<PseudoLabeledSet>> {
        let offered: Vec<Vec<(usize, ClassId)>> = labels
            .iter()
            .map(|l| {
                l.iter()
                    .copied()
                    .enumerate()
                    .filter(|&(_, c)| domain == Domain::Zsl || problem.space.is_unseen(c))
                    .collect()
            })
            .collect();
        let received = exchange(&offered, labels, &config.policy)?;
        received
            .iter()
            .enumerate()
            .map(|(i, cands)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    seed,
                    learners[i].stream(),
                    t_next,
                    "select",
                ));
                select_candidates(cands, t_next, big_t, config.mode, i, &mut rng)
            })
            .collect()
    };
    let record = |t: usize,
                  sets: &[PseudoLabeledSet],
                  probs: &[Vec<ProbVector>],
                  labels: &[Vec<ClassId>]|
     -> Result<IterationRecord> {
        let mut rec = IterationRecord {
            t,
            train_size: sets.iter().map(|s| problem.seen.len() + s.len()).collect(),
            acc: None,
            fused_acc: None,
            apr: None,
            predicted_seen: None,
            predicted_unseen: None,
        };
        if domain == Domain::Gzsl {
            let unseen: Vec<usize> = labels
                .iter()
                .map(|l| l.iter().filter(|c| problem.space.is_unseen(**c)).count())
                .collect();
            rec.predicted_seen = Some(unseen.iter().map(|u| pool.len() - u).collect());
            rec.predicted_unseen = Some(unseen);
        }
        if let Some(truth) = problem.truth {
            let acc = |p: &[ClassId]| per_class_acc(p, truth, &classes).map(|a| a.mean);
            rec.acc = Some(labels.iter().map(|l| acc(l)).collect::<Result<_>>()?);
            rec.fused_acc = Some(acc(&fuse_predictions(probs, &weights, &classes)?)?);
            if labels.len() >= 2 && truth.iter().any(|c| problem.space.is_unseen(*c)) {
                rec.apr = Some(apr(&labels[0], &labels[1], truth, problem.space.unseen())?);
            }
        }
        Ok(rec)
    };

    let empty: Vec<PseudoLabeledSet> = (0..learners.len())
        .map(|i| PseudoLabeledSet::empty(i, 0))
        .collect();
    let mut models = fit_all(0, &empty, &[])?;
    let mut probs = predict_all(&models)?;
    let mut labels: Vec<Vec<ClassId>> = probs.iter().map(|p| hard_labels(p, &classes)).collect();
    let initial_labels = labels.clone();
    let mut history = vec![record(0, &empty, &probs, &labels)?];
    let mut sets = select_next(1, &labels)?;
    for t in 1..=big_t {
        models = fit_all(t, &sets, &models)?;
        probs = predict_all(&models)?;
        labels = probs.iter().map(|p| hard_labels(p, &classes)).collect();
        history.push(record(t, &sets, &probs, &labels)?);
        log::info!("co-training iteration {t}/{big_t} done");
        if t < big_t {
            sets = select_next((t + 1).min(big_t), &labels)?;
        }
    }
    let fused = fuse_predictions(&probs, &weights, &classes)?;
    Ok(CoTrainOutcome {
        classes,
        labels: fused,
        final_probs: probs,
        initial_labels,
        history,
        models,
    })
}
