//! Base zero-shot learners behind a common train/predict contract.
//!
//! * [`PrototypeConfig`] (model A): an MLP maps class attributes to visual
//!   prototypes; samples are classified by squared distance.
//! * [`GenerativeConfig`] (model B): a ridge map from attributes to class
//!   means plus a shared diagonal covariance synthesizes features for the
//!   target classes, then a softmax classifier is trained on them.
//! * [`CompatConfig`] (model C): a bilinear compatibility `xᵀ V e_y` fitted
//!   in closed form.

mod checkpoint;
mod compat;
mod generative;
mod prototype;

use std::any::Any;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader};
pub use compat::{CompatConfig, CompatModel};
pub use generative::{GenerativeConfig, GenerativeModel};
pub use prototype::{prototype_loss, PrototypeConfig, PrototypeModel};

use crate::datamodel::{ClassId, LabeledDataset, SemanticTable};
use crate::error::{Error, Result};
use crate::numeric::{Matrix, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Prototype,
    Generative,
    Compat,
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::Prototype => "prototype",
            Architecture::Generative => "generative",
            Architecture::Compat => "compat",
        })
    }
}

/// Everything a learner needs for one training run.
#[derive(Clone, Copy)]
pub struct FitJob<'a> {
    pub data: &'a LabeledDataset,
    pub semantics: &'a SemanticTable,
    /// The classes the trained model must be able to predict.
    pub classes: &'a [ClassId],
    pub seed: u64,
    /// Previous model of the same learner, for warm starts.
    pub warm_start: Option<&'a dyn ZslModel>,
}

impl<'a> FitJob<'a> {
    pub fn new(
        data: &'a LabeledDataset,
        semantics: &'a SemanticTable,
        classes: &'a [ClassId],
        seed: u64,
    ) -> Self {
        Self {
            data,
            semantics,
            classes,
            seed,
            warm_start: None,
        }
    }
}

/// A trainable base learner.
pub trait BaseLearner: Send + Sync + fmt::Debug {
    fn arch(&self) -> Architecture;

    fn fit(&self, job: FitJob<'_>) -> Result<Box<dyn ZslModel>>;
}

/// A trained model that scores feature rows over a class list.
pub trait ZslModel: Send + Sync + fmt::Debug {
    fn arch(&self) -> Architecture;

    /// One probability vector per row of `x`, ordered like `classes`.
    fn predict_proba(&self, x: &Matrix, classes: &[ClassId]) -> Result<Vec<ProbVector>>;

    fn checkpoint(&self) -> Checkpoint;

    fn as_any(&self) -> &dyn Any;
}

/// Uniform dispatch over any trained learner.
pub fn predict(model: &dyn ZslModel, x: &Matrix, classes: &[ClassId]) -> Result<Vec<ProbVector>> {
    if classes.is_empty() {
        return Err(Error::InvalidInput(
            "cannot predict over an empty class list".into(),
        ));
    }
    model.predict_proba(x, classes)
}

/// Hard labels from probability rows.
pub fn hard_labels(probs: &[ProbVector], classes: &[ClassId]) -> Vec<ClassId> {
    probs.iter().map(|p| classes[p.argmax()]).collect()
}

/// Serializable learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "kebab-case")]
pub enum LearnerSpec {
    Prototype(PrototypeConfig),
    Generative(GenerativeConfig),
    Compat(CompatConfig),
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Prototype(c) => c.validate(),
            LearnerSpec::Generative(c) => c.validate(),
            LearnerSpec::Compat(c) => c.validate(),
        }
    }

    fn inner(&self) -> &dyn BaseLearner {
        match self {
            LearnerSpec::Prototype(c) => c,
            LearnerSpec::Generative(c) => c,
            LearnerSpec::Compat(c) => c,
        }
    }
}

impl BaseLearner for LearnerSpec {
    fn arch(&self) -> Architecture {
        self.inner().arch()
    }

    fn fit(&self, job: FitJob<'_>) -> Result<Box<dyn ZslModel>> {
        self.inner().fit(job)
    }
}

/// Checks shared fit preconditions.
pub(crate) fn check_job(job: &FitJob<'_>) -> Result<()> {
    if job.classes.is_empty() {
        return Err(Error::InvalidInput("no target classes".into()));
    }
    job.semantics.check_covers(job.classes)?;
    job.semantics.check_covers(&job.data.classes())?;
    Ok(())
}

/// Positions of `wanted` inside `known`, or an error naming the first
/// class the model cannot score.
pub(crate) fn class_positions(known: &[ClassId], wanted: &[ClassId]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|c| {
            known.iter().position(|k| k == c).ok_or_else(|| {
                Error::InvalidInput(format!("model was not trained to predict class {c}"))
            })
        })
        .collect()
}

/// Row-normalizes to unit L2 norm (zero rows are left unchanged).
pub(crate) fn l2_normalize_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Aborts when a loss has grown past ten times its starting value.
pub(crate) fn divergence_guard(what: &str, initial: f64, current: f64) -> Result<()> {
    if !current.is_finite() || current > 10.0 * initial.max(1e-12) {
        return Err(Error::Divergence(format!(
            "{what} loss rose from {initial:.6} to {current:.6}"
        )));
    }
    Ok(())
}
