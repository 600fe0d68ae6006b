use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassId, ClassSpace};
use crate::error::{Error, Result};

/// Per-class top-1 accuracy in percent and its unweighted mean.
///
/// Classes of `classes` with no rows are absent from `per_class`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub per_class: BTreeMap<ClassId, f64>,
    pub mean: f64,
}

pub fn per_class_acc(
    preds: &[ClassId],
    truths: &[ClassId],
    classes: &[ClassId],
) -> Result<ClassAccuracy> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let mut tally: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for (p, t) in preds.iter().zip(truths) {
        if !classes.contains(t) {
            return Err(Error::InvalidInput(format!(
                "true class {t} is not in the evaluated class list"
            )));
        }
        let e = tally.entry(*t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    if tally.is_empty() {
        return Err(Error::InvalidInput("no rows to evaluate".into()));
    }
    let per_class: BTreeMap<ClassId, f64> = tally
        .into_iter()
        .map(|(c, (hit, n))| (c, 100.0 * hit as f64 / n as f64))
        .collect();
    let mean = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(ClassAccuracy { per_class, mean })
}

/// `2SU/(S+U)`, or 0 when both are 0.
pub fn harmonic_mean(acc_seen: f64, acc_unseen: f64) -> f64 {
    let s = acc_seen + acc_unseen;
    if s == 0.0 {
        0.0
    } else {
        2.0 * acc_seen * acc_unseen / s
    }
}

/// Unseen accuracy `U`, seen accuracy `S` and their harmonic mean `H`,
/// with predictions ranging over every class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GzslScores {
    #[serde(rename = "U")]
    pub unseen: f64,
    #[serde(rename = "S")]
    pub seen: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

pub fn gzsl_scores(
    preds: &[ClassId],
    truths: &[ClassId],
    space: &ClassSpace,
) -> Result<GzslScores> {
    if preds.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            preds.len(),
            truths.len()
        )));
    }
    let part = |keep: &[ClassId]| -> Result<f64> {
        let (p, t): (Vec<ClassId>, Vec<ClassId>) = preds
            .iter()
            .zip(truths)
            .filter(|(_, t)| keep.contains(t))
            .map(|(p, t)| (*p, *t))
            .unzip();
        Ok(per_class_acc(&p, &t, keep)?.mean)
    };
    let unseen = part(space.unseen())?;
    let seen = part(space.seen())?;
    Ok(GzslScores {
        unseen,
        seen,
        h: harmonic_mean(seen, unseen),
    })
}
