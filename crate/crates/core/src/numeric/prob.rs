//! Probability vectors and the classification losses built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-sum constraint of a [`ProbVector`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Floor applied to the target probability inside [`cross_entropy`].
pub const LOG_FLOOR: f64 = 1e-12;

/// A discrete distribution over some ordered class list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("empty probability vector".into()));
        }
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(format!(
                "probabilities must lie in [0, 1]: {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self(values))
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidInput("uniform over zero classes".into()));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest probability, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Restricts to `idx` and renormalizes. Returns `None` when the
    /// selected mass is zero.
    pub fn restrict(&self, idx: &[usize]) -> Option<ProbVector> {
        let picked: Vec<f64> = idx.iter().map(|&i| self.0[i]).collect();
        let mass: f64 = picked.iter().sum();
        (mass > 0.0).then(|| ProbVector(picked.into_iter().map(|p| p / mass).collect()))
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input {logits:?}")));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(ProbVector(out))
}

/// Overwrites `v` with its softmax. Inputs must be finite and non-empty.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `-ln p[label]` with the probability floored at [`LOG_FLOOR`].
pub fn cross_entropy(p: &ProbVector, label: usize) -> Result<f64> {
    match p.0.get(label) {
        Some(&q) => Ok(-q.max(LOG_FLOOR).ln()),
        None => Err(Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            p.len()
        ))),
    }
}

/// `KL(p || U_K) = Σ p_i ln(p_i K)` with `0 ln 0 = 0`.
pub fn kl_to_uniform(p: &ProbVector) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::InvalidInput("KL over zero classes".into()));
    }
    let k = p.len() as f64;
    Ok(p.0
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * (q * k).ln())
        .sum())
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.ln())
        .sum::<f64>()
}
