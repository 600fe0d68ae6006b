use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Dense class identifier (`0..K`) in attribute-file order.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Disjoint seen and unseen label sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpace {
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
}

impl ClassSpace {
    pub fn new(seen: Vec<ClassId>, unseen: Vec<ClassId>) -> Result<Self> {
        if seen.is_empty() || unseen.is_empty() {
            return Err(Error::InvalidInput(
                "both seen and unseen class lists must be non-empty".into(),
            ));
        }
        let mut all = BTreeSet::new();
        for c in seen.iter().chain(&unseen) {
            if !all.insert(*c) {
                return Err(Error::InvalidInput(format!(
                    "class {c} appears more than once across seen/unseen"
                )));
            }
        }
        Ok(Self { seen, unseen })
    }

    pub fn seen(&self) -> &[ClassId] {
        &self.seen
    }

    pub fn unseen(&self) -> &[ClassId] {
        &self.unseen
    }

    /// The total label space, sorted by id.
    pub fn all(&self) -> Vec<ClassId> {
        let mut all: Vec<ClassId> = self.seen.iter().chain(&self.unseen).copied().collect();
        all.sort();
        all
    }

    pub fn is_seen(&self, c: ClassId) -> bool {
        self.seen.contains(&c)
    }

    pub fn is_unseen(&self, c: ClassId) -> bool {
        self.unseen.contains(&c)
    }

    pub fn contains(&self, c: ClassId) -> bool {
        self.is_seen(c) || self.is_unseen(c)
    }
}

/// One attribute vector per class, indexed by dense class id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTable {
    vectors: Matrix,
}

impl SemanticTable {
    /// Row `i` of `vectors` is the attribute vector of class `i`.
    pub fn new(vectors: Matrix) -> Result<Self> {
        if vectors.rows() == 0 || vectors.cols() == 0 {
            return Err(Error::InvalidInput(
                "semantic table must be non-empty".into(),
            ));
        }
        Ok(Self { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.rows()
    }

    pub fn get(&self, c: ClassId) -> Option<&[f64]> {
        (c.index() < self.vectors.rows()).then(|| self.vectors.row(c.index()))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }

    /// Stacks the vectors of `classes` in order.
    pub fn select(&self, classes: &[ClassId]) -> Result<Matrix> {
        self.check_covers(classes)?;
        Ok(self
            .vectors
            .select_rows(&classes.iter().map(|c| c.index()).collect::<Vec<_>>()))
    }

    pub fn check_covers(&self, classes: &[ClassId]) -> Result<()> {
        match classes.iter().find(|c| c.index() >= self.vectors.rows()) {
            Some(c) => Err(Error::InvalidInput(format!(
                "class {c} has no semantic vector"
            ))),
            None => Ok(()),
        }
    }

    /// Verifies every id in `space` has a vector.
    pub fn check_space(&self, space: &ClassSpace) -> Result<()> {
        self.check_covers(&space.all())
    }
}

/// Where a training row came from.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    SeenReal,
    PseudoUnseen,
}

/// Feature rows with labels and provenance tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<ClassId>,
    origins: Vec<Origin>,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<ClassId>, origins: Vec<Origin>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidInput("labeled dataset has no rows".into()));
        }
        if labels.len() != features.rows() || origins.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} feature rows, {} labels, {} origin tags",
                features.rows(),
                labels.len(),
                origins.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            origins,
        })
    }

    /// All rows tagged as real seen-class data.
    pub fn seen(features: Matrix, labels: Vec<ClassId>) -> Result<Self> {
        let n = labels.len();
        Self::new(features, labels, vec![Origin::SeenReal; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Distinct labels, sorted.
    pub fn classes(&self) -> Vec<ClassId> {
        let set: BTreeSet<ClassId> = self.labels.iter().copied().collect();
        set.into_iter().collect()
    }

    /// Checks every label belongs to `space`.
    pub fn check_labels(&self, space: &ClassSpace) -> Result<()> {
        match self.labels.iter().position(|&c| !space.contains(c)) {
            Some(i) => Err(Error::InvalidInput(format!(
                "row {i} has label {} outside the class space",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Unlabeled feature rows with stable row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    features: Matrix,
    ids: Vec<usize>,
}

impl UnlabeledPool {
    pub fn new(features: Matrix, ids: Vec<usize>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidInput("unlabeled pool has no rows".into()));
        }
        if ids.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} rows but {} ids",
                features.rows(),
                ids.len()
            )));
        }
        let unique: BTreeSet<usize> = ids.iter().copied().collect();
        if unique.len() != ids.len() {
            return Err(Error::InvalidInput("pool row ids are not unique".into()));
        }
        Ok(Self { features, ids })
    }

    /// Pool whose ids are its row positions.
    pub fn from_features(features: Matrix) -> Result<Self> {
        let ids = (0..features.rows()).collect();
        Self::new(features, ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Sub-pool of the given positions (not ids). `None` when empty.
    pub fn subset(&self, positions: &[usize]) -> Option<UnlabeledPool> {
        if positions.is_empty() {
            return None;
        }
        Some(UnlabeledPool {
            features: self.features.select_rows(positions),
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
        })
    }

    /// Concatenates two pools; ids must stay unique.
    pub fn concat(&self, other: &UnlabeledPool) -> Result<UnlabeledPool> {
        let mut ids = self.ids.clone();
        ids.extend_from_slice(&other.ids);
        UnlabeledPool::new(self.features.vstack(&other.features), ids)
    }
}

/// Model-assigned labels on pool rows (positions into the pool).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabeledSet {
    pub rows: Vec<usize>,
    pub classes: Vec<ClassId>,
    /// Index of the learner the set was assigned to.
    pub source: usize,
    pub iteration: usize,
}

impl PseudoLabeledSet {
    pub fn new(
        rows: Vec<usize>,
        classes: Vec<ClassId>,
        source: usize,
        iteration: usize,
    ) -> Result<Self> {
        if rows.len() != classes.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} pseudo labels",
                rows.len(),
                classes.len()
            )));
        }
        Ok(Self {
            rows,
            classes,
            source,
            iteration,
        })
    }

    /// One entry per pool row, in pool order.
    pub fn full(labels: Vec<ClassId>, source: usize, iteration: usize) -> Self {
        Self {
            rows: (0..labels.len()).collect(),
            classes: labels,
            source,
            iteration,
        }
    }

    pub fn empty(source: usize, iteration: usize) -> Self {
        Self {
            rows: Vec::new(),
            classes: Vec::new(),
            source,
            iteration,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, ClassId)> + '_ {
        self.rows.iter().copied().zip(self.classes.iter().copied())
    }

    /// Keeps only entries whose class satisfies `keep`.
    pub fn filter_classes(&self, keep: impl Fn(ClassId) -> bool) -> PseudoLabeledSet {
        let (rows, classes) = self.iter().filter(|&(_, c)| keep(c)).unzip();
        PseudoLabeledSet {
            rows,
            classes,
            source: self.source,
            iteration: self.iteration,
        }
    }
}

/// Appends pseudo-labeled pool rows after the seen rows.
pub fn merge_train_set(
    seen: &LabeledDataset,
    pseudo: &PseudoLabeledSet,
    pool: &UnlabeledPool,
) -> Result<LabeledDataset> {
    if let Some(&bad) = pseudo.rows.iter().find(|&&r| r >= pool.len()) {
        return Err(Error::InvalidInput(format!(
            "pseudo-labeled row {bad} is out of range for a pool of {}",
            pool.len()
        )));
    }
    if pool.features().cols() != seen.dim() {
        return Err(Error::Shape(format!(
            "pool has {} features, seen set has {}",
            pool.features().cols(),
            seen.dim()
        )));
    }
    let features = seen
        .features()
        .vstack(&pool.features().select_rows(&pseudo.rows));
    let mut labels = seen.labels().to_vec();
    labels.extend_from_slice(&pseudo.classes);
    let mut origins = seen.origins().to_vec();
    origins.extend(std::iter::repeat_n(Origin::PseudoUnseen, pseudo.len()));
    LabeledDataset::new(features, labels, origins)
}
