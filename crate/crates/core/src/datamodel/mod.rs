//! Zero-shot data types, split validation and dataset ingestion.

pub mod io;
mod split;
mod types;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub use split::{validate_split, Part, SplitSpec, Violation};
pub use types::{
    merge_train_set, ClassId, ClassSpace, LabeledDataset, Origin, PseudoLabeledSet, SemanticTable,
    UnlabeledPool,
};

use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const FEATURES_FILE: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.bin";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// An unlabeled pool together with its held-back ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPool {
    pub pool: UnlabeledPool,
    pub truth: Vec<ClassId>,
}

impl EvalPool {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    /// Positions of rows whose true class satisfies `keep`.
    pub fn positions_where(&self, keep: impl Fn(ClassId) -> bool) -> Vec<usize> {
        (0..self.truth.len())
            .filter(|&i| keep(self.truth[i]))
            .collect()
    }

    pub fn subset(&self, positions: &[usize]) -> Option<EvalPool> {
        Some(EvalPool {
            pool: self.pool.subset(positions)?,
            truth: positions.iter().map(|&p| self.truth[p]).collect(),
        })
    }
}

/// A complete zero-shot dataset: all feature rows, labels, attributes and
/// the split that partitions them.
#[derive(Debug, Clone, PartialEq)]
pub struct ZslData {
    pub space: ClassSpace,
    pub semantics: SemanticTable,
    pub features: Matrix,
    pub labels: Vec<ClassId>,
    pub split: SplitSpec,
    pub class_names: Option<BTreeMap<ClassId, String>>,
}

impl ZslData {
    /// Cross-checks all parts and the split invariants.
    pub fn new(
        features: Matrix,
        labels: Vec<ClassId>,
        semantics: SemanticTable,
        split: SplitSpec,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(i) = labels
            .iter()
            .position(|c| c.index() >= semantics.num_classes())
        {
            return Err(Error::InvalidInput(format!(
                "row {i}: unknown class id {} ({} classes have attributes)",
                labels[i],
                semantics.num_classes()
            )));
        }
        let space = ClassSpace::new(split.seen_classes.clone(), split.unseen_classes.clone())?;
        semantics.check_space(&space)?;
        let violations = validate_split(&space, &split, &labels);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::InvalidInput(format!(
                "invalid split: {}",
                list.join("; ")
            )));
        }
        if split.train_idx.is_empty() || split.test_unseen_idx.is_empty() {
            return Err(Error::InvalidInput(
                "split needs training rows and test-unseen rows".into(),
            ));
        }
        Ok(Self {
            space,
            semantics,
            features,
            labels,
            split,
            class_names: None,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Labeled seen-class training set.
    pub fn train_set(&self) -> LabeledDataset {
        let idx = &self.split.train_idx;
        LabeledDataset::seen(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
        .expect("validated split has training rows")
    }

    fn eval_pool(&self, idx: &[usize]) -> Option<EvalPool> {
        if idx.is_empty() {
            return None;
        }
        Some(EvalPool {
            pool: UnlabeledPool::new(self.features.select_rows(idx), idx.to_vec()).ok()?,
            truth: idx.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn test_unseen(&self) -> EvalPool {
        self.eval_pool(&self.split.test_unseen_idx)
            .expect("validated split has test-unseen rows")
    }

    pub fn test_seen(&self) -> Option<EvalPool> {
        self.eval_pool(&self.split.test_seen_idx)
    }

    /// Test-unseen rows followed by test-seen rows.
    pub fn compound(&self) -> EvalPool {
        let mut idx = self.split.test_unseen_idx.clone();
        idx.extend_from_slice(&self.split.test_seen_idx);
        self.eval_pool(&idx).expect("non-empty")
    }

    /// Writes the five dataset files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_features(&dir.join(FEATURES_FILE), &self.features)?;
        io::write_labels(&dir.join(LABELS_FILE), &self.labels)?;
        io::write_attributes(&dir.join(ATTRIBUTES_FILE), &self.semantics)?;
        io::write_split(&dir.join(SPLIT_FILE), &self.split)?;
        if let Some(names) = &self.class_names {
            io::write_manifest(&dir.join(MANIFEST_FILE), names)?;
        }
        Ok(())
    }

    /// Loads a directory written by [`ZslData::save`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut data = load_dataset(
            &dir.join(FEATURES_FILE),
            &dir.join(LABELS_FILE),
            &dir.join(ATTRIBUTES_FILE),
            &dir.join(SPLIT_FILE),
        )?;
        let manifest = dir.join(MANIFEST_FILE);
        if manifest.exists() {
            data.class_names = Some(io::read_manifest(&manifest)?);
        }
        Ok(data)
    }
}

/// Paths of the four required dataset files.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub attributes: PathBuf,
    pub split: PathBuf,
}

pub fn load_dataset(
    feature_path: &Path,
    label_path: &Path,
    attribute_path: &Path,
    split_path: &Path,
) -> Result<ZslData> {
    let features = io::read_features(feature_path)?;
    let labels = io::read_labels(label_path)?;
    if labels.len() != features.rows() {
        return Err(Error::format(
            label_path,
            "byte 12",
            format!(
                "dimension mismatch: {} labels but {} feature rows",
                labels.len(),
                features.rows()
            ),
        ));
    }
    let semantics = io::read_attributes(attribute_path)?;
    if let Some(i) = labels
        .iter()
        .position(|c| c.index() >= semantics.num_classes())
    {
        return Err(Error::format(
            label_path,
            format!("byte {} (row {i})", 16 + 4 * i),
            format!("unknown class id {}", labels[i]),
        ));
    }
    let split = io::read_split(split_path)?;
    ZslData::new(features, labels, semantics, split)
        .map_err(|e| e.context(format!("validating {}", split_path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A 3-class toy dataset (2 seen, 1 unseen) with f32-exact values.
    pub(crate) fn toy() -> ZslData {
        let features = Matrix::from_vec(
            6,
            2,
            vec![
                0.5, 1.25, 0.75, -1.0, 3.0, 0.125, 2.5, -0.5, 8.0, 8.5, 7.75, 9.0,
            ],
        )
        .unwrap();
        let labels = vec![
            ClassId(0),
            ClassId(1),
            ClassId(0),
            ClassId(1),
            ClassId(2),
            ClassId(2),
        ];
        let semantics = SemanticTable::new(
            Matrix::from_rows(&[
                vec![1.0, 0.0, 0.1],
                vec![0.0, 1.0, 0.2],
                vec![0.5, 0.5, 0.3],
            ])
            .unwrap(),
        )
        .unwrap();
        let split = SplitSpec {
            seen_classes: vec![ClassId(0), ClassId(1)],
            unseen_classes: vec![ClassId(2)],
            train_idx: vec![0, 1],
            test_seen_idx: vec![2, 3],
            test_unseen_idx: vec![4, 5],
            split_name: "PS".into(),
        };
        ZslData::new(features, labels, semantics, split).unwrap()
    }

    #[test]
    fn toy_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let mut data = toy();
        data.class_names = Some(
            [
                (ClassId(0), "zebra".to_string()),
                (ClassId(2), "okapi".to_string()),
            ]
            .into_iter()
            .collect(),
        );
        data.save(dir.path()).unwrap();
        let back = ZslData::load_dir(dir.path()).unwrap();
        assert_eq!(back, data);
        let before = std::fs::read(dir.path().join(FEATURES_FILE)).unwrap();
        back.save(dir.path()).unwrap();
        assert_eq!(
            std::fs::read(dir.path().join(FEATURES_FILE)).unwrap(),
            before
        );
    }

    #[test]
    fn corrupted_magic_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        toy().save(dir.path()).unwrap();
        let path = dir.path().join(FEATURES_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let err = ZslData::load_dir(dir.path()).unwrap_err();
        assert!(err.to_string().contains("malformed header"));
    }

    #[test]
    fn unknown_label_is_reported_with_row() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy();
        data.save(dir.path()).unwrap();
        let mut labels = data.labels.clone();
        labels[3] = ClassId(9);
        io::write_labels(&dir.path().join(LABELS_FILE), &labels).unwrap();
        let err = ZslData::load_dir(dir.path()).unwrap_err().to_string();
        assert!(
            err.contains("row 3") && err.contains("unknown class id 9"),
            "{err}"
        );
    }

    #[test]
    fn awa2_shaped_metadata_validates() {
        // 50 classes, 2048-d features, 85 attributes, 40/10 split; one row per class
        let k = 50;
        let features = Matrix::zeros(k, 2048);
        let labels: Vec<ClassId> = (0..k as u32).map(ClassId).collect();
        let semantics = SemanticTable::new(Matrix::zeros(k, 85)).unwrap();
        let split = SplitSpec {
            seen_classes: labels[..40].to_vec(),
            unseen_classes: labels[40..].to_vec(),
            train_idx: (0..40).collect(),
            test_seen_idx: vec![],
            test_unseen_idx: (40..50).collect(),
            split_name: "PS".into(),
        };
        let data = ZslData::new(features, labels, semantics, split).unwrap();
        assert_eq!(data.semantics.dim(), 85);
        assert_eq!(data.feature_dim(), 2048);
        assert_eq!(data.space.unseen().len(), 10);
        assert!(data.test_seen().is_none());
    }

    #[test]
    fn views_follow_the_split() {
        let data = toy();
        assert_eq!(data.train_set().len(), 2);
        let c = data.compound();
        assert_eq!(c.pool.ids(), &[4, 5, 2, 3]);
        assert_eq!(
            c.truth,
            vec![ClassId(2), ClassId(2), ClassId(0), ClassId(1)]
        );
    }
}
