use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{ClassId, ClassSpace};

/// Row-index partition of a dataset into training, test-seen and
/// test-unseen parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seen_classes: Vec<ClassId>,
    pub unseen_classes: Vec<ClassId>,
    pub train_idx: Vec<usize>,
    pub test_seen_idx: Vec<usize>,
    pub test_unseen_idx: Vec<usize>,
    pub split_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Part {
    Train,
    TestSeen,
    TestUnseen,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Train => "train",
            Part::TestSeen => "test-seen",
            Part::TestUnseen => "test-unseen",
        })
    }
}

/// One broken split invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    ClassInBothSets(ClassId),
    DuplicateClass(ClassId),
    EmptySeenClasses,
    EmptyUnseenClasses,
    ClassListMismatch {
        part: &'static str,
    },
    RowOutOfRange {
        part: Part,
        row: usize,
        len: usize,
    },
    RowInTwoParts {
        row: usize,
        first: Part,
        second: Part,
    },
    DuplicateRow {
        part: Part,
        row: usize,
    },
    WrongDomain {
        part: Part,
        row: usize,
        class: ClassId,
    },
    UnknownClass {
        part: Part,
        row: usize,
        class: ClassId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ClassInBothSets(c) => write!(f, "class {c} is both seen and unseen"),
            Violation::DuplicateClass(c) => write!(f, "class {c} is listed twice"),
            Violation::EmptySeenClasses => write!(f, "no seen classes"),
            Violation::EmptyUnseenClasses => write!(f, "no unseen classes"),
            Violation::ClassListMismatch { part } => {
                write!(f, "split {part} classes differ from the class space")
            }
            Violation::RowOutOfRange { part, row, len } => {
                write!(f, "{part} row {row} is out of range ({len} rows)")
            }
            Violation::RowInTwoParts { row, first, second } => {
                write!(f, "row {row} is in both {first} and {second}")
            }
            Violation::DuplicateRow { part, row } => write!(f, "{part} lists row {row} twice"),
            Violation::WrongDomain { part, row, class } => {
                write!(
                    f,
                    "{part} row {row} has label {class} from the wrong class domain"
                )
            }
            Violation::UnknownClass { part, row, class } => {
                write!(f, "{part} row {row} has unknown label {class}")
            }
        }
    }
}

/// Returns every violated split invariant; an empty list means the split is
/// valid.
pub fn validate_split(space: &ClassSpace, split: &SplitSpec, labels: &[ClassId]) -> Vec<Violation> {
    let mut out = Vec::new();

    if split.seen_classes.is_empty() {
        out.push(Violation::EmptySeenClasses);
    }
    if split.unseen_classes.is_empty() {
        out.push(Violation::EmptyUnseenClasses);
    }
    let mut listed = BTreeSet::new();
    for &c in split.seen_classes.iter().chain(&split.unseen_classes) {
        if !listed.insert(c) {
            if split.seen_classes.contains(&c) && split.unseen_classes.contains(&c) {
                if !out.contains(&Violation::ClassInBothSets(c)) {
                    out.push(Violation::ClassInBothSets(c));
                }
            } else {
                out.push(Violation::DuplicateClass(c));
            }
        }
    }
    let as_set = |v: &[ClassId]| v.iter().copied().collect::<BTreeSet<_>>();
    if as_set(&split.seen_classes) != as_set(space.seen()) {
        out.push(Violation::ClassListMismatch { part: "seen" });
    }
    if as_set(&split.unseen_classes) != as_set(space.unseen()) {
        out.push(Violation::ClassListMismatch { part: "unseen" });
    }

    let seen = as_set(&split.seen_classes);
    let unseen = as_set(&split.unseen_classes);
    let mut owner: BTreeMap<usize, Part> = BTreeMap::new();
    let parts = [
        (Part::Train, &split.train_idx),
        (Part::TestSeen, &split.test_seen_idx),
        (Part::TestUnseen, &split.test_unseen_idx),
    ];
    for (part, rows) in parts {
        let mut here = BTreeSet::new();
        for &row in rows {
            if row >= labels.len() {
                out.push(Violation::RowOutOfRange {
                    part,
                    row,
                    len: labels.len(),
                });
                continue;
            }
            if !here.insert(row) {
                out.push(Violation::DuplicateRow { part, row });
                continue;
            }
            if let Some(&first) = owner.get(&row) {
                out.push(Violation::RowInTwoParts {
                    row,
                    first,
                    second: part,
                });
            } else {
                owner.insert(row, part);
            }
            let class = labels[row];
            let expected_seen = part != Part::TestUnseen;
            if !seen.contains(&class) && !unseen.contains(&class) {
                out.push(Violation::UnknownClass { part, row, class });
            } else if expected_seen != seen.contains(&class) {
                out.push(Violation::WrongDomain { part, row, class });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(v: u32) -> ClassId {
        ClassId(v)
    }

    fn fixture() -> (ClassSpace, SplitSpec, Vec<ClassId>) {
        let space = ClassSpace::new(vec![c(0), c(1)], vec![c(2)]).unwrap();
        let split = SplitSpec {
            seen_classes: vec![c(0), c(1)],
            unseen_classes: vec![c(2)],
            train_idx: vec![0, 1],
            test_seen_idx: vec![2],
            test_unseen_idx: vec![3],
            split_name: "PS".into(),
        };
        (space, split, vec![c(0), c(1), c(1), c(2)])
    }

    #[test]
    fn consistent_split_is_ok() {
        let (space, split, labels) = fixture();
        assert!(validate_split(&space, &split, &labels).is_empty());
    }

    #[test]
    fn class_in_both_sets_is_named() {
        let (space, mut split, labels) = fixture();
        split.unseen_classes.push(c(7));
        split.seen_classes.push(c(7));
        let v = validate_split(&space, &split, &labels);
        assert!(v.contains(&Violation::ClassInBothSets(c(7))), "{v:?}");
        assert!(v.iter().any(|x| x.to_string().contains("class 7")));
    }

    #[test]
    fn seen_label_in_test_unseen_names_the_row() {
        let (space, mut split, labels) = fixture();
        split.test_unseen_idx.push(1);
        split.train_idx.retain(|&r| r != 1);
        let v = validate_split(&space, &split, &labels);
        assert_eq!(
            v,
            vec![Violation::WrongDomain {
                part: Part::TestUnseen,
                row: 1,
                class: c(1)
            }]
        );
    }

    #[test]
    fn overlapping_and_out_of_range_rows() {
        let (space, mut split, labels) = fixture();
        split.test_seen_idx.push(0);
        split.train_idx.push(9);
        let v = validate_split(&space, &split, &labels);
        assert!(v.contains(&Violation::RowInTwoParts {
            row: 0,
            first: Part::Train,
            second: Part::TestSeen
        }));
        assert!(v.contains(&Violation::RowOutOfRange {
            part: Part::Train,
            row: 9,
            len: 4
        }));
    }
}
