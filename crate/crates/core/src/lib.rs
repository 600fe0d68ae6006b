//! Iterative co-training for transductive zero-shot learning.
//!
//! Two or more base learners with different architectures are trained on
//! labeled seen-class data, pseudo-label an unlabeled pool, and retrain on
//! class-balanced samples of each other's pseudo labels with a budget that
//! grows every iteration. The crate also provides the out-of-distribution
//! gate used to split a mixed seen/unseen pool before classification, a
//! synthetic benchmark generator, the dataset file formats and the
//! experiment harness.

pub mod basemodels;
pub mod cotrain;
pub mod datamodel;
pub mod error;
pub mod gzsl;
pub mod numeric;
pub mod oodgate;
pub mod report;
pub mod selftest;
pub mod synthbench;

pub use error::{Error, Result};
