//! Seeded synthetic zero-shot benchmarks.
//!
//! Class attributes live in `[0,1]^q`. A hidden map sends attributes to
//! feature-space class means: a random orthonormal embedding into `ℝ^d`,
//! optionally squashed elementwise by `tanh`. Samples are class means plus
//! isotropic Gaussian noise. Unseen attributes are convex combinations of
//! two or three seen attribute vectors plus jitter, so part of every unseen
//! class lies outside what the seen classes reveal about the map.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassId, SemanticTable, SplitSpec, ZslData};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Noise levels used for σ sweeps. The reference benchmark sits on this grid.
pub const SIGMA_GRID: [f64; 8] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0];

/// Index of the reference benchmark's σ in [`SIGMA_GRID`].
pub const REFERENCE_SIGMA_INDEX: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub attr_dim: usize,
    pub feature_dim: usize,
    pub train_per_class: usize,
    pub test_per_seen_class: usize,
    pub test_per_unseen_class: usize,
    /// Standard deviation of the per-coordinate sample noise.
    pub sigma: f64,
    pub nonlinear: bool,
    /// Weight of a shared attribute vector mixed into every seen class;
    /// higher values make classes more alike.
    pub sharing: f64,
    /// Standard deviation of the attribute jitter added to unseen classes.
    #[serde(default = "default_jitter")]
    pub unseen_jitter: f64,
    /// Pre-squash gain of the hidden map.
    #[serde(default = "default_gain")]
    pub gain: f64,
    pub seed: u64,
}

fn default_jitter() -> f64 {
    0.15
}

fn default_gain() -> f64 {
    1.5
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("seen_classes", self.seen_classes),
            ("unseen_classes", self.unseen_classes),
            ("attr_dim", self.attr_dim),
            ("feature_dim", self.feature_dim),
            ("train_per_class", self.train_per_class),
            ("test_per_unseen_class", self.test_per_unseen_class),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!(
                "synthetic spec: {name} must be >= 1"
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "synthetic spec: sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.feature_dim < self.attr_dim {
            return Err(Error::Config(format!(
                "synthetic spec: feature_dim {} < attr_dim {}",
                self.feature_dim, self.attr_dim
            )));
        }
        if !(0.0..1.0).contains(&self.sharing) {
            return Err(Error::Config(format!(
                "synthetic spec: sharing must be in [0, 1), got {}",
                self.sharing
            )));
        }
        if !(self.unseen_jitter >= 0.0) || !(self.gain > 0.0) {
            return Err(Error::Config(
                "synthetic spec: jitter must be >= 0 and gain > 0".into(),
            ));
        }
        Ok(())
    }

    /// Same spec at a different noise level.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        Self {
            sigma,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.seen_classes + self.unseen_classes
    }
}

/// The frozen benchmark used by the acceptance suite.
pub fn reference_benchmark() -> SynthSpec {
    SynthSpec {
        seen_classes: 10,
        unseen_classes: 4,
        attr_dim: 16,
        feature_dim: 64,
        train_per_class: 60,
        test_per_seen_class: 30,
        test_per_unseen_class: 30,
        sigma: SIGMA_GRID[REFERENCE_SIGMA_INDEX],
        nonlinear: true,
        sharing: 0.3,
        unseen_jitter: 0.2,
        gain: 1.5,
        seed: 20210,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<ZslData> {
    generate_with_means(spec).map(|(d, _)| d)
}

/// Also returns the true class means (row `c` is class `c`).
pub fn generate_with_means(spec: &SynthSpec) -> Result<(ZslData, Matrix)> {
    spec.validate()?;
    let (s, u, q, d) = (
        spec.seen_classes,
        spec.unseen_classes,
        spec.attr_dim,
        spec.feature_dim,
    );
    // Separate streams so that changing σ or sample counts leaves the class
    // structure untouched and rescales the very same noise draws.
    let mut structure = ChaCha8Rng::seed_from_u64(spec.seed);
    structure.set_stream(1);
    let mut noise = ChaCha8Rng::seed_from_u64(spec.seed);
    noise.set_stream(2);

    let common: Vec<f64> = (0..q).map(|_| structure.random::<f64>()).collect();
    let mut attrs: Vec<Vec<f64>> = (0..s)
        .map(|_| {
            (0..q)
                .map(|j| {
                    spec.sharing * common[j] + (1.0 - spec.sharing) * structure.random::<f64>()
                })
                .collect()
        })
        .collect();
    for _ in 0..u {
        let n_parents = if s >= 3 {
            structure.random_range(2..=3)
        } else {
            s.min(2)
        };
        let mut order: Vec<usize> = (0..s).collect();
        order.shuffle(&mut structure);
        let raw: Vec<f64> = (0..n_parents)
            .map(|_| structure.random::<f64>() + 0.2)
            .collect();
        let total: f64 = raw.iter().sum();
        let mut a = vec![0.0; q];
        for (&p, w) in order[..n_parents].iter().zip(&raw) {
            for (x, v) in a.iter_mut().zip(&attrs[p]) {
                *x += w / total * v;
            }
        }
        for x in a.iter_mut() {
            let j: f64 = structure.sample(StandardNormal);
            *x = (*x + spec.unseen_jitter * j).clamp(0.0, 1.0);
        }
        attrs.push(a);
    }
    let attrs: Vec<Vec<f64>> = attrs
        .into_iter()
        .map(|r| r.into_iter().map(|v| v as f32 as f64).collect())
        .collect();

    let embed = orthonormal_columns(d, q, &mut structure);
    let scale = spec.gain * (d as f64 / q as f64).sqrt();
    let mut means = Matrix::zeros(s + u, d);
    for (c, a) in attrs.iter().enumerate() {
        for i in 0..d {
            let pre: f64 = (0..q).map(|j| embed.get(i, j) * (a[j] - 0.5)).sum::<f64>() * scale;
            means.set(c, i, if spec.nonlinear { pre.tanh() } else { pre });
        }
    }

    let seen_ids: Vec<ClassId> = (0..s as u32).map(ClassId).collect();
    let unseen_ids: Vec<ClassId> = (s as u32..(s + u) as u32).map(ClassId).collect();

    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut emit = |class: ClassId,
                    count: usize,
                    rows: &mut Vec<f64>,
                    labels: &mut Vec<ClassId>|
     -> Vec<usize> {
        let start = labels.len();
        for _ in 0..count {
            for i in 0..d {
                let z: f64 = noise.sample(StandardNormal);
                rows.push((means.get(class.index(), i) + spec.sigma * z) as f32 as f64);
            }
            labels.push(class);
        }
        (start..start + count).collect()
    };
    let mut train_idx = Vec::new();
    let mut test_seen_idx = Vec::new();
    let mut test_unseen_idx = Vec::new();
    for &c in &seen_ids {
        train_idx.extend(emit(c, spec.train_per_class, &mut rows, &mut labels));
        test_seen_idx.extend(emit(c, spec.test_per_seen_class, &mut rows, &mut labels));
    }
    for &c in &unseen_ids {
        test_unseen_idx.extend(emit(c, spec.test_per_unseen_class, &mut rows, &mut labels));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order_rng.set_stream(3);
    train_idx.shuffle(&mut order_rng);
    test_seen_idx.shuffle(&mut order_rng);
    test_unseen_idx.shuffle(&mut order_rng);

    let features = Matrix::from_vec(labels.len(), d, rows)?;
    let semantics = SemanticTable::new(Matrix::from_rows(&attrs)?)?;
    let split = SplitSpec {
        seen_classes: seen_ids,
        unseen_classes: unseen_ids,
        train_idx,
        test_seen_idx,
        test_unseen_idx,
        split_name: "synthetic".into(),
    };
    Ok((ZslData::new(features, labels, semantics, split)?, means))
}

/// `d×q` matrix with orthonormal columns (Gram-Schmidt on Gaussian draws).
fn orthonormal_columns<R: Rng>(d: usize, q: usize, rng: &mut R) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(q);
    while cols.len() < q {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    let mut m = Matrix::zeros(d, q);
    for (j, c) in cols.iter().enumerate() {
        for (i, v) in c.iter().enumerate() {
            m.set(i, j, *v);
        }
    }
    m
}
