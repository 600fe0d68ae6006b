use std::any::Any;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    check_job, class_positions, divergence_guard, Architecture, BaseLearner, Checkpoint,
    CheckpointHeader, FitJob, ZslModel,
};
use crate::datamodel::{ClassId, LabeledDataset, SemanticTable};
use crate::error::{Error, Result};
use crate::numeric::gemm_nn;
use crate::numeric::mlp::minibatches;
use crate::numeric::prob::softmax_in_place;
use crate::numeric::{ridge_fit, AdamState, Matrix, ProbVector};

pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerativeConfig {
    /// Ridge penalty of the attribute-to-mean map.
    pub lambda: f64,
    /// Synthetic samples per target class.
    pub n_syn: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Weight decay on the classifier weights.
    pub l2: f64,
    /// Also train the classifier on real rows of target classes.
    pub include_real: bool,
    /// Center attributes and means before the ridge fit.
    pub center: bool,
    /// Weight each class in the ridge fit by its sample count.
    pub count_weighted: bool,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            n_syn: 200,
            epochs: 30,
            lr: 1e-2,
            batch: 128,
            l2: 1e-4,
            include_real: true,
            center: true,
            count_weighted: true,
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("generative: lambda must be >= 0".into()));
        }
        if self.n_syn == 0 || self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config(
                "generative: n_syn, epochs and batch must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config(
                "generative: lr must be > 0 and l2 >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Class-conditional Gaussian feature model driven by attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGenerator {
    /// q×d ridge map on centered attributes.
    pub map: Matrix,
    pub attr_center: Vec<f64>,
    pub mean_center: Vec<f64>,
    /// Shared diagonal variance.
    pub variance: Vec<f64>,
}

impl FeatureGenerator {
    /// Fits the mean map on per-class empirical means and pools the
    /// within-class variance. With `count_weighted`, a class's weight in the
    /// ridge fit is its sample count relative to the average count.
    pub fn fit(
        data: &LabeledDataset,
        semantics: &SemanticTable,
        lambda: f64,
        centered: bool,
        count_weighted: bool,
    ) -> Result<Self> {
        let classes = data.classes();
        let d = data.dim();
        let k = classes.len();
        let mut means = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        let slot: Vec<usize> = data
            .labels()
            .iter()
            .map(|c| classes.binary_search(c).expect("label in class list"))
            .collect();
        for (r, &s) in slot.iter().enumerate() {
            counts[s] += 1;
            for (m, x) in means.row_mut(s).iter_mut().zip(data.features().row(r)) {
                *m += x;
            }
        }
        for (s, &n) in counts.iter().enumerate() {
            means.row_mut(s).iter_mut().for_each(|m| *m /= n as f64);
        }
        let mut variance = vec![0.0; d];
        for (r, &s) in slot.iter().enumerate() {
            for ((v, x), m) in variance
                .iter_mut()
                .zip(data.features().row(r))
                .zip(means.row(s))
            {
                *v += (x - m) * (x - m);
            }
        }
        let dof = data.len().saturating_sub(k).max(1) as f64;
        let mut floored = 0;
        for v in &mut variance {
            *v /= dof;
            if *v < VARIANCE_FLOOR {
                *v = VARIANCE_FLOOR;
                floored += 1;
            }
        }
        if floored == d {
            log::warn!(
                "pooled variance is below the floor in every dimension; using {VARIANCE_FLOOR}"
            );
        }

        let mut attrs = semantics.select(&classes)?;
        let avg = data.len() as f64 / k as f64;
        let weights: Vec<f64> = if count_weighted {
            counts.iter().map(|&n| n as f64 / avg).collect()
        } else {
            vec![1.0; k]
        };
        let (attr_center, mean_center) = if centered {
            (
                weighted_col_means(&attrs, &weights),
                weighted_col_means(&means, &weights),
            )
        } else {
            (vec![0.0; attrs.cols()], vec![0.0; d])
        };
        center(&mut attrs, &attr_center);
        center(&mut means, &mean_center);
        for (r, w) in weights.iter().enumerate() {
            let s = w.sqrt();
            attrs.row_mut(r).iter_mut().for_each(|v| *v *= s);
            means.row_mut(r).iter_mut().for_each(|v| *v *= s);
        }
        let map = ridge_fit(&attrs, &means, lambda)?;
        Ok(Self {
            map,
            attr_center,
            mean_center,
            variance,
        })
    }

    /// Predicted class means, one row per attribute row.
    pub fn class_means(&self, attrs: &Matrix) -> Matrix {
        let mut a = attrs.clone();
        center(&mut a, &self.attr_center);
        let mut out = a.matmul(&self.map);
        for r in 0..out.rows() {
            for (o, c) in out.row_mut(r).iter_mut().zip(&self.mean_center) {
                *o += c;
            }
        }
        out
    }

    /// `per_class` samples for each attribute row, grouped by class.
    pub fn sample(&self, attrs: &Matrix, per_class: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let means = self.class_means(attrs);
        let sd: Vec<f64> = self.variance.iter().map(|v| v.sqrt()).collect();
        let d = sd.len();
        let mut out = Vec::with_capacity(attrs.rows() * per_class * d);
        for mu in means.row_iter() {
            for _ in 0..per_class {
                for j in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    out.push(mu[j] + sd[j] * z);
                }
            }
        }
        Matrix::from_vec(attrs.rows() * per_class, d, out).expect("finite samples")
    }
}

fn weighted_col_means(m: &Matrix, w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; m.cols()];
    for (row, wr) in m.row_iter().zip(w) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += wr * v / total;
        }
    }
    out
}

fn center(m: &mut Matrix, c: &[f64]) {
    for r in 0..m.rows() {
        for (v, cv) in m.row_mut(r).iter_mut().zip(c) {
            *v -= cv;
        }
    }
}

/// Mean cross-entropy of a linear softmax classifier and its gradient.
///
/// `params` is a `(d+1)×k` row-major block: weights then the bias row.
pub fn softmax_classifier_loss(
    params: &[f64],
    x: &Matrix,
    y: &[usize],
    k: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = x.cols();
    let n = x.rows();
    let mut logits = vec![0.0; n * k];
    gemm_nn(x.as_slice(), &params[..d * k], &mut logits, n, d, k);
    let bias = &params[d * k..];
    let mut grads = vec![0.0; params.len()];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for r in 0..n {
        let row = &mut logits[r * k..(r + 1) * k];
        row.iter_mut().zip(bias).for_each(|(l, b)| *l += b);
        softmax_in_place(row);
        loss -= row[y[r]].max(1e-12).ln();
        row[y[r]] -= 1.0;
        for (c, g) in row.iter().enumerate() {
            let g = g * inv_n;
            grads[d * k + c] += g;
            for (j, xv) in x.row(r).iter().enumerate() {
                grads[j * k + c] += xv * g;
            }
        }
    }
    loss *= inv_n;
    for (i, p) in params[..d * k].iter().enumerate() {
        loss += l2 * p * p;
        grads[i] += 2.0 * l2 * p;
    }
    (loss, grads)
}

/// Softmax classifier trained on generated features.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub generator: FeatureGenerator,
    pub(crate) classes: Vec<ClassId>,
    pub(crate) params: Vec<f64>,
    pub(crate) dim: usize,
    pub(crate) seed: u64,
    pub loss_history: Vec<f64>,
}

impl GenerativeModel {
    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }
}

impl BaseLearner for GenerativeConfig {
    fn arch(&self) -> Architecture {
        Architecture::Generative
    }

    fn fit(&self, job: FitJob<'_>) -> Result<Box<dyn ZslModel>> {
        self.validate()?;
        check_job(&job)?;
        let data = job.data;
        let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
        let generator = FeatureGenerator::fit(
            data,
            job.semantics,
            self.lambda,
            self.center,
            self.count_weighted,
        )?;
        let mut classes = job.classes.to_vec();
        classes.sort();
        classes.dedup();
        let k = classes.len();
        let d = data.dim();

        let mut x = generator.sample(&job.semantics.select(&classes)?, self.n_syn, &mut rng);
        let mut y: Vec<usize> = (0..k)
            .flat_map(|c| std::iter::repeat_n(c, self.n_syn))
            .collect();
        if self.include_real {
            let real: Vec<usize> = (0..data.len())
                .filter(|&r| classes.binary_search(&data.labels()[r]).is_ok())
                .collect();
            if !real.is_empty() {
                x = x.vstack(&data.features().select_rows(&real));
                y.extend(
                    real.iter()
                        .map(|&r| classes.binary_search(&data.labels()[r]).unwrap()),
                );
            }
        }

        let mut params = vec![0.0; (d + 1) * k];
        if let Some(prev) = job
            .warm_start
            .and_then(|m| m.as_any().downcast_ref::<GenerativeModel>())
        {
            if prev.classes == classes && prev.dim == d {
                params.clone_from(&prev.params);
            }
        }
        let initial = softmax_classifier_loss(&params, &x, &y, k, self.l2).0;
        let mut adam = AdamState::new(params.len(), self.lr);
        let mut loss_history = Vec::with_capacity(self.epochs);
        for epoch in 0..self.epochs {
            let mut total = 0.0;
            for batch in minibatches(x.rows(), self.batch, &mut rng) {
                let xb = x.select_rows(&batch);
                let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
                let (loss, grads) = softmax_classifier_loss(&params, &xb, &yb, k, self.l2);
                adam.step(&mut params, &grads)?;
                total += loss * batch.len() as f64;
            }
            let epoch_loss = total / x.rows() as f64;
            divergence_guard(
                &format!("generative classifier epoch {epoch}"),
                initial,
                epoch_loss,
            )?;
            loss_history.push(epoch_loss);
        }
        Ok(Box::new(GenerativeModel {
            generator,
            classes,
            params,
            dim: d,
            seed: job.seed,
            loss_history,
        }))
    }
}

impl ZslModel for GenerativeModel {
    fn arch(&self) -> Architecture {
        Architecture::Generative
    }

    fn predict_proba(&self, x: &Matrix, classes: &[ClassId]) -> Result<Vec<ProbVector>> {
        if x.cols() != self.dim {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.dim,
                x.cols()
            )));
        }
        let pos = class_positions(&self.classes, classes)?;
        let k = self.classes.len();
        let d = self.dim;
        let mut logits = vec![0.0; x.rows() * k];
        gemm_nn(
            x.as_slice(),
            &self.params[..d * k],
            &mut logits,
            x.rows(),
            d,
            k,
        );
        let bias = &self.params[d * k..];
        Ok(logits
            .chunks(k)
            .map(|row| {
                let mut sub: Vec<f64> = pos.iter().map(|&p| row[p] + bias[p]).collect();
                softmax_in_place(&mut sub);
                ProbVector::from_normalized(sub)
            })
            .collect())
    }

    fn checkpoint(&self) -> Checkpoint {
        let g = &self.generator;
        let k = self.classes.len();
        let tensors = vec![
            g.map.clone(),
            Matrix::from_vec(1, g.attr_center.len(), g.attr_center.clone()).expect("finite"),
            Matrix::from_vec(1, g.mean_center.len(), g.mean_center.clone()).expect("finite"),
            Matrix::from_vec(1, g.variance.len(), g.variance.clone()).expect("finite"),
            Matrix::from_vec(self.dim + 1, k, self.params.clone()).expect("finite"),
        ];
        Checkpoint {
            header: CheckpointHeader {
                arch: Architecture::Generative,
                seed: self.seed,
                shapes: tensors.iter().map(Matrix::shape).collect(),
                hyperparameters: serde_json::json!({ "classes": self.classes, "dim": self.dim }),
            },
            tensors,
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
