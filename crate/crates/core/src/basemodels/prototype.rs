use std::any::Any;
use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_job, divergence_guard, l2_normalize_rows, Architecture, BaseLearner, Checkpoint,
    CheckpointHeader, FitJob, ZslModel,
};
use crate::datamodel::{ClassId, SemanticTable};
use crate::error::{Error, Result};
use crate::numeric::mlp::{minibatches, Forward};
use crate::numeric::prob::softmax_in_place;
use crate::numeric::{sq_dist, AdamState, Matrix, Mlp, ProbVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Distance-to-probability temperature.
    pub tau: f64,
    /// Weight decay on the network parameters.
    pub l2: f64,
    pub normalize_features: bool,
    /// Epochs when continuing from a warm-start model; `epochs` if unset.
    pub warm_epochs: Option<usize>,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            hidden: 1600,
            epochs: 30,
            lr: 1e-3,
            batch: 128,
            tau: 1.0,
            l2: 0.0,
            normalize_features: false,
            warm_epochs: None,
        }
    }
}

impl PrototypeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch == 0 || self.warm_epochs == Some(0) {
            return Err(Error::Config(
                "prototype: hidden, epochs, warm_epochs and batch must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.tau > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Config(
                "prototype: lr and tau must be > 0, l2 >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Attribute-to-prototype network plus the attribute table it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeModel {
    pub(crate) net: Mlp,
    pub(crate) semantics: SemanticTable,
    pub(crate) tau: f64,
    pub(crate) normalize_features: bool,
    pub(crate) seed: u64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Mean squared sample-to-prototype distance and its gradient.
///
/// `class_attrs` holds one attribute row per distinct class; `slot[n]` says
/// which row sample `n` belongs to.
pub fn prototype_loss(
    net: &Mlp,
    class_attrs: &Matrix,
    x: &Matrix,
    slot: &[usize],
    l2: f64,
) -> (f64, Vec<f64>) {
    let fwd = net.forward_cached(class_attrs);
    let (loss, d_out) = prototype_head(&fwd, x, slot);
    let mut grads = net.backward(class_attrs, &fwd, &d_out);
    let mut total = loss;
    if l2 > 0.0 {
        for (g, p) in grads.iter_mut().zip(net.params()) {
            total += l2 * p * p;
            *g += 2.0 * l2 * p;
        }
    }
    (total, grads)
}

fn prototype_head(fwd: &Forward, x: &Matrix, slot: &[usize]) -> (f64, Matrix) {
    let protos = &fwd.output;
    let n = x.rows() as f64;
    let mut d_out = Matrix::zeros(protos.rows(), protos.cols());
    let mut loss = 0.0;
    for (r, &s) in slot.iter().enumerate() {
        let p = protos.row(s);
        let xr = x.row(r);
        loss += sq_dist(xr, p);
        for ((g, pv), xv) in d_out.row_mut(s).iter_mut().zip(p).zip(xr) {
            *g += 2.0 * (pv - xv) / n;
        }
    }
    (loss / n, d_out)
}

impl PrototypeModel {
    pub fn prototypes(&self, classes: &[ClassId]) -> Result<Matrix> {
        Ok(self.net.forward(&self.semantics.select(classes)?))
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self {
            tau,
            ..self.clone()
        }
    }
}

impl BaseLearner for PrototypeConfig {
    fn arch(&self) -> Architecture {
        Architecture::Prototype
    }

    fn fit(&self, job: FitJob<'_>) -> Result<Box<dyn ZslModel>> {
        self.validate()?;
        check_job(&job)?;
        let data = job.data;
        let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
        let q = job.semantics.dim();
        let d = data.dim();
        let mut net = Mlp::new(q, self.hidden, d, &mut rng)?;
        let mut epochs = self.epochs;
        if let Some(prev) = job
            .warm_start
            .and_then(|m| m.as_any().downcast_ref::<PrototypeModel>())
        {
            if prev.net.input_dim() == q
                && prev.net.hidden_dim() == self.hidden
                && prev.net.output_dim() == d
            {
                net = prev.net.clone();
                epochs = self.warm_epochs.unwrap_or(self.epochs);
            }
        }
        let x_all = if self.normalize_features {
            l2_normalize_rows(data.features())
        } else {
            data.features().clone()
        };
        let labels = data.labels();

        let classes = data.classes();
        let attrs_all = job.semantics.select(&classes)?;
        let slot_of: BTreeMap<ClassId, usize> =
            classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let slot_all: Vec<usize> = labels.iter().map(|c| slot_of[c]).collect();
        let initial = prototype_loss(&net, &attrs_all, &x_all, &slot_all, self.l2).0;

        let mut adam = AdamState::new(net.params().len(), self.lr);
        let mut loss_history = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut epoch_loss = 0.0;
            let batches = minibatches(data.len(), self.batch, &mut rng);
            for batch in &batches {
                // forward only the classes present in this batch
                let mut local: BTreeMap<usize, usize> = BTreeMap::new();
                for &r in batch {
                    let next = local.len();
                    local.entry(slot_all[r]).or_insert(next);
                }
                let mut order: Vec<(usize, usize)> = local.iter().map(|(&g, &l)| (l, g)).collect();
                order.sort();
                let attrs =
                    attrs_all.select_rows(&order.iter().map(|&(_, g)| g).collect::<Vec<_>>());
                let slot: Vec<usize> = batch.iter().map(|r| local[&slot_all[*r]]).collect();
                let xb = x_all.select_rows(batch);
                let (loss, grads) = prototype_loss(&net, &attrs, &xb, &slot, self.l2);
                adam.step(net.params_mut(), &grads)?;
                epoch_loss += loss * batch.len() as f64;
            }
            let epoch_loss = epoch_loss / data.len() as f64;
            divergence_guard(&format!("prototype epoch {epoch}"), initial, epoch_loss)?;
            loss_history.push(epoch_loss);
        }
        Ok(Box::new(PrototypeModel {
            net,
            semantics: job.semantics.clone(),
            tau: self.tau,
            normalize_features: self.normalize_features,
            seed: job.seed,
            loss_history,
        }))
    }
}

impl ZslModel for PrototypeModel {
    fn arch(&self) -> Architecture {
        Architecture::Prototype
    }

    fn predict_proba(&self, x: &Matrix, classes: &[ClassId]) -> Result<Vec<ProbVector>> {
        if classes.is_empty() {
            return Err(Error::InvalidInput("empty class list".into()));
        }
        if x.cols() != self.net.output_dim() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.net.output_dim(),
                x.cols()
            )));
        }
        let protos = self.prototypes(classes)?;
        let x = if self.normalize_features {
            l2_normalize_rows(x)
        } else {
            x.clone()
        };
        Ok(x.row_iter()
            .map(|row| {
                let mut logits: Vec<f64> = protos
                    .row_iter()
                    .map(|p| -sq_dist(row, p) / self.tau)
                    .collect();
                softmax_in_place(&mut logits);
                ProbVector::from_normalized(logits)
            })
            .collect())
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                arch: Architecture::Prototype,
                seed: self.seed,
                shapes: vec![
                    (1, self.net.params().len()),
                    self.semantics.matrix().shape(),
                ],
                hyperparameters: serde_json::json!({
                    "input": self.net.input_dim(),
                    "hidden": self.net.hidden_dim(),
                    "output": self.net.output_dim(),
                    "tau": self.tau,
                    "normalize_features": self.normalize_features,
                }),
            },
            tensors: vec![
                Matrix::from_vec(1, self.net.params().len(), self.net.params().to_vec())
                    .expect("finite parameters"),
                self.semantics.matrix().clone(),
            ],
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
