//! Seen/unseen gate: entropy-scored detectors trained with a simulated
//! unseen set, the two ways of simulating that set, the max-softmax
//! baseline and TNR@FNR evaluation.

mod curve;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use curve::{calibrate_threshold, tnr_at_fnr, OodCurve, OodPoint, DEFAULT_FNR_TARGETS};

use crate::basemodels::divergence_guard;
use crate::datamodel::{ClassId, ClassSpace, LabeledDataset, SemanticTable};
use crate::error::{Error, Result};
use crate::numeric::mlp::minibatches;
use crate::numeric::prob::softmax_in_place;
use crate::numeric::{entropy, AdamState, Matrix, Mlp, ProbVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OodConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Iter-OOD selection size as a fraction of the pool.
    pub iter_fraction: f64,
    /// Explicit Iter-OOD selection size; overrides `iter_fraction`.
    pub iter_size: Option<usize>,
    /// Selection-retrain rounds for Iter-OOD.
    pub rounds: usize,
    /// Minimum lead of the best unseen class over the best seen class, in
    /// probability, for Semantic-OOD to select a row.
    pub semantic_margin: f64,
    /// Scale attribute vectors to unit length in the semantic classifier.
    pub unit_attributes: bool,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self {
            hidden: 1600,
            epochs: 50,
            lr: 1e-3,
            batch: 256,
            iter_fraction: 0.3,
            iter_size: None,
            rounds: 1,
            semantic_margin: 0.0,
            unit_attributes: true,
        }
    }
}

impl OodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.batch == 0 || self.rounds == 0 {
            return Err(Error::Config(
                "ood: hidden, epochs, batch and rounds must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("ood: lr must be > 0".into()));
        }
        if !(self.iter_fraction > 0.0 && self.iter_fraction <= 1.0) {
            return Err(Error::Config("ood: iter_fraction must be in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.semantic_margin) {
            return Err(Error::Config(
                "ood: semantic_margin must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Iter-OOD `L` for a pool of `n` rows.
    pub fn iter_l(&self, n: usize) -> usize {
        self.iter_size
            .unwrap_or_else(|| (n as f64 * self.iter_fraction).floor() as usize)
            .clamp(1, n.max(1))
    }
}

/// Softmax classifier over the seen classes whose output entropy scores
/// how out-of-distribution a row is.
#[derive(Debug, Clone, PartialEq)]
pub struct OodDetector {
    pub net: Mlp,
    pub seen_classes: Vec<ClassId>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl OodDetector {
    pub fn probs(&self, x: &Matrix) -> Vec<ProbVector> {
        let mut logits = self.net.forward(x);
        (0..logits.rows())
            .map(|r| {
                let row = logits.row_mut(r);
                softmax_in_place(row);
                ProbVector::from_normalized(row.to_vec())
            })
            .collect()
    }

    /// Entropy score per row.
    pub fn scores(&self, x: &Matrix) -> Vec<f64> {
        self.probs(x).iter().map(ood_score).collect()
    }

    /// `1 − max p` per row.
    pub fn max_softmax_scores(&self, x: &Matrix) -> Vec<f64> {
        self.probs(x).iter().map(max_softmax_score).collect()
    }

    /// Seen-class labels.
    pub fn classify(&self, x: &Matrix) -> Vec<ClassId> {
        self.probs(x)
            .iter()
            .map(|p| self.seen_classes[p.argmax()])
            .collect()
    }
}

/// Shannon entropy of a detector output.
pub fn ood_score(p: &ProbVector) -> f64 {
    entropy(p.as_slice())
}

pub fn max_softmax_score(p: &ProbVector) -> f64 {
    1.0 - p.max()
}

fn slots(labels: &[ClassId], classes: &[ClassId]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|c| {
            classes
                .binary_search(c)
                .map_err(|_| Error::InvalidInput(format!("label {c} is not a seen class")))
        })
        .collect()
}

/// Mean cross-entropy on `x_seen` plus mean KL-to-uniform on `x_sim`,
/// with its parameter gradient. An empty `x_sim` drops the second term.
pub fn detector_loss(net: &Mlp, x_seen: &Matrix, y: &[usize], x_sim: &Matrix) -> (f64, Vec<f64>) {
    let fwd = net.forward_cached(x_seen);
    let k = net.output_dim();
    let n = x_seen.rows() as f64;
    let mut d_out = fwd.output.clone();
    let mut loss = 0.0;
    for (r, &label) in y.iter().enumerate() {
        let row = d_out.row_mut(r);
        softmax_in_place(row);
        loss -= row[label].max(1e-12).ln() / n;
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    let mut grads = net.backward(x_seen, &fwd, &d_out);
    if x_sim.rows() > 0 {
        let fwd = net.forward_cached(x_sim);
        let m = x_sim.rows() as f64;
        let mut d_out = fwd.output.clone();
        for r in 0..x_sim.rows() {
            let row = d_out.row_mut(r);
            softmax_in_place(row);
            let h = entropy(row);
            loss += ((k as f64).ln() - h) / m;
            // d/dz Σ p ln p = p (ln p + H)
            row.iter_mut()
                .for_each(|p| *p = if *p > 0.0 { *p * (p.ln() + h) / m } else { 0.0 });
        }
        for (g, s) in grads.iter_mut().zip(net.backward(x_sim, &fwd, &d_out)) {
            *g += s;
        }
    }
    (loss, grads)
}

/// Mean cross-entropy of the attribute-space classifier whose logits are
/// dot products with the class attribute rows of `attrs`.
pub fn semantic_loss(net: &Mlp, x: &Matrix, y: &[usize], attrs: &Matrix) -> (f64, Vec<f64>) {
    let fwd = net.forward_cached(x);
    let n = x.rows() as f64;
    let mut logits = fwd.output.matmul_t(attrs);
    let mut loss = 0.0;
    for (r, &label) in y.iter().enumerate() {
        let row = logits.row_mut(r);
        softmax_in_place(row);
        loss -= row[label].max(1e-12).ln() / n;
        row[label] -= 1.0;
        row.iter_mut().for_each(|g| *g /= n);
    }
    let d_out = logits.matmul(attrs);
    (loss, net.backward(x, &fwd, &d_out))
}

/// Adam over seen mini-batches; each step also draws the next batch of
/// `sim` rows when that set is non-empty.
fn train_net<F>(
    net: &mut Mlp,
    seen_rows: usize,
    sim: Option<&Matrix>,
    cfg: &OodConfig,
    rng: &mut ChaCha8Rng,
    what: &str,
    loss_fn: F,
) -> Result<Vec<f64>>
where
    F: Fn(&Mlp, &[usize], &Matrix) -> (f64, Vec<f64>),
{
    let empty = Matrix::zeros(0, net.input_dim());
    let all: Vec<usize> = (0..seen_rows).collect();
    let initial = loss_fn(net, &all, sim.unwrap_or(&empty)).0;
    let mut adam = AdamState::new(net.params().len(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut sim_queue: Vec<usize> = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        let batches = minibatches(seen_rows, cfg.batch, rng);
        for batch in &batches {
            let xs = match sim {
                Some(s) if s.rows() > 0 => {
                    let take = cfg.batch.min(s.rows());
                    let mut idx = Vec::with_capacity(take);
                    while idx.len() < take {
                        if sim_queue.is_empty() {
                            sim_queue = minibatches(s.rows(), s.rows(), rng).concat();
                        }
                        idx.push(sim_queue.pop().expect("refilled"));
                    }
                    s.select_rows(&idx)
                }
                _ => empty.clone(),
            };
            let (loss, grads) = loss_fn(net, batch, &xs);
            adam.step(net.params_mut(), &grads)?;
            total += loss * batch.len() as f64;
        }
        let epoch_loss = total / seen_rows as f64;
        divergence_guard(&format!("{what} epoch {epoch}"), initial, epoch_loss)?;
        history.push(epoch_loss);
    }
    Ok(history)
}

fn seen_parts(seen: &LabeledDataset) -> Result<(Vec<ClassId>, Vec<usize>)> {
    if seen.is_empty() {
        return Err(Error::InvalidInput("seen training set is empty".into()));
    }
    let classes = seen.classes();
    let y = slots(seen.labels(), &classes)?;
    Ok((classes, y))
}

/// Seen-class softmax classifier trained with cross-entropy only.
pub fn train_base_detector(
    seen: &LabeledDataset,
    cfg: &OodConfig,
    seed: u64,
) -> Result<OodDetector> {
    train_detector(seen, None, cfg, seed, "base detector")
}

/// Detector trained on seen rows plus a simulated unseen set pushed toward
/// uniform outputs.
pub fn train_ood_detector(
    seen: &LabeledDataset,
    simulated: &Matrix,
    cfg: &OodConfig,
    seed: u64,
) -> Result<OodDetector> {
    if simulated.rows() == 0 {
        return Err(Error::InvalidInput(
            "simulated unseen set is empty; use the max-softmax baseline instead".into(),
        ));
    }
    train_detector(seen, Some(simulated), cfg, seed, "ood detector")
}

fn train_detector(
    seen: &LabeledDataset,
    sim: Option<&Matrix>,
    cfg: &OodConfig,
    seed: u64,
    what: &str,
) -> Result<OodDetector> {
    cfg.validate()?;
    let (classes, y) = seen_parts(seen)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(seen.dim(), cfg.hidden, classes.len(), &mut rng)?;
    let x = seen.features();
    let loss_history = train_net(
        &mut net,
        seen.len(),
        sim,
        cfg,
        &mut rng,
        what,
        |net, batch, xs| {
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            detector_loss(net, &x.select_rows(batch), &yb, xs)
        },
    )?;
    Ok(OodDetector {
        net,
        seen_classes: classes,
        loss_history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMethod {
    Semantic,
    Iter,
    MaxSoftmax,
}

/// Pool rows chosen to stand in for unseen data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedUnseenSet {
    pub rows: Vec<usize>,
    pub method: OodMethod,
}

impl SimulatedUnseenSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Feature-to-attribute network trained on seen classes.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticClassifier {
    pub net: Mlp,
    pub unit_attributes: bool,
}

fn class_attributes(semantics: &SemanticTable, classes: &[ClassId], unit: bool) -> Result<Matrix> {
    let mut attrs = semantics.select(classes)?;
    if unit {
        for r in 0..attrs.rows() {
            let row = attrs.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }
    Ok(attrs)
}

impl SemanticClassifier {
    /// Class probabilities over `classes`.
    pub fn probs(
        &self,
        x: &Matrix,
        semantics: &SemanticTable,
        classes: &[ClassId],
    ) -> Result<Vec<ProbVector>> {
        let attrs = class_attributes(semantics, classes, self.unit_attributes)?;
        let mut logits = self.net.forward(x).matmul_t(&attrs);
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row_mut(r);
                softmax_in_place(row);
                ProbVector::from_normalized(row.to_vec())
            })
            .collect())
    }
}

pub fn train_semantic_classifier(
    seen: &LabeledDataset,
    semantics: &SemanticTable,
    cfg: &OodConfig,
    seed: u64,
) -> Result<SemanticClassifier> {
    cfg.validate()?;
    let (classes, y) = seen_parts(seen)?;
    let attrs = class_attributes(semantics, &classes, cfg.unit_attributes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Mlp::new(seen.dim(), cfg.hidden, semantics.dim(), &mut rng)?;
    let x = seen.features();
    train_net(
        &mut net,
        seen.len(),
        None,
        cfg,
        &mut rng,
        "semantic classifier",
        |net, batch, _| {
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            semantic_loss(net, &x.select_rows(batch), &yb, &attrs)
        },
    )?;
    Ok(SemanticClassifier {
        net,
        unit_attributes: cfg.unit_attributes,
    })
}

/// Rows whose best class over the full label space is unseen, leading the
/// best seen class by more than `margin` in probability.
pub fn semantic_selection(
    clf: &SemanticClassifier,
    pool: &Matrix,
    semantics: &SemanticTable,
    space: &ClassSpace,
    margin: f64,
) -> Result<SimulatedUnseenSet> {
    let all = space.all();
    let probs = clf.probs(pool, semantics, &all)?;
    let rows = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let (mut best_seen, mut best_unseen) = (0.0f64, 0.0f64);
            for (c, v) in all.iter().zip(p.as_slice()) {
                if space.is_unseen(*c) {
                    best_unseen = best_unseen.max(*v);
                } else {
                    best_seen = best_seen.max(*v);
                }
            }
            space.is_unseen(all[p.argmax()]) && best_unseen - best_seen > margin
        })
        .map(|(i, _)| i)
        .collect();
    Ok(SimulatedUnseenSet {
        rows,
        method: OodMethod::Semantic,
    })
}

/// Trains the attribute-space classifier on seen data and selects pool rows
/// it assigns to unseen classes.
pub fn select_simulated_semantic(
    seen: &LabeledDataset,
    pool: &Matrix,
    semantics: &SemanticTable,
    space: &ClassSpace,
    cfg: &OodConfig,
    seed: u64,
) -> Result<SimulatedUnseenSet> {
    semantics.check_space(space)?;
    let clf = train_semantic_classifier(seen, semantics, cfg, seed)?;
    semantic_selection(&clf, pool, semantics, space, cfg.semantic_margin)
}

/// The `l` rows with the lowest max-softmax confidence; ties by row index.
pub fn select_simulated_iter(
    detector: &OodDetector,
    pool: &Matrix,
    l: usize,
) -> Result<SimulatedUnseenSet> {
    if l == 0 || l > pool.rows() {
        return Err(Error::InvalidInput(format!(
            "L = {l} is outside 1..={}",
            pool.rows()
        )));
    }
    let conf: Vec<f64> = detector.probs(pool).iter().map(ProbVector::max).collect();
    let mut order: Vec<usize> = (0..pool.rows()).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(a.cmp(&b)));
    order.truncate(l);
    order.sort_unstable();
    Ok(SimulatedUnseenSet {
        rows: order,
        method: OodMethod::Iter,
    })
}

/// A trained gate and how it was built.
#[derive(Debug, Clone)]
pub struct Gate {
    pub method: OodMethod,
    pub detector: OodDetector,
    pub simulated: Option<SimulatedUnseenSet>,
}

impl Gate {
    /// OOD score per row, oriented so higher means more likely unseen.
    pub fn scores(&self, x: &Matrix) -> Vec<f64> {
        match self.method {
            OodMethod::MaxSoftmax => self.detector.max_softmax_scores(x),
            _ => self.detector.scores(x),
        }
    }
}

/// Builds a gate from the seen set and an unlabeled pool.
pub fn build_gate(
    method: OodMethod,
    seen: &LabeledDataset,
    pool: &Matrix,
    semantics: &SemanticTable,
    space: &ClassSpace,
    cfg: &OodConfig,
    seed: u64,
) -> Result<Gate> {
    cfg.validate()?;
    match method {
        OodMethod::MaxSoftmax => Ok(Gate {
            method,
            detector: train_base_detector(seen, cfg, seed)?,
            simulated: None,
        }),
        OodMethod::Semantic => {
            let sim = select_simulated_semantic(seen, pool, semantics, space, cfg, seed ^ 0x5e)?;
            let detector = train_ood_detector(seen, &pool.select_rows(&sim.rows), cfg, seed)?;
            Ok(Gate {
                method,
                detector,
                simulated: Some(sim),
            })
        }
        OodMethod::Iter => {
            let mut detector = train_base_detector(seen, cfg, seed)?;
            let l = cfg.iter_l(pool.rows());
            let mut sim = None;
            for round in 0..cfg.rounds {
                let s = select_simulated_iter(&detector, pool, l)?;
                detector = train_ood_detector(
                    seen,
                    &pool.select_rows(&s.rows),
                    cfg,
                    seed.wrapping_add(round as u64 + 1),
                )?;
                sim = Some(s);
            }
            Ok(Gate {
                method,
                detector,
                simulated: sim,
            })
        }
    }
}

#[cfg(test)]
mod tests;
