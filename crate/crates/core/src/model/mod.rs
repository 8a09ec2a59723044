//! Pluggable classifier interface, reference models and their training loops.
//!
//! A [`Model`] exposes class probabilities, an embedding and per-example
//! cross-entropy gradients over a flat parameter vector. Everything else
//! (SGD with momentum, cosine annealing, weighted semi-supervised epochs,
//! cluster-based pre-training) is written against that interface.

mod checkpoint;
mod reference;

use std::fmt::Debug;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use reference::{cross_entropy, softmax_in_place, Activation, EmbeddingSoftmax, LinearSoftmax, PROB_FLOOR};

use crate::cluster::{kmeans, l2_normalized};
use crate::dataset::{Dataset, LabelState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::propagate::Propagation;
use crate::util::{derive_seed, rng, Rng as SeededRng};

/// Architecture of a reference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Softmax regression on input features; identity embedding.
    Linear,
    /// Learned embedding layer of width `dim` plus a softmax head.
    Embedding { dim: usize, activation: Activation },
}

impl ModelKind {
    pub fn build(self, d: usize, c: usize, seed: u64) -> Box<dyn Model> {
        let mut r = rng(seed);
        match self {
            ModelKind::Linear => Box::new(LinearSoftmax::random(d, c, &mut r)),
            ModelKind::Embedding { dim, activation } => {
                Box::new(EmbeddingSoftmax::random(d, dim, c, activation, &mut r))
            }
        }
    }

    /// Whether the embedding depends on the parameters.
    pub fn learns_embedding(self) -> bool {
        matches!(self, ModelKind::Embedding { .. })
    }
}

pub trait Model: Debug + Send + Sync {
    fn kind(&self) -> ModelKind;
    fn input_dim(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn embed_into(&self, x: &[f64], out: &mut [f64]);
    /// Softmax class probabilities.
    fn probs_into(&self, x: &[f64], out: &mut [f64]);
    /// Adds `scale * d(-ln p_y)/d(params)` to `grad` and returns the loss.
    fn accumulate_gradient(&self, x: &[f64], y: usize, scale: f64, grad: &mut [f64]) -> f64;
    /// Replaces the output layer by a freshly initialized one with `c` classes.
    fn reset_head(&mut self, c: usize, rng: &mut SeededRng);
    fn clone_box(&self) -> Box<dyn Model>;
}

impl Clone for Box<dyn Model> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Model parameters plus optimizer state.
#[derive(Debug, Clone)]
pub struct ClassifierState {
    pub model: Box<dyn Model>,
    pub velocity: Vec<f64>,
    /// Epochs run in the current training phase; drives the learning-rate schedule.
    pub epoch: usize,
}

impl ClassifierState {
    pub fn new(model: Box<dyn Model>) -> Self {
        let velocity = vec![0.0; model.params().len()];
        ClassifierState {
            model,
            velocity,
            epoch: 0,
        }
    }

    /// Starts a new training phase: zero momentum, schedule back at epoch 0.
    pub fn restart_phase(&mut self) {
        self.velocity = vec![0.0; self.model.params().len()];
        self.epoch = 0;
    }

    fn reset_head(&mut self, c: usize, rng: &mut SeededRng) {
        self.model.reset_head(c, rng);
        self.restart_phase();
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub epochs: usize,
    pub lr0: f64,
    /// Epoch at which the cosine schedule reaches zero.
    pub anneal_horizon: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Mini-batch size for purely supervised training.
    pub batch_size: usize,
    /// Labeled examples per semi-supervised mini-batch.
    pub batch_labeled: usize,
    /// Total semi-supervised mini-batch size.
    pub batch_total: usize,
    /// Pseudo-label draws per semi-supervised epoch, as a fraction of |U|.
    pub draw_fraction: f64,
    /// Multiply pseudo-label loss terms by their certainty weight.
    pub loss_weighting: bool,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            epochs: 200,
            lr0: 0.2,
            anneal_horizon: 210,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            batch_labeled: 50,
            batch_total: 128,
            draw_fraction: 0.5,
            loss_weighting: false,
        }
    }
}

impl TrainPlan {
    /// Cosine-annealed learning rate for a 0-based epoch.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if self.anneal_horizon == 0 || epoch >= self.anneal_horizon {
            return 0.0;
        }
        let t = epoch as f64 / self.anneal_horizon as f64;
        0.5 * self.lr0 * (1.0 + (std::f64::consts::PI * t).cos())
    }

    /// Number of pseudo-labels drawn per epoch for `unlabeled` examples.
    pub fn epoch_draws(&self, unlabeled: usize) -> usize {
        if unlabeled == 0 {
            return 0;
        }
        ((self.draw_fraction * unlabeled as f64).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_total == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.batch_labeled >= self.batch_total {
            return Err(Error::Config(format!(
                "batch_labeled ({}) must be smaller than batch_total ({})",
                self.batch_labeled, self.batch_total
            )));
        }
        if !(self.lr0 >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("invalid learning rate or momentum".into()));
        }
        if !(self.draw_fraction > 0.0) {
            return Err(Error::Config("draw_fraction must be positive".into()));
        }
        Ok(())
    }
}

/// One training example inside a mini-batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub label: usize,
    /// Multiplier on this example's loss term.
    pub weight: f64,
}

/// Applies one SGD-with-momentum step on the mean weighted loss of `batch`.
fn sgd_step(
    state: &mut ClassifierState,
    features: &Matrix,
    batch: &[Sample],
    lr: f64,
    plan: &TrainPlan,
    grad: &mut [f64],
) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    grad.iter_mut().for_each(|g| *g = 0.0);
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let l = state
            .model
            .accumulate_gradient(features.row(s.index), s.label, scale * s.weight, grad);
        loss += s.weight * l * scale;
    }
    let params = state.model.params_mut();
    for ((p, v), g) in params.iter_mut().zip(state.velocity.iter_mut()).zip(grad.iter()) {
        let g = g + plan.weight_decay * *p;
        *v = plan.momentum * *v + g;
        *p -= lr * *v;
    }
    loss
}

/// Mean cross-entropy of the model over the given examples.
pub fn mean_loss(model: &dyn Model, features: &Matrix, indices: &[usize], labels: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut p = vec![0.0; model.num_classes()];
    let total: f64 = indices
        .iter()
        .zip(labels)
        .map(|(&i, &y)| {
            model.probs_into(features.row(i), &mut p);
            cross_entropy(&p, y)
        })
        .sum();
    total / indices.len() as f64
}

fn check_dims(model: &dyn Model, features: &Matrix) -> Result<()> {
    if model.input_dim() != features.cols() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: features.cols(),
        });
    }
    Ok(())
}

/// Supervised training on `(indices, labels)` for `plan.epochs` epochs from
/// `init`, with a fresh optimizer.
pub fn fit(
    features: &Matrix,
    indices: &[usize],
    labels: &[usize],
    plan: &TrainPlan,
    init: &ClassifierState,
    seed: u64,
) -> Result<ClassifierState> {
    check_dims(init.model.as_ref(), features)?;
    if indices.is_empty() {
        return Err(Error::invalid("supervised training needs at least one labeled example"));
    }
    if indices.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: indices.len(),
            got: labels.len(),
        });
    }
    let c = init.model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let mut state = init.clone();
    state.restart_phase();
    if plan.epochs == 0 {
        return Ok(state);
    }
    let mut r = rng(seed);
    let mut order: Vec<usize> = (0..indices.len()).collect();
    let mut grad = vec![0.0; state.model.params().len()];
    let mut batch = Vec::with_capacity(plan.batch_size);
    for epoch in 0..plan.epochs {
        let lr = plan.learning_rate(state.epoch);
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(plan.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&j| Sample {
                index: indices[j],
                label: labels[j],
                weight: 1.0,
            }));
            epoch_loss += sgd_step(&mut state, features, &batch, lr, plan, &mut grad);
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: epoch_loss,
            });
        }
        state.epoch += 1;
    }
    Ok(state)
}

/// Supervised training on the labeled set only.
pub fn train_supervised(
    ds: &Dataset,
    labels: &LabelState,
    plan: &TrainPlan,
    init: &ClassifierState,
    seed: u64,
) -> Result<ClassifierState> {
    fit(ds.features(), labels.labeled(), &labels.labeled_classes(), plan, init, seed)
}

/// Composition of one semi-supervised mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiBatch {
    /// Indices drawn uniformly from L.
    pub labeled: Vec<usize>,
    /// Positions into `Propagation::unlabeled` drawn from the normalized weights.
    pub pseudo: Vec<usize>,
}

/// Draws the mini-batches of one semi-supervised epoch.
///
/// Each batch holds `batch_labeled` uniform draws from L (with replacement
/// only when L is smaller than that) and up to `batch_total - batch_labeled`
/// draws with replacement from the normalized weights over U. The epoch ends
/// once `epoch_draws(|U|)` pseudo-labels have been drawn.
pub fn semi_epoch_batches<R: Rng>(
    labels: &LabelState,
    prop: &Propagation,
    plan: &TrainPlan,
    rng: &mut R,
) -> Result<Vec<SemiBatch>> {
    plan.validate()?;
    if labels.labeled().is_empty() {
        return Err(Error::invalid("semi-supervised training needs labeled examples"));
    }
    if let Some(&i) = prop.unlabeled.iter().find(|&&i| labels.is_labeled(i)) {
        return Err(Error::invalid(format!(
            "propagation is stale: index {i} is labeled"
        )));
    }
    if prop.weights.len() != prop.unlabeled.len() {
        return Err(Error::DimensionMismatch {
            expected: prop.unlabeled.len(),
            got: prop.weights.len(),
        });
    }
    let total: f64 = prop.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let sampler = WeightedIndex::new(&prop.weights).map_err(|_| Error::ZeroWeights)?;
    let l = labels.labeled();
    let per_batch = plan.batch_total - plan.batch_labeled;
    let mut remaining = plan.epoch_draws(prop.unlabeled.len());
    let mut batches = Vec::with_capacity(remaining.div_ceil(per_batch));
    while remaining > 0 {
        let take = remaining.min(per_batch);
        remaining -= take;
        let labeled = if l.len() >= plan.batch_labeled {
            sample(rng, l.len(), plan.batch_labeled)
                .into_iter()
                .map(|j| l[j])
                .collect()
        } else {
            (0..plan.batch_labeled).map(|_| l[rng.random_range(0..l.len())]).collect()
        };
        let pseudo = (0..take).map(|_| sampler.sample(rng)).collect();
        batches.push(SemiBatch { labeled, pseudo });
    }
    Ok(batches)
}

/// One semi-supervised epoch: true labels on L, pseudo-labels on U sampled by weight.
///
/// Uses the learning rate for `state.epoch` and advances it.
pub fn train_semi(
    ds: &Dataset,
    labels: &LabelState,
    prop: &Propagation,
    plan: &TrainPlan,
    state: &mut ClassifierState,
    seed: u64,
) -> Result<()> {
    check_dims(state.model.as_ref(), ds.features())?;
    let mut r = rng(seed);
    let batches = semi_epoch_batches(labels, prop, plan, &mut r)?;
    let lr = plan.learning_rate(state.epoch);
    let mut grad = vec![0.0; state.model.params().len()];
    let mut samples = Vec::with_capacity(plan.batch_total);
    let mut epoch_loss = 0.0;
    for b in &batches {
        samples.clear();
        samples.extend(b.labeled.iter().map(|&i| Sample {
            index: i,
            label: labels.label_of(i).expect("drawn from L"),
            weight: 1.0,
        }));
        samples.extend(b.pseudo.iter().map(|&pos| Sample {
            index: prop.unlabeled[pos],
            label: prop.pseudo_labels[pos],
            weight: if plan.loss_weighting { prop.weights[pos] } else { 1.0 },
        }));
        epoch_loss += sgd_step(state, ds.features(), &samples, lr, plan, &mut grad);
    }
    if !epoch_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: state.epoch,
            loss: epoch_loss,
        });
    }
    state.epoch += 1;
    Ok(())
}

/// Settings of the cluster/train alternation.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainPlan {
    pub clusters: usize,
    pub rounds: usize,
    /// Training epochs per round on the cluster pseudo-labels.
    pub plan: TrainPlan,
    pub kmeans_iters: usize,
    /// Cluster l2-normalized embeddings.
    pub normalize: bool,
}

/// Unsupervised pre-training: alternate k-means on the current embedding
/// with training a fresh head on the cluster assignments.
///
/// The returned state carries a freshly initialized head with the dataset's
/// classes; only its embedding is meant to be reused.
pub fn pretrain_unsupervised(
    ds: &Dataset,
    pre: &PretrainPlan,
    init: &ClassifierState,
    seed: u64,
) -> Result<ClassifierState> {
    check_dims(init.model.as_ref(), ds.features())?;
    if pre.clusters > ds.len() {
        return Err(Error::invalid(format!(
            "{} clusters requested for {} examples",
            pre.clusters,
            ds.len()
        )));
    }
    let mut state = init.clone();
    if pre.rounds == 0 {
        return Ok(state);
    }
    let all: Vec<usize> = (0..ds.len()).collect();
    let mut head_rng = rng(derive_seed(seed, 0xC1));
    for round in 0..pre.rounds {
        let emb = embed_all(ds.features(), state.model.as_ref())?;
        let emb = if pre.normalize { l2_normalized(&emb) } else { emb };
        let cl = kmeans(&emb, pre.clusters, derive_seed(seed, round as u64), pre.kmeans_iters)?;
        let (targets, k) = cl.pseudo_labels();
        state.reset_head(k, &mut head_rng);
        state = fit(ds.features(), &all, &targets, &pre.plan, &state, derive_seed(seed, 1000 + round as u64))?;
    }
    state.reset_head(ds.num_classes(), &mut head_rng);
    Ok(state)
}

/// Class probabilities for every row of `features`.
pub fn predict_all(features: &Matrix, model: &dyn Model) -> Result<Matrix> {
    check_dims(model, features)?;
    let c = model.num_classes();
    let mut out = Matrix::zeros(features.rows(), c);
    for i in 0..features.rows() {
        model.probs_into(features.row(i), out.row_mut(i));
    }
    Ok(out)
}

/// Embedding of every row of `features`.
pub fn embed_all(features: &Matrix, model: &dyn Model) -> Result<Matrix> {
    check_dims(model, features)?;
    let mut out = Matrix::zeros(features.rows(), model.embed_dim());
    for i in 0..features.rows() {
        model.embed_into(features.row(i), out.row_mut(i));
    }
    Ok(out)
}

/// Fraction of rows whose most probable class matches `truth`.
pub fn accuracy(probs: &Matrix, truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth
        .iter()
        .enumerate()
        .filter(|&(i, &y)| crate::util::argmax(probs.row(i)) == Some(y))
        .count();
    hits as f64 / truth.len() as f64
}
