//! Full-batch Adam training with learning-rate selection by final training loss.
//!
//! Every learning rate starts from the same seeded initialization. Runs
//! whose loss or parameters become non-finite are discarded with a
//! diagnostic; the surviving run with the lowest final training loss wins.
//!
//! Gradients are reduced over fixed row chunks in chunk order, so results do
//! not depend on the size of the thread pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bag::TrainingView;
use crate::error::{ensure_len, MilError, Result};
use crate::model::{Adam, Architecture, Mlp};
use crate::objectives::{BagBatch, BagObjective, InstanceLoss};
use crate::scalar::Scalar;

const CHUNK_ROWS: usize = 8192;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rates: Vec<f64>,
    #[serde(default = "full_batch_default")]
    pub full_batch: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Seed of the weight initialization stream.
    pub seed: u64,
    /// Approximate number of `(epoch, loss)` samples kept per run.
    #[serde(default = "trace_points_default")]
    pub trace_points: usize,
}

fn full_batch_default() -> bool {
    true
}

fn trace_points_default() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100_000,
            learning_rates: vec![1e-4, 1e-5, 1e-6],
            full_batch: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            trace_points: trace_points_default(),
        }
    }
}

impl TrainConfig {
    /// Reduced 20 000-epoch budget used by the acceptance profile.
    pub fn acceptance() -> Self {
        Self { epochs: 20_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(MilError::Config("epochs must be at least 1".into()));
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| !(lr > 0.0 && lr.is_finite())) {
            return Err(MilError::Config("learning rates must be a nonempty list of positive values".into()));
        }
        if !self.full_batch {
            return Err(MilError::Config("only full-batch training is supported".into()));
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return Err(MilError::Config("Adam betas must lie in [0,1) and eps be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over the JSON encoding of the configuration and run labels.
    pub fn digest(&self, labels: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        for l in labels {
            h.update(b"\0");
            h.update(l.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Outcome of one learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub lr: f64,
    pub final_loss: Option<f64>,
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainedModel<T> {
    pub model: Mlp<T>,
    pub final_train_loss: T,
    pub chosen_lr: f64,
    pub loss_trace: Vec<(usize, T)>,
    pub runs: Vec<RunRecord>,
}

/// JSON checkpoint of a trained network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub config_digest: String,
    #[serde(default)]
    pub loss: String,
    #[serde(default)]
    pub chosen_lr: f64,
    #[serde(default)]
    pub final_train_loss: f64,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn checkpoint(&self, loss: &str, config: &TrainConfig) -> Checkpoint {
        Checkpoint {
            architecture: self.model.arch,
            weights: self.model.params.iter().map(|v| v.as_f64()).collect(),
            seed: self.model.seed,
            config_digest: config.digest(&[loss, self.model.arch.tag()]),
            loss: loss.to_string(),
            chosen_lr: self.chosen_lr,
            final_train_loss: self.final_train_loss.as_f64(),
        }
    }
}

impl Checkpoint {
    pub fn to_model<T: Scalar>(&self) -> Result<Mlp<T>> {
        let mut m = Mlp::from_params(self.architecture, self.weights.iter().map(|&w| T::lit(w)).collect())?;
        m.seed = self.seed;
        Ok(m)
    }
}

/// A differentiable training objective over a fixed dataset.
trait Objective<T: Scalar>: Sync {
    fn arch_inputs(&self) -> usize;
    fn arch_outputs(&self) -> usize;
    fn value_and_grad(&self, model: &Mlp<T>, with_value: bool) -> Result<(T, Vec<T>)>;
}

struct InstanceObjective<'a, T> {
    view: TrainingView<'a, T>,
    loss: InstanceLoss,
}

impl<'a, T: Scalar> Objective<T> for InstanceObjective<'a, T> {
    fn arch_inputs(&self) -> usize {
        self.view.dim
    }

    fn arch_outputs(&self) -> usize {
        1
    }

    fn value_and_grad(&self, model: &Mlp<T>, with_value: bool) -> Result<(T, Vec<T>)> {
        let d = self.view.dim;
        let scale = T::one() / T::from_count(self.view.len());
        let loss = self.loss;
        let partials: Vec<(T, Vec<T>)> = self
            .view
            .features
            .par_chunks(CHUNK_ROWS * d)
            .zip(self.view.si_labels.par_chunks(CHUNK_ROWS))
            .map(|(x, y)| model.instance_pass(x, y, scale, with_value, &loss))
            .collect();
        let mut total = T::zero();
        let mut grad = vec![T::zero(); model.arch.n_params()];
        for (v, g) in partials {
            total += v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((total * scale, grad))
    }
}

struct BagData<'a, T> {
    features: &'a [T],
    dim: usize,
    labels: &'a [bool],
    bag_size: usize,
    n_labels: usize,
    objective: BagObjective,
}

impl<'a, T: Scalar> Objective<T> for BagData<'a, T> {
    fn arch_inputs(&self) -> usize {
        self.dim
    }

    fn arch_outputs(&self) -> usize {
        self.n_labels
    }

    fn value_and_grad(&self, model: &Mlp<T>, _with_value: bool) -> Result<(T, Vec<T>)> {
        let scores = par_forward(model, self.features)?;
        let batch = BagBatch { scores: &scores, labels: self.labels, bag_size: self.bag_size, n_labels: self.n_labels };
        let report = self.objective.evaluate(&batch)?;
        let grad = par_backward(model, self.features, &report.grad)?;
        Ok((report.value, grad))
    }
}

/// [`Mlp::forward`] over fixed row chunks in parallel.
pub fn par_forward<T: Scalar>(model: &Mlp<T>, features: &[T]) -> Result<Vec<T>> {
    let d = model.arch.inputs();
    let parts: Result<Vec<Vec<T>>> = features.par_chunks(CHUNK_ROWS * d).map(|x| model.forward(x)).collect();
    Ok(parts?.concat())
}

/// [`Mlp::backward`] over fixed row chunks, reduced in chunk order.
pub fn par_backward<T: Scalar>(model: &Mlp<T>, features: &[T], loss_grad: &[T]) -> Result<Vec<T>> {
    let d = model.arch.inputs();
    let k = model.arch.outputs();
    ensure_len(features.len() / d * k, loss_grad.len())?;
    let parts: Result<Vec<Vec<T>>> =
        features.par_chunks(CHUNK_ROWS * d).zip(loss_grad.par_chunks(CHUNK_ROWS * k)).map(|(x, g)| model.backward(x, g)).collect();
    let mut grad = vec![T::zero(); model.arch.n_params()];
    for g in parts? {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(grad)
}

struct RunOutcome<T> {
    model: Mlp<T>,
    final_loss: T,
    trace: Vec<(usize, T)>,
}

fn run_one<T: Scalar, O: Objective<T>>(
    objective: &O,
    arch: Architecture,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<std::result::Result<RunOutcome<T>, String>> {
    let mut model = Mlp::init(arch, cfg.seed);
    let mut adam = Adam::new(arch.n_params(), T::lit(cfg.adam_beta1), T::lit(cfg.adam_beta2), T::lit(cfg.adam_eps));
    let every = (cfg.epochs / cfg.trace_points.max(1)).max(1);
    let lr_t = T::lit(lr);
    let mut trace = Vec::new();
    for epoch in 0..cfg.epochs {
        let record = epoch % every == 0;
        let (value, grad) = objective.value_and_grad(&model, record)?;
        if record {
            if !value.is_finite() {
                return Ok(Err(format!("non-finite loss {value} at epoch {epoch}")));
            }
            trace.push((epoch, value));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Ok(Err(format!("non-finite gradient at epoch {epoch}")));
        }
        adam.step(&mut model.params, &grad, lr_t);
        if model.params.iter().any(|p| !p.is_finite()) {
            return Ok(Err(format!("non-finite parameters after epoch {epoch}")));
        }
    }
    let (final_loss, _) = objective.value_and_grad(&model, true)?;
    if !final_loss.is_finite() {
        return Ok(Err(format!("non-finite final loss {final_loss}")));
    }
    trace.push((cfg.epochs, final_loss));
    Ok(Ok(RunOutcome { model, final_loss, trace }))
}

fn select<T: Scalar, O: Objective<T>>(objective: &O, arch: Architecture, cfg: &TrainConfig) -> Result<TrainedModel<T>> {
    cfg.validate()?;
    arch.validate()?;
    if arch.inputs() != objective.arch_inputs() || arch.outputs() != objective.arch_outputs() {
        return Err(MilError::Config(format!(
            "architecture {arch:?} does not fit data with {} inputs and {} outputs",
            objective.arch_inputs(),
            objective.arch_outputs()
        )));
    }
    let outcomes: Vec<_> = cfg.learning_rates.par_iter().map(|&lr| run_one(objective, arch, cfg, lr)).collect::<Result<_>>()?;

    let mut runs = Vec::new();
    let mut best: Option<(f64, RunOutcome<T>)> = None;
    for (&lr, outcome) in cfg.learning_rates.iter().zip(outcomes) {
        match outcome {
            Ok(run) => {
                runs.push(RunRecord { lr, final_loss: Some(run.final_loss.as_f64()), diagnostic: None });
                if best.as_ref().is_none_or(|(_, b)| run.final_loss < b.final_loss) {
                    best = Some((lr, run));
                }
            }
            Err(diag) => runs.push(RunRecord { lr, final_loss: None, diagnostic: Some(diag) }),
        }
    }
    let Some((chosen_lr, run)) = best else {
        let why: Vec<String> = runs.iter().filter_map(|r| r.diagnostic.clone()).collect();
        return Err(MilError::Training(format!("all learning rates diverged: {}", why.join("; "))));
    };
    Ok(TrainedModel { model: run.model, final_train_loss: run.final_loss, chosen_lr, loss_trace: run.trace, runs })
}

/// Trains a single-output network on an instance-level loss.
pub fn train<T: Scalar>(
    view: &TrainingView<'_, T>,
    loss: InstanceLoss,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    if view.is_empty() {
        return Err(MilError::Config("cannot train on an empty dataset".into()));
    }
    loss.validate()?;
    ensure_len(view.len() * view.dim, view.features.len())?;
    select(&InstanceObjective { view: *view, loss }, arch, config)
}

/// Equally sized bags with row-major instance features, laid out
/// `[bag][instance][feature]`, and labels `[bag][label]`.
#[derive(Clone, Copy, Debug)]
pub struct BagSet<'a, T> {
    pub features: &'a [T],
    pub dim: usize,
    pub labels: &'a [bool],
    pub bag_size: usize,
    pub n_labels: usize,
}

impl<'a, T: Scalar> BagSet<'a, T> {
    pub fn n_bags(&self) -> usize {
        self.labels.len() / self.n_labels.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.bag_size == 0 || self.n_labels == 0 || self.labels.is_empty() {
            return Err(MilError::Config("bag set needs positive dimension, bag size and labels".into()));
        }
        if !self.labels.len().is_multiple_of(self.n_labels) {
            return Err(MilError::Shape { expected: self.n_labels, got: self.labels.len() % self.n_labels });
        }
        ensure_len(self.n_bags() * self.bag_size * self.dim, self.features.len())
    }
}

/// Trains a multi-output network on a bag-level objective.
pub fn train_bags<T: Scalar>(
    bags: &BagSet<'_, T>,
    objective: BagObjective,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    bags.validate()?;
    let data = BagData {
        features: bags.features,
        dim: bags.dim,
        labels: bags.labels,
        bag_size: bags.bag_size,
        n_labels: bags.n_labels,
        objective,
    };
    select(&data, arch, config)
}
