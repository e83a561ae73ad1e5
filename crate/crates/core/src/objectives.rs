//! Training losses and their gradients with respect to model scores.
//!
//! Normalization conventions:
//!
//! * [`si_loss`] and [`uc_loss`] are means over instances.
//! * [`si_bag_cost`] sums over labels and divides by the number of
//!   instances (bags times bag size), so with a single label it equals
//!   [`si_loss`] on the unpacked instances.
//! * [`bag_cost_soft_nor`] sums over labels and averages over bags.
//!
//! Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before any logarithm
//! and gradients are evaluated at the clamped values.

use serde::{Deserialize, Serialize};

use crate::bag::MilConfig;
use crate::error::{ensure_len, MilError, Result};
use crate::scalar::Scalar;

pub const SCORE_EPS: f64 = 1e-7;

#[inline]
pub fn clamp_score<T: Scalar>(g: T) -> T {
    let eps = T::lit(SCORE_EPS);
    g.max(eps).min(T::one() - eps)
}

/// Mean loss and its gradient with respect to each score.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport<T> {
    pub value: T,
    pub grad: Vec<T>,
}

/// Binary cross-entropy of a clamped score.
#[inline]
fn ce<T: Scalar>(g: T, y: bool) -> T {
    if y {
        -g.ln()
    } else {
        -(T::one() - g).ln()
    }
}

#[inline]
fn ce_grad<T: Scalar>(g: T, y: bool) -> T {
    if y {
        -T::one() / g
    } else {
        T::one() / (T::one() - g)
    }
}

/// Label-flip probabilities of a noisy binary labeling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRates {
    /// P(noisy = 0 | true = 1)
    pub rho_pos: f64,
    /// P(noisy = 1 | true = 0)
    pub rho_neg: f64,
}

impl NoiseRates {
    pub fn new(rho_pos: f64, rho_neg: f64) -> Result<Self> {
        let r = Self { rho_pos, rho_neg };
        r.validate()?;
        Ok(r)
    }

    pub fn none() -> Self {
        Self { rho_pos: 0.0, rho_neg: 0.0 }
    }

    /// Flip rates induced by the SI assignment: no positive is ever lost and
    /// a negative is labeled positive with probability `|P'-| / (|P'-| + |N'|)`.
    pub fn si_default(config: &MilConfig) -> Self {
        let pm = config.n_pos_minus() as f64;
        let n = config.n_neg() as f64;
        Self { rho_pos: 0.0, rho_neg: pm / (pm + n) }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| (0.0..1.0).contains(&r);
        if !(ok(self.rho_pos) && ok(self.rho_neg) && self.rho_pos + self.rho_neg < 1.0) {
            return Err(MilError::Domain(format!("noise rates ({}, {}) must lie in [0,1) with sum below 1", self.rho_pos, self.rho_neg)));
        }
        Ok(())
    }

    /// `(1 - rho of the other label, rho of this label, 1 - rho_pos - rho_neg)`.
    #[inline]
    fn weights<T: Scalar>(&self, label: bool) -> (T, T, T) {
        let (rho_same, rho_other) = if label { (self.rho_pos, self.rho_neg) } else { (self.rho_neg, self.rho_pos) };
        (T::lit(1.0 - rho_other), T::lit(rho_same), T::lit(1.0 - self.rho_pos - self.rho_neg))
    }
}

/// Per-instance loss families usable in the fused training path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum InstanceLoss {
    Si,
    Uc(NoiseRates),
}

impl InstanceLoss {
    pub fn name(&self) -> &'static str {
        match self {
            InstanceLoss::Si => "si",
            InstanceLoss::Uc(_) => "uc",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InstanceLoss::Si => Ok(()),
            InstanceLoss::Uc(r) => r.validate(),
        }
    }

    /// Unnormalized loss and derivative for one raw (unclamped) score.
    #[inline]
    pub fn term<T: Scalar>(&self, score: T, label: bool) -> (T, T) {
        (self.value(score, label), self.deriv(score, label))
    }

    /// Unnormalized loss of one instance.
    #[inline]
    pub fn value<T: Scalar>(&self, score: T, label: bool) -> T {
        let g = clamp_score(score);
        match *self {
            InstanceLoss::Si => ce(g, label),
            InstanceLoss::Uc(rates) => {
                let (keep, flip, denom) = rates.weights::<T>(label);
                (keep * ce(g, label) - flip * ce(g, !label)) / denom
            }
        }
    }

    /// Derivative of [`value`](Self::value) with respect to the score.
    #[inline]
    pub fn deriv<T: Scalar>(&self, score: T, label: bool) -> T {
        let g = clamp_score(score);
        match *self {
            InstanceLoss::Si => ce_grad(g, label),
            InstanceLoss::Uc(rates) => {
                let (keep, flip, denom) = rates.weights::<T>(label);
                (keep * ce_grad(g, label) - flip * ce_grad(g, !label)) / denom
            }
        }
    }

    pub fn evaluate<T: Scalar>(&self, scores: &[T], labels: &[bool]) -> Result<LossReport<T>> {
        self.validate()?;
        ensure_len(scores.len(), labels.len())?;
        if scores.is_empty() {
            return Err(MilError::Domain("loss of an empty score vector".into()));
        }
        let inv_n = T::one() / T::from_count(scores.len());
        let mut total = T::zero();
        let mut grad = Vec::with_capacity(scores.len());
        for (&s, &y) in scores.iter().zip(labels) {
            let (v, d) = self.term(s, y);
            total += v;
            grad.push(d * inv_n);
        }
        Ok(LossReport { value: total * inv_n, grad })
    }
}

/// Mean binary cross-entropy against SI labels.
pub fn si_loss<T: Scalar>(scores: &[T], si_labels: &[bool]) -> Result<LossReport<T>> {
    InstanceLoss::Si.evaluate(scores, si_labels)
}

/// Mean unbiased noisy-label cost: for noisy label `y~`,
/// `[(1 - rho_{not y~}) ce(g, y~) - rho_{y~} ce(g, not y~)] / (1 - rho_pos - rho_neg)`.
/// Its expectation over label flips equals the clean cross-entropy.
pub fn uc_loss<T: Scalar>(scores: &[T], noisy_labels: &[bool], rates: NoiseRates) -> Result<LossReport<T>> {
    InstanceLoss::Uc(rates).evaluate(scores, noisy_labels)
}

/// `1 - prod(1 - f_i)`, accumulated in log space.
pub fn soft_nor<T: Scalar>(instance_scores: &[T]) -> Result<T> {
    if instance_scores.is_empty() {
        return Err(MilError::Domain("soft-NOR of an empty bag".into()));
    }
    let mut log_q = T::zero();
    for &f in instance_scores {
        if !(f >= T::zero() && f <= T::one()) {
            return Err(MilError::Domain(format!("instance score {f} outside [0, 1]")));
        }
        log_q += (-f).ln_1p();
    }
    Ok(T::one() - log_q.exp())
}

/// Scores for a batch of equally sized bags and several labels.
///
/// `scores` is laid out `[bag][instance][label]`, `labels` `[bag][label]`.
#[derive(Clone, Copy, Debug)]
pub struct BagBatch<'a, T> {
    pub scores: &'a [T],
    pub labels: &'a [bool],
    pub bag_size: usize,
    pub n_labels: usize,
}

impl<'a, T: Scalar> BagBatch<'a, T> {
    pub fn n_bags(&self) -> usize {
        self.labels.len().checked_div(self.n_labels).unwrap_or(0)
    }

    fn validate(&self) -> Result<()> {
        if self.bag_size == 0 || self.n_labels == 0 {
            return Err(MilError::Domain("bags need at least one instance and one label".into()));
        }
        if self.labels.is_empty() || !self.labels.len().is_multiple_of(self.n_labels) {
            return Err(MilError::Shape { expected: self.n_labels, got: self.labels.len() });
        }
        ensure_len(self.n_bags() * self.bag_size * self.n_labels, self.scores.len())
    }

    #[inline]
    fn idx(&self, bag: usize, inst: usize, label: usize) -> usize {
        (bag * self.bag_size + inst) * self.n_labels + label
    }
}

/// Soft-NOR bag objective: cross-entropy of `1 - prod(1 - f_i)` against each
/// bag label, summed over labels and averaged over bags.
pub fn bag_cost_soft_nor<T: Scalar>(batch: &BagBatch<'_, T>) -> Result<LossReport<T>> {
    batch.validate()?;
    let n_bags = batch.n_bags();
    let inv_bags = T::one() / T::from_count(n_bags);
    let eps = T::lit(SCORE_EPS);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); batch.scores.len()];
    for b in 0..n_bags {
        for z in 0..batch.n_labels {
            let y = batch.labels[b * batch.n_labels + z];
            let mut log_q = T::zero();
            for i in 0..batch.bag_size {
                log_q += (-clamp_score(batch.scores[batch.idx(b, i, z)])).ln_1p();
            }
            let o = clamp_score(T::one() - log_q.exp());
            if y {
                total += -o.ln();
                for i in 0..batch.bag_size {
                    let f = clamp_score(batch.scores[batch.idx(b, i, z)]);
                    // prod_{j != i} (1 - f_j)
                    let rest = (log_q - (-f).ln_1p()).exp();
                    grad[batch.idx(b, i, z)] = -rest / o * inv_bags;
                }
            } else {
                total += -(T::one() - o).ln();
                for i in 0..batch.bag_size {
                    let f = clamp_score(batch.scores[batch.idx(b, i, z)]);
                    let rest = (log_q - (-f).ln_1p()).exp();
                    grad[batch.idx(b, i, z)] = rest / (T::one() - o).max(eps) * inv_bags;
                }
            }
        }
    }
    Ok(LossReport { value: total * inv_bags, grad })
}

/// SI objective on bags: every instance is scored against its bag's label.
/// Summed over labels, divided by the total number of instances.
pub fn si_bag_cost<T: Scalar>(batch: &BagBatch<'_, T>) -> Result<LossReport<T>> {
    batch.validate()?;
    let n_bags = batch.n_bags();
    let inv_n = T::one() / T::from_count(n_bags * batch.bag_size);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); batch.scores.len()];
    for b in 0..n_bags {
        for i in 0..batch.bag_size {
            for z in 0..batch.n_labels {
                let y = batch.labels[b * batch.n_labels + z];
                let k = batch.idx(b, i, z);
                let (v, d) = InstanceLoss::Si.term(batch.scores[k], y);
                total += v;
                grad[k] = d * inv_n;
            }
        }
    }
    Ok(LossReport { value: total * inv_n, grad })
}

/// Bag-level objectives selectable for multi-label training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagObjective {
    Si,
    SoftNor,
}

impl BagObjective {
    pub fn name(&self) -> &'static str {
        match self {
            BagObjective::Si => "si",
            BagObjective::SoftNor => "soft_nor",
        }
    }

    pub fn evaluate<T: Scalar>(&self, batch: &BagBatch<'_, T>) -> Result<LossReport<T>> {
        match self {
            BagObjective::Si => si_bag_cost(batch),
            BagObjective::SoftNor => bag_cost_soft_nor(batch),
        }
    }
}
