//! Supervised learners with per-player weighted objectives.

mod gbt;
mod logistic;
mod model;
mod objective;

use std::collections::HashMap;

use num_traits::{FromPrimitive, Num};
use thiserror::Error;

use crate::event::PlayerId;
use crate::scalar::Scalar;

pub use gbt::{train_gbt, GbtConfig, Node, Tree};
pub use logistic::{train_logistic, LogisticConfig};
pub use model::{Model, ModelKind, Params, TrainingMeta, MODEL_FORMAT_VERSION};
pub use objective::Objective;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingRow<T> {
    pub features: Vec<T>,
    pub target: T,
    pub player_id: PlayerId,
    pub weight: T,
}

impl<T: Scalar> TrainingRow<T> {
    /// Row with unit weight; see [`per_player_weights`].
    pub fn new(features: Vec<T>, target: T, player_id: impl Into<PlayerId>) -> Self {
        TrainingRow { features, target, player_id: player_id.into(), weight: T::one() }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("no training rows")]
    Empty,
    #[error("row {row}: target {value} is not 0 or 1")]
    NonBinaryTarget { row: usize, value: f64 },
    #[error("row {row}: non-finite feature or target")]
    NonFinite { row: usize },
    #[error("row {row}: weight must be positive")]
    NonPositiveWeight { row: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid learner configuration: {0}")]
    Config(String),
    #[error("model format: {0}")]
    Format(String),
}

/// Inverse-frequency weight per row: each player's rows sum to one.
pub fn inverse_frequency<W, K>(keys: &[K]) -> Vec<W>
where
    W: Num + FromPrimitive + Copy,
    K: std::hash::Hash + Eq,
{
    let mut counts: HashMap<&K, usize> = HashMap::new();
    for k in keys {
        *counts.entry(k).or_default() += 1;
    }
    keys.iter()
        .map(|k| W::one() / W::from_usize(counts[k]).expect("row count representable"))
        .collect()
}

pub fn per_player_weights<T: Scalar>(rows: &mut [TrainingRow<T>]) {
    let ids: Vec<&PlayerId> = rows.iter().map(|r| &r.player_id).collect();
    let w: Vec<T> = inverse_frequency(&ids);
    for (row, w) in rows.iter_mut().zip(w) {
        row.weight = w;
    }
}

pub(crate) fn validate_rows<T: Scalar>(rows: &[TrainingRow<T>]) -> Result<usize, LearnError> {
    let first = rows.first().ok_or(LearnError::Empty)?;
    let dim = first.features.len();
    for (i, r) in rows.iter().enumerate() {
        if r.features.len() != dim {
            return Err(LearnError::DimensionMismatch { expected: dim, got: r.features.len() });
        }
        if !r.target.is_finite() || r.features.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NonFinite { row: i });
        }
        if !(r.weight > T::zero()) || !r.weight.is_finite() {
            return Err(LearnError::NonPositiveWeight { row: i });
        }
    }
    Ok(dim)
}

pub(crate) fn check_binary<T: Scalar>(rows: &[TrainingRow<T>]) -> Result<(), LearnError> {
    for (i, r) in rows.iter().enumerate() {
        if r.target != T::zero() && r.target != T::one() {
            return Err(LearnError::NonBinaryTarget { row: i, value: r.target.to_f64_lossy() });
        }
    }
    Ok(())
}

/// Σ w·loss over rows given per-row margins.
pub(crate) fn total_loss<T: Scalar>(objective: Objective, rows: &[TrainingRow<T>], margins: &[T]) -> T {
    rows.iter().zip(margins).map(|(r, &m)| objective.loss(m, r.target, r.weight)).sum()
}

/// Scales weights to mean one. The argmin of the weighted loss is unchanged;
/// leaf regularization then acts at the same strength for any dataset size.
pub fn normalize_mean_weight(rows: &mut [TrainingRow<f64>]) {
    let n = rows.len() as f64;
    let sum: f64 = rows.iter().map(|r| r.weight).sum();
    if sum > 0.0 {
        rows.iter_mut().for_each(|r| r.weight *= n / sum);
    }
}
