use serde::{Deserialize, Serialize};

use crate::scalar::{logit, sigmoid, Scalar};

/// Loss on the raw model output (margin), weighted per row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `w · logloss(y, σ(m))`.
    WeightedLogloss,
    /// `w · (y - m)²`.
    WeightedMse,
}

impl Objective {
    pub fn loss<T: Scalar>(self, margin: T, target: T, weight: T) -> T {
        match self {
            Objective::WeightedLogloss => {
                // softplus(m) - y·m, stable for large |m|
                let softplus = margin.max(T::zero()) + (-margin.abs()).exp().ln_1p();
                weight * (softplus - target * margin)
            }
            Objective::WeightedMse => {
                let r = target - margin;
                weight * r * r
            }
        }
    }

    /// First and second derivative of [`Objective::loss`] in the margin.
    pub fn grad_hess<T: Scalar>(self, margin: T, target: T, weight: T) -> (T, T) {
        match self {
            Objective::WeightedLogloss => {
                let p = sigmoid(margin);
                (weight * (p - target), weight * p * (T::one() - p))
            }
            Objective::WeightedMse => {
                let two = T::lit(2.0);
                (two * weight * (margin - target), two * weight)
            }
        }
    }

    /// Margin to prediction: probability for logloss, identity for mse.
    pub fn transform<T: Scalar>(self, margin: T) -> T {
        match self {
            Objective::WeightedLogloss => sigmoid(margin),
            Objective::WeightedMse => margin,
        }
    }

    /// Constant margin minimising the weighted loss.
    pub fn base_margin<T: Scalar>(self, targets: impl Iterator<Item = (T, T)>) -> T {
        let (mut sw, mut swy) = (T::zero(), T::zero());
        for (y, w) in targets {
            sw += w;
            swy += w * y;
        }
        let mean = if sw > T::zero() { swy / sw } else { T::zero() };
        match self {
            Objective::WeightedLogloss => {
                let eps = T::lit(1e-6);
                logit(mean.max(eps).min(T::one() - eps))
            }
            Objective::WeightedMse => mean,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::WeightedLogloss => "weighted_logloss",
            Objective::WeightedMse => "weighted_mse",
        }
    }
}
