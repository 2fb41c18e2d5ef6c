use serde::{Deserialize, Serialize};

use super::gbt::Tree;
use super::{LearnError, Objective};
use crate::scalar::Scalar;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Gbt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound = "T: Scalar")]
pub enum Params<T> {
    Logistic { coefficients: Vec<T>, intercept: T },
    Gbt { base_margin: T, trees: Vec<Tree<T>> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Hyperparameters as given, for reporting.
    pub hyperparameters: Vec<(String, f64)>,
    /// Weighted training loss after each epoch or tree, starting from the
    /// initial model.
    pub loss_history: Vec<f64>,
}

/// A trained, immutable predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Model<T> {
    pub format_version: u32,
    pub kind: ModelKind,
    pub objective: Objective,
    pub feature_names: Vec<String>,
    pub n_features: usize,
    pub params: Params<T>,
    pub meta: TrainingMeta,
}

impl<T: Scalar> Model<T> {
    pub fn with_feature_names(mut self, names: Vec<String>) -> Self {
        self.feature_names = names;
        self
    }

    fn check_dim(&self, features: &[T]) -> Result<(), LearnError> {
        if features.len() != self.n_features {
            return Err(LearnError::DimensionMismatch { expected: self.n_features, got: features.len() });
        }
        Ok(())
    }

    pub fn predict_margin(&self, features: &[T]) -> Result<T, LearnError> {
        self.check_dim(features)?;
        Ok(match &self.params {
            Params::Logistic { coefficients, intercept } => {
                *intercept + coefficients.iter().zip(features).map(|(&c, &x)| c * x).sum::<T>()
            }
            Params::Gbt { base_margin, trees } => *base_margin + trees.iter().map(|t| t.eval(features)).sum::<T>(),
        })
    }

    /// Probability for logloss models, value for mse models.
    pub fn predict(&self, features: &[T]) -> Result<T, LearnError> {
        Ok(self.objective.transform(self.predict_margin(features)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LearnError> {
        let m: Model<T> = serde_json::from_str(s).map_err(|e| LearnError::Format(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(LearnError::Format(format!(
                "unsupported model version {} (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        if !m.feature_names.is_empty() && m.feature_names.len() != m.n_features {
            return Err(LearnError::Format("feature name count does not match dimension".into()));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_logistic() -> Model<f64> {
        Model {
            format_version: MODEL_FORMAT_VERSION,
            kind: ModelKind::Logistic,
            objective: Objective::WeightedLogloss,
            feature_names: vec!["a".into(), "b".into()],
            n_features: 2,
            params: Params::Logistic { coefficients: vec![0.0, 0.0], intercept: 0.0 },
            meta: TrainingMeta::default(),
        }
    }

    #[test]
    fn zero_coefficients_predict_half() {
        assert_eq!(zero_logistic().predict(&[3.0, -1.0]).unwrap(), 0.5);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            zero_logistic().predict(&[1.0]),
            Err(LearnError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn json_roundtrip_and_version_check() {
        let m = zero_logistic();
        let back = Model::<f64>::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let bumped = m.to_json().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(matches!(Model::<f64>::from_json(&bumped), Err(LearnError::Format(_))));
    }
}
