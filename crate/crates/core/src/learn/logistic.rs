use super::{check_binary, validate_rows, LearnError, Model, ModelKind, Objective, Params, TrainingMeta, TrainingRow};
use super::model::MODEL_FORMAT_VERSION;
use crate::scalar::{sigmoid, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticConfig<T> {
    /// Ridge penalty on standardized coefficients (intercept unpenalized).
    pub l2: T,
    pub epochs: usize,
    pub lr: T,
    pub seed: u64,
}

impl<T: Scalar> Default for LogisticConfig<T> {
    fn default() -> Self {
        LogisticConfig { l2: T::lit(1e-3), epochs: 500, lr: T::lit(0.5), seed: 0 }
    }
}

struct Standardized<T> {
    x: Vec<Vec<T>>,
    mean: Vec<T>,
    scale: Vec<T>,
}

fn standardize<T: Scalar>(rows: &[TrainingRow<T>], dim: usize) -> Standardized<T> {
    let n = T::from_usize(rows.len()).unwrap();
    let mut mean = vec![T::zero(); dim];
    for r in rows {
        for (m, &v) in mean.iter_mut().zip(&r.features) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![T::zero(); dim];
    for r in rows {
        for ((s, &m), &v) in scale.iter_mut().zip(&mean).zip(&r.features) {
            *s += (v - m) * (v - m);
        }
    }
    for s in scale.iter_mut() {
        let sd = (*s / n).sqrt();
        *s = if sd > T::epsilon() { sd } else { T::one() };
    }
    let x = rows
        .iter()
        .map(|r| r.features.iter().zip(&mean).zip(&scale).map(|((&v, &m), &s)| (v - m) / s).collect())
        .collect();
    Standardized { x, mean, scale }
}

fn objective_value<T: Scalar>(rows: &[TrainingRow<T>], x: &[Vec<T>], beta: &[T], bias: T, l2: T, sw: T) -> T {
    let obj = Objective::WeightedLogloss;
    let data: T = rows
        .iter()
        .zip(x)
        .map(|(r, xi)| {
            let m = bias + xi.iter().zip(beta).map(|(&a, &b)| a * b).sum::<T>();
            obj.loss(m, r.target, r.weight)
        })
        .sum();
    let ridge: T = beta.iter().map(|&b| b * b).sum();
    data / sw + T::lit(0.5) * l2 * ridge
}

/// Full-batch gradient descent on the weighted log-loss normalized by total
/// weight, with step halving whenever a step would raise the objective.
pub fn train_logistic<T: Scalar>(rows: &[TrainingRow<T>], config: &LogisticConfig<T>) -> Result<Model<T>, LearnError> {
    let dim = validate_rows(rows)?;
    check_binary(rows)?;
    if !(config.lr > T::zero()) || config.l2 < T::zero() {
        return Err(LearnError::Config("logistic lr must be positive and l2 non-negative".into()));
    }
    let st = standardize(rows, dim);
    let sw: T = rows.iter().map(|r| r.weight).sum();
    let mut beta = vec![T::zero(); dim];
    let mut bias = T::zero();
    let mut loss = objective_value(rows, &st.x, &beta, bias, config.l2, sw);
    let mut history = vec![loss.to_f64_lossy()];
    let mut step = config.lr;

    for _ in 0..config.epochs {
        let mut g_beta = vec![T::zero(); dim];
        let mut g_bias = T::zero();
        for (r, xi) in rows.iter().zip(&st.x) {
            let m = bias + xi.iter().zip(&beta).map(|(&a, &b)| a * b).sum::<T>();
            let resid = r.weight * (sigmoid(m) - r.target);
            g_bias += resid;
            for (g, &v) in g_beta.iter_mut().zip(xi) {
                *g += resid * v;
            }
        }
        g_bias /= sw;
        for (g, &b) in g_beta.iter_mut().zip(&beta) {
            *g = *g / sw + config.l2 * b;
        }

        let mut accepted = false;
        for _ in 0..40 {
            let cand_beta: Vec<T> = beta.iter().zip(&g_beta).map(|(&b, &g)| b - step * g).collect();
            let cand_bias = bias - step * g_bias;
            let cand_loss = objective_value(rows, &st.x, &cand_beta, cand_bias, config.l2, sw);
            if cand_loss <= loss {
                beta = cand_beta;
                bias = cand_bias;
                loss = cand_loss;
                accepted = true;
                break;
            }
            step = step * T::lit(0.5);
        }
        history.push(loss.to_f64_lossy());
        if !accepted {
            break;
        }
    }

    let coefficients: Vec<T> = beta.iter().zip(&st.scale).map(|(&b, &s)| b / s).collect();
    let intercept = bias - coefficients.iter().zip(&st.mean).map(|(&c, &m)| c * m).sum::<T>();
    Ok(Model {
        format_version: MODEL_FORMAT_VERSION,
        kind: ModelKind::Logistic,
        objective: Objective::WeightedLogloss,
        feature_names: Vec::new(),
        n_features: dim,
        params: Params::Logistic { coefficients, intercept },
        meta: TrainingMeta {
            seed: config.seed,
            hyperparameters: vec![
                ("l2".into(), config.l2.to_f64_lossy()),
                ("epochs".into(), config.epochs as f64),
                ("lr".into(), config.lr.to_f64_lossy()),
            ],
            loss_history: history,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> Vec<TrainingRow<f64>> {
        let mut rows = Vec::new();
        for i in 0..20 {
            let a = i as f64 / 4.0;
            let b = ((i * 7) % 11) as f64 / 3.0;
            let y = if a + 0.5 * b > 4.0 { 1.0 } else { 0.0 };
            rows.push(TrainingRow::new(vec![a, b], y, format!("p{}", i % 3)));
        }
        rows
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let rows = separable();
        let cfg = LogisticConfig { l2: 0.0, epochs: 2000, ..Default::default() };
        let m = train_logistic(&rows, &cfg).unwrap();
        for r in &rows {
            let p = m.predict(&r.features).unwrap();
            assert_eq!(p > 0.5, r.target == 1.0, "row {:?} p={p}", r.features);
        }
    }

    #[test]
    fn loss_is_non_increasing() {
        let m = train_logistic(&separable(), &LogisticConfig { lr: 50.0, ..Default::default() }).unwrap();
        for w in m.meta.loss_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn single_class_stays_finite() {
        let rows: Vec<_> = (0..10).map(|i| TrainingRow::new(vec![i as f64], 1.0, "a")).collect();
        let m = train_logistic(&rows, &LogisticConfig { l2: 0.1, ..Default::default() }).unwrap();
        let Params::Logistic { coefficients, intercept } = &m.params else { panic!() };
        assert!(coefficients.iter().all(|c| c.is_finite()) && intercept.is_finite());
        assert!(m.predict(&[4.0]).unwrap() > 0.5);
    }

    #[test]
    fn uniform_weight_scaling_leaves_optimum() {
        let rows = separable();
        let doubled: Vec<_> = rows.iter().cloned().map(|mut r| {
            r.weight *= 2.0;
            r
        }).collect();
        let cfg = LogisticConfig { l2: 0.01, epochs: 300, ..Default::default() };
        let a = train_logistic(&rows, &cfg).unwrap();
        let b = train_logistic(&doubled, &cfg).unwrap();
        let (Params::Logistic { coefficients: ca, .. }, Params::Logistic { coefficients: cb, .. }) = (&a.params, &b.params) else {
            panic!()
        };
        for (x, y) in ca.iter().zip(cb) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_binary_and_is_deterministic() {
        let rows = vec![TrainingRow::new(vec![1.0], 0.3, "a")];
        assert!(matches!(train_logistic(&rows, &LogisticConfig::default()), Err(LearnError::NonBinaryTarget { .. })));
        let a = train_logistic(&separable(), &LogisticConfig::default()).unwrap();
        let b = train_logistic(&separable(), &LogisticConfig::default()).unwrap();
        assert_eq!(a, b);
    }
}
