use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::MODEL_FORMAT_VERSION;
use super::{total_loss, validate_rows, LearnError, Model, ModelKind, Objective, Params, TrainingMeta, TrainingRow};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Node<T> {
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: T, left: usize, right: usize },
    Leaf { value: T },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tree<T> {
    pub fn eval(&self, x: &[T]) -> T {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn scale(&mut self, factor: T) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound = "T: Scalar")]
pub struct GbtConfig<T> {
    pub trees: usize,
    pub depth: usize,
    pub lr: T,
    /// L2 penalty on leaf values.
    pub lambda: T,
    /// Minimum hessian sum on each side of a split.
    pub min_child_hessian: T,
    /// Row fraction sampled per tree.
    pub subsample: T,
    pub seed: u64,
}

impl<T: Scalar> Default for GbtConfig<T> {
    fn default() -> Self {
        GbtConfig {
            trees: 100,
            depth: 4,
            lr: T::lit(0.1),
            lambda: T::one(),
            min_child_hessian: T::zero(),
            subsample: T::one(),
            seed: 0,
        }
    }
}

struct Grower<'a, T> {
    cols: &'a [Vec<T>],
    grad: &'a [T],
    hess: &'a [T],
    cfg: &'a GbtConfig<T>,
    goes_left: Vec<bool>,
    nodes: Vec<Node<T>>,
}

struct Best<T> {
    feature: usize,
    threshold: T,
    gain: T,
}

impl<'a, T: Scalar> Grower<'a, T> {
    fn score(&self, g: T, h: T) -> T {
        g * g / (h + self.cfg.lambda)
    }

    fn best_split(&self, lists: &[Vec<u32>], g: T, h: T) -> Option<Best<T>> {
        let parent = self.score(g, h);
        let mut best: Option<Best<T>> = None;
        for (f, list) in lists.iter().enumerate() {
            let col = &self.cols[f];
            let (mut gl, mut hl) = (T::zero(), T::zero());
            for k in 0..list.len() - 1 {
                let i = list[k] as usize;
                gl += self.grad[i];
                hl += self.hess[i];
                let (a, b) = (col[i], col[list[k + 1] as usize]);
                if !(a < b) {
                    continue;
                }
                let hr = h - hl;
                if hl < self.cfg.min_child_hessian || hr < self.cfg.min_child_hessian {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(g - gl, hr) - parent;
                if gain > T::zero() && best.as_ref().map_or(true, |bst| gain > bst.gain) {
                    let mid = a + (b - a) * T::lit(0.5);
                    let threshold = if mid < b { mid } else { a };
                    best = Some(Best { feature: f, threshold, gain });
                }
            }
        }
        best
    }

    fn grow(&mut self, lists: Vec<Vec<u32>>, depth: usize) -> usize {
        let (mut g, mut h) = (T::zero(), T::zero());
        for &i in &lists[0] {
            g += self.grad[i as usize];
            h += self.hess[i as usize];
        }
        let id = self.nodes.len();
        let leaf = Node::Leaf { value: -g / (h + self.cfg.lambda) * self.cfg.lr };
        if depth >= self.cfg.depth || lists[0].len() < 2 {
            self.nodes.push(leaf);
            return id;
        }
        let Some(best) = self.best_split(&lists, g, h) else {
            self.nodes.push(leaf);
            return id;
        };
        let col = &self.cols[best.feature];
        for &i in &lists[0] {
            self.goes_left[i as usize] = col[i as usize] <= best.threshold;
        }
        let mut left_lists = Vec::with_capacity(lists.len());
        let mut right_lists = Vec::with_capacity(lists.len());
        for list in lists {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| self.goes_left[i as usize]);
            left_lists.push(l);
            right_lists.push(r);
        }
        self.nodes.push(Node::Split { feature: best.feature, threshold: best.threshold, left: 0, right: 0 });
        let left = self.grow(left_lists, depth + 1);
        let right = self.grow(right_lists, depth + 1);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }
}

/// Second-order gradient boosting with exact greedy splits.
///
/// With `trees == 0` the result is the constant model at the weighted base
/// score. Each tree is shrunk by halving if it would raise the weighted
/// training loss, so the loss history never increases.
pub fn train_gbt<T: Scalar>(rows: &[TrainingRow<T>], objective: Objective, cfg: &GbtConfig<T>) -> Result<Model<T>, LearnError> {
    let dim = validate_rows(rows)?;
    if cfg.depth < 1 {
        return Err(LearnError::Config("tree depth must be at least 1".into()));
    }
    if !(cfg.lr > T::zero()) || cfg.lambda < T::zero() || !(cfg.subsample > T::zero() && cfg.subsample <= T::one()) {
        return Err(LearnError::Config("need lr > 0, lambda >= 0 and subsample in (0, 1]".into()));
    }
    if objective == Objective::WeightedLogloss {
        if let Some(i) = rows.iter().position(|r| r.target < T::zero() || r.target > T::one()) {
            return Err(LearnError::NonBinaryTarget { row: i, value: rows[i].target.to_f64_lossy() });
        }
    }
    let n = rows.len();
    let cols: Vec<Vec<T>> = (0..dim).map(|f| rows.iter().map(|r| r.features[f]).collect()).collect();
    let presorted: Vec<Vec<u32>> = cols
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].partial_cmp(&col[b as usize]).unwrap());
            idx
        })
        .collect();

    let base = objective.base_margin(rows.iter().map(|r| (r.target, r.weight)));
    let mut margins = vec![base; n];
    let mut loss = total_loss(objective, rows, &margins);
    let mut history = vec![loss.to_f64_lossy()];
    let mut trees = Vec::with_capacity(cfg.trees);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut grad, mut hess) = (vec![T::zero(); n], vec![T::zero(); n]);
    let sample_p = cfg.subsample.to_f64_lossy();

    for _ in 0..cfg.trees {
        for (i, r) in rows.iter().enumerate() {
            let (g, h) = objective.grad_hess(margins[i], r.target, r.weight);
            grad[i] = g;
            hess[i] = h;
        }
        let lists: Vec<Vec<u32>> = if sample_p < 1.0 {
            let keep: Vec<bool> = (0..n).map(|_| rng.gen::<f64>() < sample_p).collect();
            presorted.iter().map(|l| l.iter().copied().filter(|&i| keep[i as usize]).collect()).collect()
        } else {
            presorted.clone()
        };
        if lists.first().map_or(true, |l| l.is_empty()) {
            history.push(loss.to_f64_lossy());
            continue;
        }
        let mut grower = Grower { cols: &cols, grad: &grad, hess: &hess, cfg, goes_left: vec![false; n], nodes: Vec::new() };
        grower.grow(lists, 0);
        let mut tree = Tree { nodes: grower.nodes };

        let contrib: Vec<T> = rows.iter().map(|r| tree.eval(&r.features)).collect();
        let mut factor = T::one();
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<T> = margins.iter().zip(&contrib).map(|(&m, &c)| m + factor * c).collect();
            let cand_loss = total_loss(objective, rows, &cand);
            if cand_loss <= loss {
                accepted = Some((cand, cand_loss));
                break;
            }
            factor = factor * T::lit(0.5);
        }
        if let Some((cand, cand_loss)) = accepted {
            if factor != T::one() {
                tree.scale(factor);
            }
            margins = cand;
            loss = cand_loss;
            trees.push(tree);
        }
        history.push(loss.to_f64_lossy());
    }

    Ok(Model {
        format_version: MODEL_FORMAT_VERSION,
        kind: ModelKind::Gbt,
        objective,
        feature_names: Vec::new(),
        n_features: dim,
        params: Params::Gbt { base_margin: base, trees },
        meta: TrainingMeta {
            seed: cfg.seed,
            hyperparameters: vec![
                ("trees".into(), cfg.trees as f64),
                ("depth".into(), cfg.depth as f64),
                ("lr".into(), cfg.lr.to_f64_lossy()),
                ("lambda".into(), cfg.lambda.to_f64_lossy()),
                ("subsample".into(), cfg.subsample.to_f64_lossy()),
            ],
            loss_history: history,
        },
    })
}
