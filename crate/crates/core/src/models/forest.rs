//! Random forest of CART trees split on weighted Gini impurity.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_input_dim, check_training_data, Predictor};
use crate::error::{Error, Result};
use crate::util::{rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features drawn (without replacement) as split candidates at each node.
    pub max_features: usize,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 200,
            max_depth: 80,
            max_features: 4,
            min_samples_leaf: 4,
        }
    }
}

impl ForestParams {
    pub fn validate(&self, dim: Option<usize>) -> Result<()> {
        if self.n_trees == 0
            || self.max_depth == 0
            || self.max_features == 0
            || self.min_samples_leaf == 0
        {
            return Err(Error::domain(
                "forest n_trees, max_depth, max_features and min_samples_leaf must be positive",
            ));
        }
        if let Some(d) = dim {
            if self.max_features > d {
                return Err(Error::domain(format!(
                    "max_features {} exceeds the feature dimension {d}",
                    self.max_features
                )));
            }
        }
        Ok(())
    }
}

/// Serialised as `{feature, threshold, left, right}` or `{leaf_counts}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Bootstrap counts of the `-1` and `+1` classes.
        leaf_counts: [u32; 2],
    },
}

impl TreeNode {
    /// `+1` when the reached leaf holds strictly more positives than negatives.
    pub fn vote(&self, x: &[f64]) -> i8 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
                TreeNode::Leaf { leaf_counts } => {
                    return if leaf_counts[1] > leaf_counts[0] {
                        1
                    } else {
                        -1
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Leaf { .. } => 0,
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        match self {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= dim || !threshold.is_finite() {
                    return Err(Error::domain("tree split refers to an invalid feature"));
                }
                left.check(dim)?;
                right.check(dim)
            }
            TreeNode::Leaf { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<TreeNode>,
    importances: Vec<f64>,
}

impl ForestModel {
    /// Normalised mean decrease in Gini impurity; non-negative, sums to one.
    pub fn feature_importances(&self) -> &[f64] {
        &self.importances
    }

    pub(crate) fn check(&self) -> Result<()> {
        self.params.validate(Some(self.n_features))?;
        if self.trees.is_empty() || self.importances.len() != self.n_features {
            return Err(Error::domain(
                "forest has no trees or mismatched importances",
            ));
        }
        self.trees.iter().try_for_each(|t| t.check(self.n_features))
    }
}

impl Predictor for ForestModel {
    /// Fraction of trees voting `+1`.
    fn score(&self, x: &[f64]) -> Result<f64> {
        check_input_dim(x, self.n_features)?;
        let pos = self.trees.iter().filter(|t| t.vote(x) > 0).count();
        Ok(pos as f64 / self.trees.len() as f64)
    }

    fn threshold(&self) -> f64 {
        0.5
    }
}

pub fn gini(neg: f64, pos: f64) -> f64 {
    let n = neg + pos;
    if n <= 0.0 {
        return 0.0;
    }
    let (p0, p1) = (neg / n, pos / n);
    1.0 - p0 * p0 - p1 * p1
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [i8],
    params: &'a ForestParams,
    dim: usize,
    total: f64,
    importance: Vec<f64>,
    rng: Rng,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    child_impurity: f64,
    split_at: usize,
    order: Vec<usize>,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> [u32; 2] {
        let mut c = [0u32; 2];
        for &i in idx {
            c[usize::from(self.y[i] > 0)] += 1;
        }
        c
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> TreeNode {
        let counts = self.counts(&idx);
        let n = idx.len();
        let impurity = gini(f64::from(counts[0]), f64::from(counts[1]));
        if impurity == 0.0 || depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf
        {
            return TreeNode::Leaf {
                leaf_counts: counts,
            };
        }
        let candidates = sample(&mut self.rng, self.dim, self.params.max_features).into_vec();
        let Some(best) = self.best_split(&idx, &candidates) else {
            return TreeNode::Leaf {
                leaf_counts: counts,
            };
        };
        let weight = n as f64 / self.total;
        self.importance[best.feature] += weight * (impurity - best.child_impurity).max(0.0);

        let mut order = best.order;
        let right_idx = order.split_off(best.split_at);
        let left = self.grow(order, depth + 1);
        let right = self.grow(right_idx, depth + 1);
        TreeNode::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Lowest weighted child impurity over the candidate features; ties keep
    /// the earlier candidate and the lower threshold.
    fn best_split(&self, idx: &[usize], candidates: &[usize]) -> Option<BestSplit> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let total = self.counts(idx);
        let mut best: Option<BestSplit> = None;
        for &f in candidates {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            let mut left = [0u32; 2];
            let mut found: Option<(usize, f64, f64)> = None;
            for k in 1..n {
                left[usize::from(self.y[order[k - 1]] > 0)] += 1;
                let (lo, hi) = (self.x[order[k - 1]][f], self.x[order[k]][f]);
                if lo == hi || k < min_leaf || n - k < min_leaf {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let nl = k as f64;
                let nr = (n - k) as f64;
                let child = (nl * gini(f64::from(left[0]), f64::from(left[1]))
                    + nr * gini(f64::from(right[0]), f64::from(right[1])))
                    / n as f64;
                if found.is_none_or(|(_, _, c)| child < c) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    found = Some((k, threshold, child));
                }
            }
            if let Some((k, threshold, child)) = found {
                if best.as_ref().is_none_or(|b| child < b.child_impurity) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        child_impurity: child,
                        split_at: k,
                        order,
                    });
                }
            }
        }
        best
    }
}

fn grow_tree(
    x: &[Vec<f64>],
    y: &[i8],
    params: &ForestParams,
    dim: usize,
    seed: u64,
) -> (TreeNode, Vec<f64>) {
    let mut rng = rng_from_seed(seed);
    let n = x.len();
    let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut grower = Grower {
        x,
        y,
        params,
        dim,
        total: n as f64,
        importance: vec![0.0; dim],
        rng,
    };
    let root = grower.grow(bootstrap, 0);
    (root, grower.importance)
}

/// Each tree draws its bootstrap and feature subsets from `seed ^ tree_index`.
pub fn fit(x: &[Vec<f64>], y: &[i8], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let dim = check_training_data(x, y)?;
    params.validate(Some(dim))?;
    let grown: Vec<(TreeNode, Vec<f64>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grow_tree(x, y, params, dim, seed ^ t as u64))
        .collect();

    let mut importances = vec![0.0; dim];
    for (_, imp) in &grown {
        for (acc, v) in importances.iter_mut().zip(imp) {
            *acc += v;
        }
    }
    let trees_n = params.n_trees as f64;
    importances.iter_mut().for_each(|v| *v /= trees_n);
    let sum: f64 = importances.iter().sum();
    if sum > 0.0 {
        importances.iter_mut().for_each(|v| *v /= sum);
    } else {
        importances.iter_mut().for_each(|v| *v = 1.0 / dim as f64);
    }

    Ok(ForestModel {
        params: params.clone(),
        seed,
        n_features: dim,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        importances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini(10.0, 0.0), 0.0);
        assert_eq!(gini(5.0, 5.0), 0.5);
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let y = [1, 1, 1, 1];
        let params = ForestParams {
            n_trees: 1,
            max_features: 1,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let mut g = Grower {
            x: &x,
            y: &y,
            params: &params,
            dim: 1,
            total: 4.0,
            importance: vec![0.0],
            rng: rng_from_seed(0),
        };
        assert_eq!(
            g.grow(vec![0, 1, 2, 3], 0),
            TreeNode::Leaf {
                leaf_counts: [0, 4]
            }
        );
    }

    #[test]
    fn single_feature_importance_is_one() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let y: Vec<i8> = (0..30).map(|i| if i < 15 { -1 } else { 1 }).collect();
        let p = ForestParams {
            n_trees: 10,
            max_features: 1,
            min_samples_leaf: 1,
            ..Default::default()
        };
        let m = fit(&x, &y, &p, 3).unwrap();
        assert_eq!(m.feature_importances(), &[1.0]);
    }

    #[test]
    fn unanimous_forest_scores_one() {
        let leaf = TreeNode::Leaf {
            leaf_counts: [0, 3],
        };
        let m = ForestModel {
            params: ForestParams::default(),
            seed: 0,
            n_features: 2,
            trees: vec![leaf.clone(), leaf],
            importances: vec![0.5, 0.5],
        };
        assert_eq!(m.predict(&[0.0, 0.0]).unwrap(), (1.0, 1));
    }

    #[test]
    fn max_features_above_dimension_is_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            fit(&x, &[1, -1], &ForestParams::default(), 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn depth_limit_is_respected() {
        let x: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y: Vec<i8> = (0..64)
            .map(|i| if (i / 3) % 2 == 0 { -1 } else { 1 })
            .collect();
        let p = ForestParams {
            n_trees: 5,
            max_depth: 2,
            max_features: 2,
            min_samples_leaf: 1,
        };
        let m = fit(&x, &y, &p, 1).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }
}
