//! From-scratch CART: greedy best-split decision trees for
//! classification (Gini) and for gradient boosting (Newton gain).
//!
//! Split thresholds sit at midpoints between consecutive distinct sorted
//! feature values. Candidate features and thresholds are scanned in
//! ascending order and a split must strictly improve the best gain, so
//! equal-gain ties resolve to the lowest feature index, then the lowest
//! threshold.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{FeatureSubsample, TreeParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Class distribution (classification) or a single additive value
        /// (gradient boosting).
        values: Vec<f64>,
    },
}

/// Binary decision tree; `nodes[0]` is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    /// Walks the tree: `x[feature] <= threshold` goes left.
    pub fn leaf_values(&self, x: &[f64]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { values } => return values,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Class vote of a classification tree (argmax of the leaf
    /// distribution, ties to the lowest class index).
    pub fn vote(&self, x: &[f64]) -> usize {
        argmax(self.leaf_values(x))
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[TreeNode], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + rec(nodes, *left).max(rec(nodes, *right))
                }
            }
        }
        rec(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

/// Argmax with ties to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let mut sum_sq = 0.0;
    for &c in counts {
        let p = c / total;
        sum_sq += p * p;
    }
    1.0 - sum_sq
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Candidate feature indices for one split, ascending.
fn candidate_features(
    d: usize,
    subsample: FeatureSubsample,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    match subsample {
        FeatureSubsample::All => (0..d).collect(),
        FeatureSubsample::Sqrt => {
            let m = ((d as f64).sqrt().floor() as usize).max(1).min(d);
            let mut all: Vec<usize> = (0..d).collect();
            all.shuffle(rng);
            let mut picked: Vec<usize> = all.into_iter().take(m).collect();
            picked.sort_unstable();
            picked
        }
    }
}

/// Trains a Gini classification tree over the working set `idx` (indices
/// into `x`/`y`; duplicates act as repeated samples). `weights`, when
/// given, are per-sample weights indexed like `x`.
pub(crate) fn train_classification_tree(
    x: &[Vec<f64>],
    y: &[usize],
    weights: Option<&[f64]>,
    idx: Vec<usize>,
    n_classes: usize,
    params: &TreeParams,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Tree {
    let d = x[0].len();
    let mut nodes = Vec::new();
    grow_classification(x, y, weights, idx, n_classes, d, params, rng, 0, &mut nodes);
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow_classification(
    x: &[Vec<f64>],
    y: &[usize],
    weights: Option<&[f64]>,
    idx: Vec<usize>,
    n_classes: usize,
    d: usize,
    params: &TreeParams,
    rng: &mut rand_chacha::ChaCha8Rng,
    depth: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let w_of = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut counts = vec![0.0f64; n_classes];
    let mut total_w = 0.0;
    for &i in &idx {
        counts[y[i]] += w_of(i);
        total_w += w_of(i);
    }
    let node_gini = gini(&counts, total_w);

    let make_leaf = |nodes: &mut Vec<TreeNode>, counts: Vec<f64>, total_w: f64| -> usize {
        let values = counts
            .iter()
            .map(|c| c / total_w.max(f64::MIN_POSITIVE))
            .collect();
        nodes.push(TreeNode::Leaf { values });
        nodes.len() - 1
    };

    if depth >= params.max_depth || idx.len() < params.min_samples_split || node_gini == 0.0 {
        return make_leaf(nodes, counts, total_w);
    }

    let features = candidate_features(d, params.features_per_split, rng);
    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<usize> = Vec::with_capacity(idx.len());
    for &f in &features {
        sorted.clear();
        sorted.extend_from_slice(&idx);
        sorted.sort_by(|&a, &b| x[a][f].partial_cmp(&x[b][f]).unwrap());
        let mut left_counts = vec![0.0f64; n_classes];
        let mut left_w = 0.0;
        for pos in 0..sorted.len() - 1 {
            let i = sorted[pos];
            left_counts[y[i]] += w_of(i);
            left_w += w_of(i);
            let v = x[i][f];
            let v_next = x[sorted[pos + 1]][f];
            if v == v_next {
                continue;
            }
            let left_n = pos + 1;
            let right_n = sorted.len() - left_n;
            if left_n < params.min_samples_leaf || right_n < params.min_samples_leaf {
                continue;
            }
            let right_counts: Vec<f64> = counts
                .iter()
                .zip(&left_counts)
                .map(|(t, l)| t - l)
                .collect();
            let right_w = total_w - left_w;
            let weighted_child = (left_w * gini(&left_counts, left_w)
                + right_w * gini(&right_counts, right_w))
                / total_w;
            let gain = node_gini - weighted_child;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    gain,
                    feature: f,
                    threshold: (v + v_next) / 2.0,
                });
            }
        }
    }

    let Some(best) = best else {
        return make_leaf(nodes, counts, total_w);
    };
    if best.gain <= params.min_split_loss {
        return make_leaf(nodes, counts, total_w);
    }

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| x[i][best.feature] <= best.threshold);

    let here = nodes.len();
    nodes.push(TreeNode::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: 0,
        right: 0,
    });
    let left = grow_classification(
        x,
        y,
        weights,
        left_idx,
        n_classes,
        d,
        params,
        rng,
        depth + 1,
        nodes,
    );
    let right = grow_classification(
        x,
        y,
        weights,
        right_idx,
        n_classes,
        d,
        params,
        rng,
        depth + 1,
        nodes,
    );
    if let TreeNode::Split {
        left: l, right: r, ..
    } = &mut nodes[here]
    {
        *l = left;
        *r = right;
    }
    here
}

/// Trains a regression tree on per-sample gradients and Hessians; splits
/// maximize the Newton gain and must exceed `params.min_split_loss`
/// (gamma). Leaves carry the Newton step `-G / (H + lambda)`.
pub(crate) fn train_gradient_tree(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    params: &TreeParams,
    lambda: f64,
) -> Tree {
    let mut nodes = Vec::new();
    let idx: Vec<usize> = (0..x.len()).collect();
    grow_gradient(x, grad, hess, idx, params, lambda, 0, &mut nodes);
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow_gradient(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    idx: Vec<usize>,
    params: &TreeParams,
    lambda: f64,
    depth: usize,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let g: f64 = idx.iter().map(|&i| grad[i]).sum();
    let h: f64 = idx.iter().map(|&i| hess[i]).sum();
    let leaf_score = |g: f64, h: f64| g * g / (h + lambda);

    let make_leaf = |nodes: &mut Vec<TreeNode>| -> usize {
        nodes.push(TreeNode::Leaf {
            values: vec![-g / (h + lambda)],
        });
        nodes.len() - 1
    };

    if depth >= params.max_depth || idx.len() < params.min_samples_split {
        return make_leaf(nodes);
    }

    let d = x[0].len();
    let mut best: Option<BestSplit> = None;
    let mut sorted: Vec<usize> = Vec::with_capacity(idx.len());
    #[allow(clippy::needless_range_loop)] // f is a column index into x
    for f in 0..d {
        sorted.clear();
        sorted.extend_from_slice(&idx);
        sorted.sort_by(|&a, &b| x[a][f].partial_cmp(&x[b][f]).unwrap());
        let mut gl = 0.0;
        let mut hl = 0.0;
        for pos in 0..sorted.len() - 1 {
            let i = sorted[pos];
            gl += grad[i];
            hl += hess[i];
            let v = x[i][f];
            let v_next = x[sorted[pos + 1]][f];
            if v == v_next {
                continue;
            }
            let left_n = pos + 1;
            let right_n = sorted.len() - left_n;
            if left_n < params.min_samples_leaf || right_n < params.min_samples_leaf {
                continue;
            }
            let gain = 0.5 * (leaf_score(gl, hl) + leaf_score(g - gl, h - hl) - leaf_score(g, h));
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    gain,
                    feature: f,
                    threshold: (v + v_next) / 2.0,
                });
            }
        }
    }

    let Some(best) = best else {
        return make_leaf(nodes);
    };
    if best.gain <= params.min_split_loss {
        return make_leaf(nodes);
    }

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
        .into_iter()
        .partition(|&i| x[i][best.feature] <= best.threshold);

    let here = nodes.len();
    nodes.push(TreeNode::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: 0,
        right: 0,
    });
    let left = grow_gradient(x, grad, hess, left_idx, params, lambda, depth + 1, nodes);
    let right = grow_gradient(x, grad, hess, right_idx, params, lambda, depth + 1, nodes);
    if let TreeNode::Split {
        left: l, right: r, ..
    } = &mut nodes[here]
    {
        *l = left;
        *r = right;
    }
    here
}
