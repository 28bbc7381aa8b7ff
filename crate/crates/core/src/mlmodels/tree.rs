//! CART-style binary trees shared by the forest and the boosted ensemble.
//!
//! Splits minimize squared error of the node targets. For 0/1 targets this
//! is proportional to Gini impurity, so one criterion serves both the
//! classification trees of the forest and the residual trees of boosting.
//! Candidate thresholds are midpoints between consecutive distinct values;
//! equal gains resolve to the lowest feature index, then lowest threshold.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Flat node arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// One split on `feature` with two leaves.
    pub fn stump(feature: usize, threshold: f64, left: f64, right: f64) -> Self {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    threshold,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: left },
                Node::Leaf { value: right },
            ],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    /// Structural sanity: child indices in range and features below `dim`.
    pub fn is_well_formed(&self, dim: usize) -> bool {
        !self.nodes.is_empty()
            && self.nodes.iter().all(|n| match n {
                Node::Leaf { value } => value.is_finite(),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => *feature < dim && threshold.is_finite() && *left < self.nodes.len() && *right < self.nodes.len(),
            })
    }
}

pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

/// Grows a tree over `samples` (indices into `xs`, repeats allowed for
/// bootstrap draws). `leaf_value` maps the samples reaching a leaf to its
/// output.
pub fn grow<R, L>(
    xs: &[[f64; 9]],
    targets: &[f64],
    samples: Vec<usize>,
    params: &TreeParams,
    rng: &mut R,
    leaf_value: &L,
) -> Tree
where
    R: Rng,
    L: Fn(&[usize]) -> f64,
{
    let mut tree = Tree { nodes: Vec::new() };
    // (node slot, samples, depth)
    let mut stack = vec![(0usize, samples, 0usize)];
    tree.nodes.push(Node::Leaf { value: 0.0 });
    while let Some((slot, idx, depth)) = stack.pop() {
        let split = if depth < params.max_depth && idx.len() >= params.min_samples_split.max(2) {
            best_split(xs, targets, &idx, params.max_features, rng)
        } else {
            None
        };
        match split {
            None => tree.nodes[slot] = Node::Leaf { value: leaf_value(&idx) },
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][feature] <= threshold);
                let left = tree.nodes.len();
                let right = left + 1;
                tree.nodes.push(Node::Leaf { value: 0.0 });
                tree.nodes.push(Node::Leaf { value: 0.0 });
                tree.nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((right, r, depth + 1));
                stack.push((left, l, depth + 1));
            }
        }
    }
    tree
}

fn best_split<R: Rng>(
    xs: &[[f64; 9]],
    targets: &[f64],
    idx: &[usize],
    max_features: Option<usize>,
    rng: &mut R,
) -> Option<(usize, f64)> {
    let d = 9;
    let mut features: Vec<usize> = match max_features {
        Some(k) if k < d => sample(rng, d, k.max(1)).into_vec(),
        _ => (0..d).collect(),
    };
    features.sort_unstable();

    let n = idx.len() as f64;
    let total: f64 = idx.iter().map(|&i| targets[i]).sum();
    let parent = total * total / n;
    let mut best: Option<(usize, f64)> = None;
    let mut best_gain = 1e-12;

    let mut order = idx.to_vec();
    for f in features {
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        let mut left_sum = 0.0;
        for k in 0..order.len() - 1 {
            left_sum += targets[order[k]];
            let (lo, hi) = (xs[order[k]][f], xs[order[k + 1]][f]);
            if lo == hi {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - parent;
            if gain > best_gain {
                best_gain = gain;
                best = Some((f, lo + (hi - lo) / 2.0));
            }
        }
    }
    best
}
