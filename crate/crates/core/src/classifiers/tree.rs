use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{argmax_lowest, Dataset};

pub fn gini_impurity(counts: &[usize]) -> Result<f64> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyNode);
    }
    let n = n as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

fn gini_unchecked(counts: &[usize], n: usize) -> f64 {
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        counts: Vec<usize>,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// Training counts that reached this node.
        counts: Vec<usize>,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn counts(&self) -> &[usize] {
        match self {
            Node::Leaf { counts } | Node::Split { counts, .. } => counts,
        }
    }

    /// Majority category, lowest index on ties.
    pub fn label(&self) -> usize {
        argmax_lowest(self.counts())
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { .. } => return node.label(),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub n_categories: usize,
    pub root: Node,
}

impl DecisionTree {
    pub fn predict(&self, x: &[f64]) -> usize {
        self.root.predict(x)
    }
}

struct Grower<'a> {
    data: &'a Dataset,
    params: &'a TreeParams,
    rng: ChaCha8Rng,
    features: Vec<usize>,
}

impl Grower<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.data.n_categories];
        for &r in rows {
            c[self.data.labels[r]] += 1;
        }
        c
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> Node {
        let counts = self.counts(rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_hit = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_hit || rows.len() < self.params.min_samples_split.max(2) {
            return Node::Leaf { counts };
        }
        let Some((feature, threshold)) = self.best_split(rows, &counts) else {
            return Node::Leaf { counts };
        };
        let x = &self.data.rows;
        let mid = partition(rows, |&r| x[r][feature] <= threshold);
        let (l, r) = rows.split_at_mut(mid);
        let left = Box::new(self.grow(l, depth + 1));
        let right = Box::new(self.grow(r, depth + 1));
        Node::Split {
            feature,
            threshold,
            counts,
            left,
            right,
        }
    }

    /// Lowest weighted child Gini over the candidate features, at midpoints
    /// between consecutive distinct values. Only splits that lower the
    /// impurity are returned.
    fn best_split(&mut self, rows: &[usize], counts: &[usize]) -> Option<(usize, f64)> {
        let n = rows.len();
        let parent = gini_unchecked(counts, n);
        let k = self.params.max_features.unwrap_or(self.features.len()).clamp(1, self.features.len());
        let candidates: Vec<usize> = if k < self.features.len() {
            let (chosen, _) = self.features.partial_shuffle(&mut self.rng, k);
            let mut c = chosen.to_vec();
            c.sort_unstable();
            c
        } else {
            self.features.clone()
        };

        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = rows.to_vec();
        let mut left = vec![0usize; counts.len()];
        for &f in &candidates {
            let x = &self.data.rows;
            sorted.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            left.iter_mut().for_each(|c| *c = 0);
            for i in 0..n - 1 {
                left[self.data.labels[sorted[i]]] += 1;
                let (v, next) = (x[sorted[i]][f], x[sorted[i + 1]][f]);
                if next <= v {
                    continue;
                }
                let nl = i + 1;
                let right: Vec<usize> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let impurity = (nl as f64 * gini_unchecked(&left, nl)
                    + (n - nl) as f64 * gini_unchecked(&right, n - nl))
                    / n as f64;
                if best.is_none_or(|b| impurity < b.0) {
                    let mut t = 0.5 * (v + next);
                    if t >= next {
                        t = v;
                    }
                    best = Some((impurity, f, t));
                }
            }
        }
        best.filter(|b| b.0 < parent - 1e-12).map(|b| (b.1, b.2))
    }
}

fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..rows.len() {
        if pred(&rows[i]) {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

/// Greedy CART growth on the given rows (duplicates allowed, as in a
/// bootstrap sample). The seed only matters when `max_features` limits the
/// features examined per split.
pub fn grow_tree(data: &Dataset, rows: &[usize], params: &TreeParams, seed: u64) -> Result<DecisionTree> {
    if rows.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut g = Grower {
        data,
        params,
        rng: ChaCha8Rng::seed_from_u64(seed),
        features: (0..data.n_features()).collect(),
    };
    let mut rows = rows.to_vec();
    let root = g.grow(&mut rows, 0);
    Ok(DecisionTree {
        n_features: data.n_features(),
        n_categories: data.n_categories,
        root,
    })
}

pub fn train_tree(data: &Dataset, params: &TreeParams, seed: u64) -> Result<DecisionTree> {
    if data.present_categories() < 2 {
        return Err(Error::TooFewCategories(data.present_categories()));
    }
    let rows: Vec<usize> = (0..data.len()).collect();
    grow_tree(data, &rows, params, seed)
}

/// Reduced-error pruning: bottom-up, a subtree becomes a leaf (majority of
/// its training counts) whenever that does not lower accuracy on the
/// pruning rows reaching it. Repeated until nothing changes.
pub fn prune_tree(tree: &DecisionTree, pruning: &Dataset) -> Result<DecisionTree> {
    if pruning.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut root = tree.root.clone();
    let all: Vec<usize> = (0..pruning.len()).collect();
    loop {
        let mut changed = false;
        prune_node(&mut root, pruning, &all, &mut changed);
        if !changed {
            break;
        }
    }
    Ok(DecisionTree {
        root,
        ..tree.clone()
    })
}

/// Returns the number of correct predictions of the (pruned) subtree.
fn prune_node(node: &mut Node, data: &Dataset, rows: &[usize], changed: &mut bool) -> usize {
    let Node::Split {
        feature,
        threshold,
        left,
        right,
        counts,
    } = node
    else {
        let label = node.label();
        return rows.iter().filter(|&&r| data.labels[r] == label).count();
    };
    let (lr, rr): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| data.rows[r][*feature] <= *threshold);
    let subtree = prune_node(left, data, &lr, changed) + prune_node(right, data, &rr, changed);
    let label = argmax_lowest(counts);
    let as_leaf = rows.iter().filter(|&&r| data.labels[r] == label).count();
    if as_leaf >= subtree {
        *node = Node::Leaf { counts: counts.clone() };
        *changed = true;
        as_leaf
    } else {
        subtree
    }
}

/// Stratified split: roughly 2/3 of each category for growing, the rest for
/// pruning. Categories with a single row go to the growing set.
pub fn grow_prune_split(data: &Dataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut grow, mut prune) = (Vec::new(), Vec::new());
    for c in 0..data.n_categories {
        let mut rows: Vec<usize> = (0..data.len()).filter(|&r| data.labels[r] == c).collect();
        rows.shuffle(&mut rng);
        let n_grow = ((rows.len() as f64 * 2.0 / 3.0).round() as usize).max(1).min(rows.len());
        grow.extend_from_slice(&rows[..n_grow]);
        prune.extend_from_slice(&rows[n_grow..]);
    }
    grow.sort_unstable();
    prune.sort_unstable();
    (grow, prune)
}

/// Standalone tree: grow on 2/3, prune on the remaining 1/3.
pub fn train_pruned_tree(data: &Dataset, params: &TreeParams, seed: u64) -> Result<DecisionTree> {
    if data.present_categories() < 2 {
        return Err(Error::TooFewCategories(data.present_categories()));
    }
    let (grow, prune) = grow_prune_split(data, seed);
    let tree = grow_tree(data, &grow, params, seed)?;
    if prune.is_empty() {
        return Ok(tree);
    }
    prune_tree(&tree, &data.subset(&prune))
}
