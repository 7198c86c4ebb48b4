use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::tree::{grow_tree, DecisionTree, TreeParams};
use super::{argmax_lowest, Dataset};

pub const DEFAULT_TREES: usize = 500;

/// Votes per category; the sum equals the number of trees.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub votes: Vec<usize>,
}

impl VoteTally {
    pub fn total(&self) -> usize {
        self.votes.iter().sum()
    }

    /// Category with most votes, lowest index on ties.
    pub fn winner(&self) -> usize {
        argmax_lowest(&self.votes)
    }

    /// Votes of the winner and of the best other category.
    pub fn top_two(&self) -> (usize, usize) {
        let w = self.winner();
        let second = self
            .votes
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != w)
            .map(|(_, &v)| v)
            .max()
            .unwrap_or(0);
        (self.votes[w], second)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features examined per split; `None` means `ceil(sqrt(F))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: DEFAULT_TREES,
            max_features: None,
            max_depth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_features: usize,
    pub n_categories: usize,
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<DecisionTree>,
    /// Accuracy over training rows using only trees that did not see them.
    pub oob_accuracy: Option<f64>,
}

/// Per-tree seeds drawn from a ChaCha stream keyed by the master seed, so
/// each tree's randomness is independent of scheduling.
pub fn tree_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Bagged, unpruned trees with a random feature subset at every split.
pub fn train_forest(data: &Dataset, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    if params.n_trees == 0 {
        return Err(Error::InvalidParameter("a forest needs at least one tree".into()));
    }
    if data.present_categories() < 2 {
        return Err(Error::TooFewCategories(data.present_categories()));
    }
    let n = data.len();
    let f = data.n_features();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: 2,
        max_features: Some(params.max_features.unwrap_or((f as f64).sqrt().ceil() as usize).max(1)),
    };
    let seeds = tree_seeds(seed, params.n_trees);
    let grown: Vec<(DecisionTree, Vec<bool>)> = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut in_bag = vec![false; n];
            let rows: Vec<usize> = (0..n)
                .map(|_| {
                    let r = rng.random_range(0..n);
                    in_bag[r] = true;
                    r
                })
                .collect();
            let tree = grow_tree(data, &rows, &tree_params, rng.random())?;
            Ok((tree, in_bag))
        })
        .collect::<Result<_>>()?;

    let mut oob_votes = vec![vec![0usize; data.n_categories]; n];
    for (tree, in_bag) in &grown {
        for r in 0..n {
            if !in_bag[r] {
                oob_votes[r][tree.predict(&data.rows[r])] += 1;
            }
        }
    }
    let (mut seen, mut correct) = (0usize, 0usize);
    for (r, v) in oob_votes.iter().enumerate() {
        if v.iter().any(|&c| c > 0) {
            seen += 1;
            if argmax_lowest(v) == data.labels[r] {
                correct += 1;
            }
        }
    }
    Ok(ForestModel {
        n_features: f,
        n_categories: data.n_categories,
        tree_seeds: seeds,
        trees: grown.into_iter().map(|(t, _)| t).collect(),
        oob_accuracy: (seen > 0).then(|| correct as f64 / seen as f64),
    })
}

impl ForestModel {
    pub fn votes(&self, x: &[f64]) -> VoteTally {
        let mut votes = vec![0; self.n_categories];
        for t in &self.trees {
            votes[t.predict(x)] += 1;
        }
        VoteTally { votes }
    }

    pub fn classify(&self, x: &[f64]) -> usize {
        self.votes(x).winner()
    }
}

pub fn forest_votes(model: &ForestModel, x: &[f64]) -> VoteTally {
    model.votes(x)
}

pub fn forest_classify(model: &ForestModel, x: &[f64]) -> usize {
    model.classify(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..n_per {
                let centre = if c == 0 { 0.0 } else { 4.0 };
                rows.push(vec![
                    centre + rng.random_range(-1.0..1.0),
                    rng.random_range(-3.0..3.0),
                    centre + rng.random_range(-1.5..1.5),
                ]);
                labels.push(c);
            }
        }
        Dataset {
            rows,
            labels,
            n_categories: 2,
        }
    }

    #[test]
    fn tally_helpers() {
        let t = VoteTally { votes: vec![499, 1] };
        assert_eq!(t.winner(), 0);
        assert_eq!(t.top_two(), (499, 1));
        assert_eq!(VoteTally { votes: vec![250, 250] }.winner(), 0);
        assert_eq!(VoteTally { votes: vec![1, 7, 3] }.top_two(), (7, 3));
    }

    #[test]
    fn separable_oob() {
        let d = blobs(100, 3);
        let m = train_forest(&d, &ForestParams { n_trees: 60, ..Default::default() }, 11).unwrap();
        assert!(m.oob_accuracy.unwrap() >= 0.95);
        assert_eq!(m.votes(&d.rows[0]).total(), 60);
    }

    #[test]
    fn seeded_forests_are_identical() {
        let d = blobs(30, 5);
        let p = ForestParams { n_trees: 25, ..Default::default() };
        let a = train_forest(&d, &p, 42).unwrap();
        let b = train_forest(&d, &p, 42).unwrap();
        assert_eq!(a, b);
        let c = train_forest(&d, &p, 43).unwrap();
        assert_ne!(a.tree_seeds, c.tree_seeds);
    }

    #[test]
    fn single_tree_forest() {
        let d = blobs(20, 1);
        let m = train_forest(&d, &ForestParams { n_trees: 1, ..Default::default() }, 0).unwrap();
        let t = m.votes(&d.rows[3]);
        assert_eq!(t.total(), 1);
        assert_eq!(t.votes.iter().filter(|&&v| v == 1).count(), 1);
    }

    #[test]
    fn training_rows_get_strong_support() {
        let d = blobs(40, 9);
        let m = train_forest(&d, &ForestParams { n_trees: 100, ..Default::default() }, 2).unwrap();
        for (x, &l) in d.rows.iter().zip(&d.labels) {
            assert!(m.votes(x).votes[l] >= 90, "{:?}", m.votes(x));
        }
    }

    #[test]
    fn default_is_500_trees() {
        assert_eq!(ForestParams::default().n_trees, 500);
    }
}
