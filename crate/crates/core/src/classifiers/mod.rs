//! The four classifiers and a common interface over them.
//!
//! Trainers are registered by name in a [`ClassifierRegistry`]; every trained
//! model is wrapped in a [`TrainedModel`] that knows which feature columns it
//! expects and how to turn a raw feature row into its own input.

pub mod forest;
pub mod nn;
pub mod tree;
pub mod wnd;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::selection::{Selection, SelectionConfig};

pub use forest::{forest_classify, forest_votes, train_forest, ForestModel, ForestParams, VoteTally};
pub use nn::{nn_classify, train_nn, PerceptronNet};
pub use tree::{gini_impurity, prune_tree, train_pruned_tree, train_tree, DecisionTree, Node, TreeParams};
pub use wnd::{wnd5_classify, wnd5_distance, WndModel, WndRule};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Numeric view of a labelled matrix: labels are indices into a category list.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_categories: usize,
}

impl Dataset {
    /// Every row must carry a label from `categories`.
    pub fn from_matrix(m: &FeatureMatrix, categories: &[String]) -> Result<Self> {
        let labels = m
            .labels
            .iter()
            .map(|l| {
                categories
                    .iter()
                    .position(|c| c == l)
                    .ok_or_else(|| Error::UnknownCategory(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            rows: m.rows.clone(),
            labels,
            n_categories: categories.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Number of categories with at least one row.
    pub fn present_categories(&self) -> usize {
        let mut seen = vec![false; self.n_categories];
        for &l in &self.labels {
            seen[l] = true;
        }
        seen.into_iter().filter(|&s| s).count()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            rows: rows.iter().map(|&r| self.rows[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_categories: self.n_categories,
        }
    }
}

/// Index of the largest count; the lowest index wins ties.
pub fn argmax_lowest(v: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmax_lowest_f64(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// A trained model viewed through the operations shared by all four kinds.
pub trait Classifier: Send + Sync {
    fn kind(&self) -> &'static str;
    fn n_features(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<usize>;
    /// Per-category votes, for models that vote.
    fn tally(&self, _x: &[f64]) -> Option<VoteTally> {
        None
    }
}

fn check_width(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

impl Classifier for WndModel {
    fn kind(&self) -> &'static str {
        "wnd5"
    }
    fn n_features(&self) -> usize {
        self.weights.len()
    }
    fn predict(&self, x: &[f64]) -> Result<usize> {
        self.classify(x)
    }
}

impl Classifier for DecisionTree {
    fn kind(&self) -> &'static str {
        "dt"
    }
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn predict(&self, x: &[f64]) -> Result<usize> {
        check_width(self.n_features, x)?;
        Ok(DecisionTree::predict(self, x))
    }
}

impl Classifier for ForestModel {
    fn kind(&self) -> &'static str {
        "rf"
    }
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn predict(&self, x: &[f64]) -> Result<usize> {
        check_width(self.n_features, x)?;
        Ok(self.classify(x))
    }
    fn tally(&self, x: &[f64]) -> Option<VoteTally> {
        (x.len() == self.n_features).then(|| self.votes(x))
    }
}

impl Classifier for PerceptronNet {
    fn kind(&self) -> &'static str {
        "nn"
    }
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn predict(&self, x: &[f64]) -> Result<usize> {
        self.classify(x)
    }
}

/// Serialized body of a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum ModelBody {
    Wnd5(WndModel),
    Dt(DecisionTree),
    Rf(ForestModel),
    Nn(PerceptronNet),
}

impl ModelBody {
    pub fn classifier(&self) -> &dyn Classifier {
        match self {
            ModelBody::Wnd5(m) => m,
            ModelBody::Dt(m) => m,
            ModelBody::Rf(m) => m,
            ModelBody::Nn(m) => m,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Feature selection used by WND-5 and the network.
    pub selection: SelectionConfig,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub nn_epochs: usize,
    pub wnd_rule: WndRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            nn_epochs: nn::DEFAULT_EPOCHS,
            wnd_rule: WndRule::default(),
        }
    }
}

/// A model plus everything needed to apply it to a raw feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    /// Sorted category names; model outputs index into this list.
    pub categories: Vec<String>,
    /// Raw feature columns the model consumes, in order.
    pub feature_names: Vec<String>,
    /// Normalization and selection applied before the model, if any.
    pub selection: Option<Selection>,
    #[serde(flatten)]
    pub body: ModelBody,
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        self.body.classifier().kind()
    }

    fn input(&self, raw: &[f64]) -> Result<Vec<f64>> {
        check_width(self.feature_names.len(), raw)?;
        match &self.selection {
            Some(s) => s.transform_row(raw),
            None => Ok(raw.to_vec()),
        }
    }

    /// Category index and, for forests, the vote tally of one raw row.
    pub fn predict_row(&self, raw: &[f64]) -> Result<(usize, Option<VoteTally>)> {
        let x = self.input(raw)?;
        let c = self.body.classifier();
        Ok((c.predict(&x)?, c.tally(&x)))
    }

    /// Reorders `m` to the model's columns; names the first missing one.
    pub fn align(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        m.align_to(&self.feature_names)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(s);
        de.disable_recursion_limit();
        let value = serde_json::Value::deserialize(&mut de)?;
        let version = value.get("format_version").and_then(|v| v.as_u64());
        if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
            return Err(Error::ModelFormat(format!(
                "model format {} (expected {MODEL_FORMAT_VERSION})",
                version.map_or("missing".to_string(), |v| v.to_string())
            )));
        }
        let mut de = serde_json::Deserializer::from_str(s);
        de.disable_recursion_limit();
        Ok(TrainedModel::deserialize(&mut de)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Trains one kind of classifier from a labelled raw feature matrix.
pub trait Trainer: Send + Sync {
    fn name(&self) -> &'static str;
    fn train(&self, train: &FeatureMatrix, config: &TrainConfig, seed: u64) -> Result<TrainedModel>;
}

fn prepare(train: &FeatureMatrix) -> Result<Vec<String>> {
    if train.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if train.labels.iter().any(String::is_empty) {
        return Err(Error::UnknownCategory(String::new()));
    }
    let categories = train.categories();
    if categories.len() < 2 {
        return Err(Error::TooFewCategories(categories.len()));
    }
    Ok(categories)
}

fn envelope(train: &FeatureMatrix, categories: Vec<String>, selection: Option<Selection>, body: ModelBody) -> TrainedModel {
    TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        categories,
        feature_names: train.names.clone(),
        selection,
        body,
    }
}

pub struct Wnd5Trainer;

impl Trainer for Wnd5Trainer {
    fn name(&self) -> &'static str {
        "wnd5"
    }
    fn train(&self, train: &FeatureMatrix, config: &TrainConfig, _seed: u64) -> Result<TrainedModel> {
        let categories = prepare(train)?;
        let sel = Selection::fit(train, config.selection)?;
        let data = Dataset::from_matrix(&sel.transform(train)?, &categories)?;
        let model = WndModel::new(&data, sel.weights(), config.wnd_rule)?;
        Ok(envelope(train, categories, Some(sel), ModelBody::Wnd5(model)))
    }
}

pub struct DtTrainer;

impl Trainer for DtTrainer {
    fn name(&self) -> &'static str {
        "dt"
    }
    fn train(&self, train: &FeatureMatrix, config: &TrainConfig, seed: u64) -> Result<TrainedModel> {
        let categories = prepare(train)?;
        let data = Dataset::from_matrix(train, &categories)?;
        let tree = train_pruned_tree(&data, &config.tree, seed)?;
        Ok(envelope(train, categories, None, ModelBody::Dt(tree)))
    }
}

pub struct RfTrainer;

impl Trainer for RfTrainer {
    fn name(&self) -> &'static str {
        "rf"
    }
    fn train(&self, train: &FeatureMatrix, config: &TrainConfig, seed: u64) -> Result<TrainedModel> {
        let categories = prepare(train)?;
        let data = Dataset::from_matrix(train, &categories)?;
        let forest = train_forest(&data, &config.forest, seed)?;
        Ok(envelope(train, categories, None, ModelBody::Rf(forest)))
    }
}

pub struct NnTrainer;

impl Trainer for NnTrainer {
    fn name(&self) -> &'static str {
        "nn"
    }
    fn train(&self, train: &FeatureMatrix, config: &TrainConfig, _seed: u64) -> Result<TrainedModel> {
        let categories = prepare(train)?;
        let sel = Selection::fit(train, config.selection)?;
        let data = Dataset::from_matrix(&sel.transform(train)?, &categories)?;
        let net = train_nn(&data, config.nn_epochs)?;
        if net.non_convergence {
            log::warn!("network stopped at the epoch limit ({} epochs) before converging", net.epochs_run);
        }
        Ok(envelope(train, categories, Some(sel), ModelBody::Nn(net)))
    }
}

pub struct ClassifierRegistry {
    trainers: BTreeMap<&'static str, Box<dyn Trainer>>,
}

impl ClassifierRegistry {
    pub fn empty() -> Self {
        Self {
            trainers: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, t: Box<dyn Trainer>) {
        self.trainers.insert(t.name(), t);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Trainer> {
        self.trainers
            .get(name)
            .map(|t| t.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "classifier",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.trainers.keys().copied().collect()
    }

    /// `wnd5`, `dt`, `rf` and `nn`.
    pub fn standard() -> &'static ClassifierRegistry {
        static REG: OnceLock<ClassifierRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            let mut r = ClassifierRegistry::empty();
            r.register(Box::new(Wnd5Trainer));
            r.register(Box::new(DtTrainer));
            r.register(Box::new(RfTrainer));
            r.register(Box::new(NnTrainer));
            r
        })
    }
}

/// Trains the named classifier from the standard registry.
pub fn train_named(name: &str, train: &FeatureMatrix, config: &TrainConfig, seed: u64) -> Result<TrainedModel> {
    ClassifierRegistry::standard().get(name)?.train(train, config, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub truth: String,
    pub predicted: String,
    pub correct: bool,
    pub votes: Option<VoteTally>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub records: Vec<SampleRecord>,
}

/// Predicts every row of `test`; a row whose label the model has never seen
/// counts as wrong.
pub fn evaluate(model: &TrainedModel, test: &FeatureMatrix) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let aligned = model.align(test)?;
    let mut records = Vec::with_capacity(aligned.len());
    for ((id, truth), row) in aligned.ids.iter().zip(&aligned.labels).zip(&aligned.rows) {
        let (c, votes) = model.predict_row(row)?;
        let predicted = model.categories[c].clone();
        records.push(SampleRecord {
            id: id.clone(),
            correct: &predicted == truth,
            truth: truth.clone(),
            predicted,
            votes,
        });
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(Evaluation {
        accuracy: correct as f64 / records.len() as f64,
        records,
    })
}
