//! Inlier/outlier decisions from random forest votes.
//!
//! The forest's votes on correctly classified test samples form a profile per
//! category; a new sample is accepted as its winning category only when its
//! votes clear a threshold derived from that category's profile.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{evaluate, ModelBody, TrainedModel, VoteTally};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const PROFILE_FORMAT_VERSION: u32 = 1;

/// Winner votes and winner-minus-runner-up margins of the true positives of
/// one category.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryProfile {
    pub votes: Vec<usize>,
    pub margins: Vec<usize>,
}

impl CategoryProfile {
    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    pub fn min_votes(&self) -> Option<usize> {
        self.votes.iter().copied().min()
    }

    pub fn min_margin(&self) -> Option<usize> {
        self.margins.iter().copied().min()
    }

    pub fn mean_votes(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.votes.iter().sum::<usize>() as f64 / self.len() as f64)
    }

    /// Sample (n - 1) standard deviation of the votes.
    pub fn std_votes(&self) -> Option<f64> {
        if self.len() < 2 {
            return None;
        }
        let m = self.mean_votes()?;
        let ss: f64 = self.votes.iter().map(|&v| (v as f64 - m).powi(2)).sum();
        Some((ss / (self.len() - 1) as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpVoteProfile {
    pub format_version: u32,
    pub n_trees: usize,
    /// Forest category order.
    pub categories: Vec<String>,
    pub profiles: Vec<CategoryProfile>,
}

impl TpVoteProfile {
    pub fn empty(categories: Vec<String>, n_trees: usize) -> Self {
        Self {
            format_version: PROFILE_FORMAT_VERSION,
            n_trees,
            profiles: vec![CategoryProfile::default(); categories.len()],
            categories,
        }
    }

    /// Adds one correctly classified sample of category `c`.
    pub fn record(&mut self, c: usize, tally: &VoteTally) {
        let (first, second) = tally.top_two();
        self.profiles[c].votes.push(first);
        self.profiles[c].margins.push(first - second);
    }

    pub fn get(&self, c: usize) -> &CategoryProfile {
        &self.profiles[c]
    }

    /// Categories without any true positive.
    pub fn uncovered(&self) -> Vec<&str> {
        self.categories
            .iter()
            .zip(&self.profiles)
            .filter(|(_, p)| p.is_empty())
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let p: TpVoteProfile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if p.format_version != PROFILE_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "profile format {} (expected {PROFILE_FORMAT_VERSION})",
                p.format_version
            )));
        }
        if p.profiles.len() != p.categories.len() {
            return Err(Error::ModelFormat("profile count differs from category count".into()));
        }
        Ok(p)
    }
}

fn forest_of(model: &TrainedModel) -> Result<&crate::classifiers::ForestModel> {
    match &model.body {
        ModelBody::Rf(f) => Ok(f),
        _ => Err(Error::InvalidParameter(format!(
            "authentication needs a random forest, got {}",
            model.kind()
        ))),
    }
}

/// Profiles from the forest's votes on a labelled test matrix. Only correctly
/// classified samples contribute.
pub fn build_tp_profiles(model: &TrainedModel, test: &FeatureMatrix) -> Result<TpVoteProfile> {
    let forest = forest_of(model)?;
    if test.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    if let Some(l) = test.labels.iter().find(|l| !model.categories.contains(l)) {
        return Err(Error::UnknownCategory(l.clone()));
    }
    let ev = evaluate(model, test)?;
    let mut p = TpVoteProfile::empty(model.categories.clone(), forest.trees.len());
    for r in ev.records.iter().filter(|r| r.correct) {
        let c = model.categories.iter().position(|c| *c == r.truth).expect("label checked above");
        let tally = r.votes.as_ref().expect("forests always report votes");
        p.record(c, tally);
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaCondition {
    Theta11,
    Theta12,
    #[default]
    Theta21,
    Theta22,
}

impl ThetaCondition {
    pub const ALL: [ThetaCondition; 4] = [
        ThetaCondition::Theta11,
        ThetaCondition::Theta12,
        ThetaCondition::Theta21,
        ThetaCondition::Theta22,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ThetaCondition::Theta11 => "theta11",
            ThetaCondition::Theta12 => "theta12",
            ThetaCondition::Theta21 => "theta21",
            ThetaCondition::Theta22 => "theta22",
        }
    }
}

impl fmt::Display for ThetaCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ThetaCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "condition",
                name: s.to_string(),
            })
    }
}

/// Outcome of one condition on one tally, with the thresholds it used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaOutcome {
    pub holds: bool,
    pub vote_threshold: f64,
    pub margin_threshold: Option<f64>,
}

fn winner_profile<'a>(tally: &VoteTally, profiles: &'a TpVoteProfile) -> Result<(usize, &'a CategoryProfile)> {
    let w = tally.winner();
    let p = profiles
        .profiles
        .get(w)
        .ok_or_else(|| Error::UnknownCategory(w.to_string()))?;
    if p.is_empty() {
        return Err(Error::MissingProfile(profiles.categories[w].clone()));
    }
    Ok((w, p))
}

fn vote_clause(tally: &VoteTally, profiles: &TpVoteProfile, dynamic: bool) -> Result<(bool, f64)> {
    let (w, p) = winner_profile(tally, profiles)?;
    let vp1 = tally.votes[w] as f64;
    let threshold = match (dynamic, p.std_votes()) {
        (true, Some(sd)) => p.mean_votes().unwrap_or(0.0) - sd,
        (true, None) => {
            log::warn!(
                "category {} has fewer than two true positives; using the minimum vote threshold",
                profiles.categories[w]
            );
            p.min_votes().unwrap_or(0) as f64
        }
        (false, _) => p.min_votes().unwrap_or(0) as f64,
    };
    Ok((vp1 > threshold, threshold))
}

fn margin_clause(tally: &VoteTally, profiles: &TpVoteProfile) -> Result<(bool, f64)> {
    let (_, p) = winner_profile(tally, profiles)?;
    let (first, second) = tally.top_two();
    let threshold = p.min_margin().unwrap_or(0) as f64;
    Ok(((first - second) as f64 > threshold, threshold))
}

/// Evaluates `cond` on `tally`.
pub fn theta(cond: ThetaCondition, tally: &VoteTally, profiles: &TpVoteProfile) -> Result<ThetaOutcome> {
    let dynamic = matches!(cond, ThetaCondition::Theta21 | ThetaCondition::Theta22);
    let (votes_ok, vote_threshold) = vote_clause(tally, profiles, dynamic)?;
    let margin = match cond {
        ThetaCondition::Theta12 | ThetaCondition::Theta22 => Some(margin_clause(tally, profiles)?),
        _ => None,
    };
    Ok(ThetaOutcome {
        holds: votes_ok && margin.is_none_or(|m| m.0),
        vote_threshold,
        margin_threshold: margin.map(|m| m.1),
    })
}

/// `Vp1 > min TP(p1)`.
pub fn theta11(tally: &VoteTally, profiles: &TpVoteProfile) -> Result<bool> {
    Ok(theta(ThetaCondition::Theta11, tally, profiles)?.holds)
}

/// `theta11` and a winner margin above the smallest recorded margin of `p1`.
pub fn theta12(tally: &VoteTally, profiles: &TpVoteProfile) -> Result<bool> {
    Ok(theta(ThetaCondition::Theta12, tally, profiles)?.holds)
}

/// `Vp1 > mean TP(p1) - std TP(p1)`.
pub fn theta21(tally: &VoteTally, profiles: &TpVoteProfile) -> Result<bool> {
    Ok(theta(ThetaCondition::Theta21, tally, profiles)?.holds)
}

/// `theta21` and the margin clause of `theta12`.
pub fn theta22(tally: &VoteTally, profiles: &TpVoteProfile) -> Result<bool> {
    Ok(theta(ThetaCondition::Theta22, tally, profiles)?.holds)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Inlier(String),
    Outlier,
}

impl Verdict {
    pub fn is_inlier(&self) -> bool {
        matches!(self, Verdict::Inlier(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub verdict: Verdict,
    /// Category with most votes, whatever the verdict.
    pub winner: String,
    pub vp1: usize,
    pub vp2: usize,
    /// `None` when the winner has no profile.
    pub vote_threshold: Option<f64>,
    pub margin_threshold: Option<f64>,
    pub missing_profile: bool,
}

#[derive(Clone, Debug)]
pub struct AuthModel {
    pub model: TrainedModel,
    pub profiles: TpVoteProfile,
    pub condition: ThetaCondition,
}

impl AuthModel {
    pub fn new(model: TrainedModel, profiles: TpVoteProfile, condition: ThetaCondition) -> Result<Self> {
        let forest = forest_of(&model)?;
        if profiles.categories != model.categories {
            return Err(Error::SchemaMismatch("profile categories differ from the model's".into()));
        }
        if profiles.n_trees != forest.trees.len() {
            return Err(Error::SchemaMismatch(format!(
                "profiles built for {} trees, forest has {}",
                profiles.n_trees,
                forest.trees.len()
            )));
        }
        for c in profiles.uncovered() {
            log::warn!("category {c} has no true positives; its samples will be rejected");
        }
        Ok(Self {
            model,
            profiles,
            condition,
        })
    }

    /// Decision for a tally already computed by the forest.
    pub fn decide(&self, tally: &VoteTally) -> Result<AuthDecision> {
        let (vp1, vp2) = tally.top_two();
        let w = tally.winner();
        let winner = self.model.categories[w].clone();
        match theta(self.condition, tally, &self.profiles) {
            Ok(o) => Ok(AuthDecision {
                verdict: if o.holds { Verdict::Inlier(winner.clone()) } else { Verdict::Outlier },
                winner,
                vp1,
                vp2,
                vote_threshold: Some(o.vote_threshold),
                margin_threshold: o.margin_threshold,
                missing_profile: false,
            }),
            Err(Error::MissingProfile(_)) => Ok(AuthDecision {
                verdict: Verdict::Outlier,
                winner,
                vp1,
                vp2,
                vote_threshold: None,
                margin_threshold: None,
                missing_profile: true,
            }),
            Err(e) => Err(e),
        }
    }
}

/// Authenticates one raw feature row (full model schema).
pub fn authenticate(model: &AuthModel, z: &[f64]) -> Result<AuthDecision> {
    let (_, tally) = model.model.predict_row(z)?;
    let tally = tally.expect("forests always report votes");
    model.decide(&tally)
}

/// Authenticates every row of `m`, in row order.
pub fn authenticate_batch(model: &AuthModel, m: &FeatureMatrix) -> Result<Vec<AuthDecision>> {
    let aligned = model.model.align(m)?;
    aligned.rows.par_iter().map(|r| authenticate(model, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles(votes: &[usize], margins: &[usize]) -> TpVoteProfile {
        let mut p = TpVoteProfile::empty(vec!["a".into(), "b".into(), "c".into()], 500);
        p.profiles[0] = CategoryProfile {
            votes: votes.to_vec(),
            margins: margins.to_vec(),
        };
        p
    }

    fn tally(v: &[usize]) -> VoteTally {
        VoteTally { votes: v.to_vec() }
    }

    #[test]
    fn record_arithmetic() {
        let mut p = TpVoteProfile::empty(vec!["a".into(), "b".into(), "c".into()], 500);
        p.record(0, &tally(&[400, 80, 20]));
        assert_eq!(p.get(0).votes, vec![400]);
        assert_eq!(p.get(0).margins, vec![320]);
    }

    #[test]
    fn theta11_examples() {
        let p = profiles(&[300, 400, 500], &[0, 0, 0]);
        assert!(theta11(&tally(&[350, 150, 0]), &p).unwrap());
        assert!(!theta11(&tally(&[300, 200, 0]), &p).unwrap());
        let single = profiles(&[300], &[0]);
        assert!(theta11(&tally(&[500, 0, 0]), &single).unwrap());
    }

    #[test]
    fn theta12_examples() {
        let p = profiles(&[300, 400, 500], &[100, 150, 300]);
        // margin 120 > 100
        assert!(theta12(&tally(&[310, 190, 0]), &p).unwrap());
        // theta11 fails
        assert!(!theta12(&tally(&[300, 0, 0]), &p).unwrap());
        // margin exactly 100
        assert!(!theta12(&tally(&[350, 250, 0]), &p).unwrap());
    }

    #[test]
    fn theta21_examples() {
        let p = profiles(&[300, 400, 500], &[0, 0, 0]);
        let o = theta(ThetaCondition::Theta21, &tally(&[350, 150, 0]), &p).unwrap();
        assert!(o.holds);
        assert!((o.vote_threshold - 300.0).abs() < 1e-12);
        assert!(!theta21(&tally(&[250, 200, 50]), &p).unwrap());
        let flat = profiles(&[420, 420, 420], &[0, 0, 0]);
        assert!(!theta21(&tally(&[420, 80, 0]), &flat).unwrap());
    }

    #[test]
    fn theta21_single_entry_falls_back() {
        let p = profiles(&[300], &[0]);
        let o = theta(ThetaCondition::Theta21, &tally(&[301, 199, 0]), &p).unwrap();
        assert!(o.holds);
        assert_eq!(o.vote_threshold, 300.0);
    }

    #[test]
    fn theta22_truth_table() {
        let p = profiles(&[300, 400, 500], &[100, 150, 300]);
        assert!(theta22(&tally(&[350, 120, 30]), &p).unwrap());
        assert!(!theta22(&tally(&[350, 250, 0]), &p).unwrap());
        assert!(!theta22(&tally(&[250, 50, 200]), &p).unwrap());
    }

    #[test]
    fn missing_profile() {
        let p = profiles(&[300], &[0]);
        assert!(matches!(theta11(&tally(&[0, 500, 0]), &p), Err(Error::MissingProfile(c)) if c == "b"));
    }

    #[test]
    fn condition_names() {
        for c in ThetaCondition::ALL {
            assert_eq!(c.name().parse::<ThetaCondition>().unwrap(), c);
        }
        assert_eq!(ThetaCondition::default(), ThetaCondition::Theta21);
        assert!("theta3".parse::<ThetaCondition>().is_err());
    }
}
