//! Feature normalization to `[0, 100]`, Fisher scoring and top-n selection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const FISHER_CAP: f64 = 1e12;
const FISHER_EPS: f64 = 1e-12;
pub const SELECTION_FORMAT_VERSION: u32 = 1;

/// Per-feature training range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

pub fn fit_normalization(train: &FeatureMatrix) -> Result<NormParams> {
    if train.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut mins = train.rows[0].clone();
    let mut maxs = train.rows[0].clone();
    for row in &train.rows[1..] {
        for (j, &v) in row.iter().enumerate() {
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
    }
    Ok(NormParams { mins, maxs })
}

/// Maps one value to `[0, 100]`; constant training features map to 0.
pub fn normalize_value(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        (100.0 * (v - min) / (max - min)).clamp(0.0, 100.0)
    } else {
        0.0
    }
}

pub fn normalize_row(row: &[f64], p: &NormParams) -> Result<Vec<f64>> {
    if row.len() != p.mins.len() {
        return Err(Error::DimensionMismatch {
            expected: p.mins.len(),
            found: row.len(),
        });
    }
    Ok(row
        .iter()
        .enumerate()
        .map(|(j, &v)| normalize_value(v, p.mins[j], p.maxs[j]))
        .collect())
}

pub fn apply_normalization(m: &FeatureMatrix, p: &NormParams) -> Result<FeatureMatrix> {
    if m.n_features() != p.mins.len() {
        return Err(Error::DimensionMismatch {
            expected: p.mins.len(),
            found: m.n_features(),
        });
    }
    let rows = m
        .rows
        .iter()
        .map(|r| normalize_row(r, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        names: m.names.clone(),
        ids: m.ids.clone(),
        labels: m.labels.clone(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherScores {
    pub scores: Vec<f64>,
    /// Set where the within-category variance vanished but the means differ.
    pub capped: Vec<bool>,
}

/// `W_f = sum_c (mean_f - mean_fc)^2 / sum_c var_fc * N / (N - 1)` with `N`
/// the number of categories, `mean_f` over all labelled rows and `var_fc`
/// the population variance within category `c`. A vanishing denominator
/// gives 0 when the numerator also vanishes and [`FISHER_CAP`] otherwise.
/// Unlabelled rows are ignored.
pub fn fisher_scores(m: &FeatureMatrix) -> Result<FisherScores> {
    let cats = m.categories();
    if cats.len() < 2 {
        return Err(Error::TooFewCategories(cats.len()));
    }
    let groups: Vec<Vec<&Vec<f64>>> = cats
        .iter()
        .map(|c| {
            m.rows
                .iter()
                .zip(&m.labels)
                .filter(|(_, l)| *l == c)
                .map(|(r, _)| r)
                .collect()
        })
        .collect();
    let all: Vec<&Vec<f64>> = groups.iter().flatten().copied().collect();
    let n_cat = cats.len() as f64;
    let mut scores = Vec::with_capacity(m.n_features());
    let mut capped = Vec::with_capacity(m.n_features());
    for f in 0..m.n_features() {
        let overall = all.iter().map(|r| r[f]).sum::<f64>() / all.len() as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for g in &groups {
            let n = g.len() as f64;
            let mean = g.iter().map(|r| r[f]).sum::<f64>() / n;
            num += (overall - mean).powi(2);
            den += g.iter().map(|r| (r[f] - mean).powi(2)).sum::<f64>() / n;
        }
        let (score, cap) = if den < FISHER_EPS {
            if num < FISHER_EPS {
                (0.0, false)
            } else {
                (FISHER_CAP, true)
            }
        } else {
            (num / den * n_cat / (n_cat - 1.0), false)
        };
        scores.push(score);
        capped.push(cap);
    }
    Ok(FisherScores { scores, capped })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionConfig {
    Fraction(f64),
    Count(usize),
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig::Fraction(0.02)
    }
}

impl SelectionConfig {
    /// Number of features to keep out of `total`; fractions round up.
    pub fn resolve(&self, total: usize) -> Result<usize> {
        let count = match *self {
            SelectionConfig::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidParameter(format!("fraction {f} outside (0, 1]")));
                }
                (f * total as f64).ceil() as usize
            }
            SelectionConfig::Count(n) => n,
        };
        if count == 0 || count > total {
            return Err(Error::CountOutOfRange { count, max: total });
        }
        Ok(count)
    }
}

/// Indices of the highest scores, best first; ties go to the lower index.
pub fn select_top(s: &FisherScores, c: &SelectionConfig) -> Result<Vec<usize>> {
    let n = c.resolve(s.scores.len())?;
    let mut idx: Vec<usize> = (0..s.scores.len()).collect();
    idx.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]).then(a.cmp(&b)));
    idx.truncate(n);
    Ok(idx)
}

/// Everything needed to reproduce a selection on new data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub format_version: u32,
    pub catalog_version: String,
    pub config: SelectionConfig,
    /// All feature names, in matrix order.
    pub feature_names: Vec<String>,
    pub norm: NormParams,
    pub fisher: FisherScores,
    /// Selected column indices, best first.
    pub indices: Vec<usize>,
    pub selected_names: Vec<String>,
}

impl Selection {
    /// Normalizes `train` on itself, scores it and keeps the top features.
    pub fn fit(train: &FeatureMatrix, config: SelectionConfig) -> Result<Self> {
        let norm = fit_normalization(train)?;
        let fisher = fisher_scores(&apply_normalization(train, &norm)?)?;
        let indices = select_top(&fisher, &config)?;
        Ok(Self {
            format_version: SELECTION_FORMAT_VERSION,
            catalog_version: crate::features::CATALOG_VERSION.to_string(),
            config,
            feature_names: train.names.clone(),
            selected_names: indices.iter().map(|&j| train.names[j].clone()).collect(),
            norm,
            fisher,
            indices,
        })
    }

    /// Selected Fisher weights, aligned with [`Selection::indices`].
    pub fn weights(&self) -> Vec<f64> {
        self.indices.iter().map(|&j| self.fisher.scores[j]).collect()
    }

    /// Normalizes `m` and keeps the selected columns, in rank order.
    pub fn transform(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let aligned = m.align_to(&self.feature_names)?;
        Ok(apply_normalization(&aligned, &self.norm)?.select_columns(&self.indices))
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let z = normalize_row(row, &self.norm)?;
        Ok(self.indices.iter().map(|&j| z[j]).collect())
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
        let s: Selection = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if s.format_version != SELECTION_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "selection format {} (expected {SELECTION_FORMAT_VERSION})",
                s.format_version
            )));
        }
        Ok(s)
    }
}
