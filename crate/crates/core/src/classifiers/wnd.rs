use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Dataset;

pub const WND_EXPONENT: f64 = -5.0;
pub const WND_EPSILON: f64 = 1e-12;

/// How per-category scores turn into a decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WndRule {
    /// Largest score wins: with a negative exponent the score grows as
    /// samples get closer.
    #[default]
    Similarity,
    /// Smallest score wins, the literal reading of "shortest distance".
    ShortestDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WndModel {
    /// Training rows per category.
    pub classes: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
    pub exponent: f64,
    pub rule: WndRule,
}

impl WndModel {
    pub fn new(data: &Dataset, weights: Vec<f64>, rule: WndRule) -> Result<Self> {
        if weights.len() != data.n_features() {
            return Err(Error::DimensionMismatch {
                expected: data.n_features(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("feature weights must be finite and non-negative".into()));
        }
        let mut classes = vec![Vec::new(); data.n_categories];
        for (row, &l) in data.rows.iter().zip(&data.labels) {
            classes[l].push(row.clone());
        }
        if let Some(c) = classes.iter().position(|c| c.is_empty()) {
            return Err(Error::InvalidParameter(format!("category {c} has no training rows")));
        }
        Ok(Self {
            classes,
            weights,
            exponent: WND_EXPONENT,
            rule,
        })
    }

    fn weighted_sq(&self, z: &[f64], t: &[f64]) -> f64 {
        let d: f64 = self
            .weights
            .iter()
            .zip(z.iter().zip(t))
            .map(|(w, (a, b))| w * (a - b) * (a - b))
            .sum();
        d.max(WND_EPSILON)
    }

    fn check(&self, z: &[f64], c: usize) -> Result<()> {
        if c >= self.classes.len() {
            return Err(Error::UnknownCategory(c.to_string()));
        }
        if z.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: z.len(),
            });
        }
        Ok(())
    }

    /// `d_{z,c} = mean_t (max(sum_f W_f (z_f - t_f)^2, eps))^p`.
    pub fn distance(&self, z: &[f64], c: usize) -> Result<f64> {
        self.check(z, c)?;
        let rows = &self.classes[c];
        Ok(rows
            .iter()
            .map(|t| self.weighted_sq(z, t).powf(self.exponent))
            .sum::<f64>()
            / rows.len() as f64)
    }

    /// `ln d_{z,c}`, computed with log-sum-exp so that very close or very
    /// distant samples neither overflow nor underflow.
    pub fn log_distance(&self, z: &[f64], c: usize) -> Result<f64> {
        self.check(z, c)?;
        let rows = &self.classes[c];
        let logs: Vec<f64> = rows
            .iter()
            .map(|t| self.exponent * self.weighted_sq(z, t).ln())
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        Ok(max + sum.ln() - (rows.len() as f64).ln())
    }

    /// Decision under the model's rule; ties go to the lowest category.
    pub fn classify(&self, z: &[f64]) -> Result<usize> {
        let mut best = (0, f64::NAN);
        for c in 0..self.classes.len() {
            let d = self.log_distance(z, c)?;
            let better = match self.rule {
                WndRule::Similarity => d > best.1,
                WndRule::ShortestDistance => d < best.1,
            };
            if c == 0 || better {
                best = (c, d);
            }
        }
        Ok(best.0)
    }
}

pub fn wnd5_distance(z: &[f64], model: &WndModel, c: usize) -> Result<f64> {
    model.distance(z, c)
}

pub fn wnd5_classify(z: &[f64], model: &WndModel) -> Result<usize> {
    model.classify(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_model() -> WndModel {
        let data = Dataset {
            rows: vec![vec![1.0], vec![2.0]],
            labels: vec![0, 1],
            n_categories: 2,
        };
        WndModel::new(&data, vec![1.0], WndRule::Similarity).unwrap()
    }

    #[test]
    fn hand_arithmetic() {
        let m = two_point_model();
        assert_eq!(m.exponent, -5.0);
        // z = 0: squared distances 1 and 4
        assert!((m.distance(&[0.0], 0).unwrap() - 1.0).abs() < 1e-15);
        assert!((m.distance(&[0.0], 1).unwrap() - 1.0 / 1024.0).abs() < 1e-15);
        assert_eq!(m.classify(&[0.0]).unwrap(), 0);
        assert!((m.log_distance(&[0.0], 1).unwrap() - (1.0f64 / 1024.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_match_dominates() {
        let m = two_point_model();
        assert_eq!(m.distance(&[2.0], 1).unwrap(), WND_EPSILON.powf(-5.0));
        assert_eq!(m.classify(&[2.0]).unwrap(), 1);
    }

    #[test]
    fn mirrored_tie_goes_low() {
        let m = two_point_model();
        assert_eq!(m.classify(&[1.5]).unwrap(), 0);
        let mut far = m.clone();
        far.rule = WndRule::ShortestDistance;
        assert_eq!(far.classify(&[1.5]).unwrap(), 0);
        assert_eq!(far.classify(&[0.0]).unwrap(), 1);
    }

    #[test]
    fn errors() {
        let m = two_point_model();
        assert!(matches!(m.distance(&[0.0], 5), Err(Error::UnknownCategory(_))));
        assert!(matches!(m.distance(&[0.0, 1.0], 0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn log_space_survives_huge_weights() {
        let data = Dataset {
            rows: vec![vec![0.0], vec![100.0]],
            labels: vec![0, 1],
            n_categories: 2,
        };
        let m = WndModel::new(&data, vec![1e100], WndRule::Similarity).unwrap();
        assert_eq!(m.distance(&[40.0], 0).unwrap(), 0.0);
        assert_eq!(m.classify(&[40.0]).unwrap(), 0);
        assert_eq!(m.classify(&[60.0]).unwrap(), 1);
    }
}
