//! Sharpness measures over focal planes and optimal-plane selection.
//!
//! Each measure implements [`FocusMeasure`] and is registered by name in a
//! [`FocusRegistry`], so the CLI and experiment configs pick one at runtime.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{FocalStack, Image};

/// A scalar sharpness criterion; larger means better focused.
pub trait FocusMeasure: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, img: &Image) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusMeasureKind {
    AbsoluteGradient,
    VollathF4,
    Variance,
    HistogramEntropy,
}

impl FocusMeasureKind {
    pub const ALL: [FocusMeasureKind; 4] = [
        FocusMeasureKind::AbsoluteGradient,
        FocusMeasureKind::VollathF4,
        FocusMeasureKind::Variance,
        FocusMeasureKind::HistogramEntropy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FocusMeasureKind::AbsoluteGradient => "absolute_gradient",
            FocusMeasureKind::VollathF4 => "vollath_f4",
            FocusMeasureKind::Variance => "variance",
            FocusMeasureKind::HistogramEntropy => "histogram_entropy",
        }
    }

    pub fn measure(self) -> Box<dyn FocusMeasure> {
        match self {
            FocusMeasureKind::AbsoluteGradient => Box::new(AbsoluteGradient),
            FocusMeasureKind::VollathF4 => Box::new(VollathF4),
            FocusMeasureKind::Variance => Box::new(Variance),
            FocusMeasureKind::HistogramEntropy => Box::new(HistogramEntropy),
        }
    }
}

impl fmt::Display for FocusMeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FocusMeasureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "focus measure",
                name: s.to_string(),
            })
    }
}

/// Sum of absolute forward differences along both axes, divided by the pixel count.
pub struct AbsoluteGradient;

impl FocusMeasure for AbsoluteGradient {
    fn name(&self) -> &'static str {
        "absolute_gradient"
    }

    fn score(&self, img: &Image) -> Result<f64> {
        absolute_gradient_score(img)
    }
}

pub fn absolute_gradient_score(img: &Image) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(Error::ImageTooSmall(format!(
            "absolute gradient needs 2x2, got {w}x{h}"
        )));
    }
    let d = img.data();
    let mut total = 0.0;
    for y in 0..h {
        let row = &d[y * w..(y + 1) * w];
        for x in 0..w {
            if x + 1 < w {
                total += (row[x + 1] - row[x]).abs();
            }
            if y + 1 < h {
                total += (d[(y + 1) * w + x] - row[x]).abs();
            }
        }
    }
    Ok(total / (w * h) as f64)
}

/// Vollath's F4 autocorrelation measure along rows.
pub struct VollathF4;

impl FocusMeasure for VollathF4 {
    fn name(&self) -> &'static str {
        "vollath_f4"
    }

    fn score(&self, img: &Image) -> Result<f64> {
        vollath_f4_score(img)
    }
}

/// Both lag sums run over the same columns `0..w-2`, so a uniform image scores 0.
pub fn vollath_f4_score(img: &Image) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 1 {
        return Err(Error::ImageTooSmall(format!(
            "Vollath F4 needs width >= 3, got {w}x{h}"
        )));
    }
    let mut total = 0.0;
    for row in img.data().chunks_exact(w) {
        for x in 0..w - 2 {
            total += row[x] * (row[x + 1] - row[x + 2]);
        }
    }
    Ok(total / (w * h) as f64)
}

/// Population variance of intensities.
pub struct Variance;

impl FocusMeasure for Variance {
    fn name(&self) -> &'static str {
        "variance"
    }

    fn score(&self, img: &Image) -> Result<f64> {
        if img.is_empty() {
            return Err(Error::ImageTooSmall("empty image".into()));
        }
        let n = img.len() as f64;
        let mean = img.data().iter().sum::<f64>() / n;
        Ok(img.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
    }
}

/// Shannon entropy (bits) of a 256-bin intensity histogram.
pub struct HistogramEntropy;

impl FocusMeasure for HistogramEntropy {
    fn name(&self) -> &'static str {
        "histogram_entropy"
    }

    fn score(&self, img: &Image) -> Result<f64> {
        if img.is_empty() {
            return Err(Error::ImageTooSmall("empty image".into()));
        }
        let mut hist = [0usize; 256];
        for &v in img.data() {
            hist[((v * 256.0) as usize).min(255)] += 1;
        }
        let n = img.len() as f64;
        Ok(hist
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum())
    }
}

/// Name-keyed collection of focus measures.
pub struct FocusRegistry {
    measures: BTreeMap<&'static str, Box<dyn FocusMeasure>>,
}

impl FocusRegistry {
    pub fn empty() -> Self {
        Self {
            measures: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, measure: Box<dyn FocusMeasure>) {
        self.measures.insert(measure.name(), measure);
    }

    pub fn get(&self, name: &str) -> Result<&dyn FocusMeasure> {
        self.measures
            .get(name)
            .map(|m| m.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "focus measure",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.measures.keys().copied()
    }
}

impl Default for FocusRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        for kind in FocusMeasureKind::ALL {
            reg.register(kind.measure());
        }
        reg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusCurve {
    pub scores: Vec<f64>,
    pub best_index: usize,
}

impl FocusCurve {
    /// Argmax with the lowest index winning ties.
    pub fn from_scores(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::EmptyStack);
        }
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        Ok(Self {
            scores,
            best_index: best,
        })
    }
}

pub fn select_optimal_plane(stack: &FocalStack, measure: &dyn FocusMeasure) -> Result<FocusCurve> {
    if stack.is_empty() {
        return Err(Error::EmptyStack);
    }
    let scores = stack
        .planes()
        .par_iter()
        .map(|p| measure.score(p))
        .collect::<Result<Vec<_>>>()?;
    FocusCurve::from_scores(scores)
}

pub fn select_optimal_plane_by_kind(stack: &FocalStack, kind: FocusMeasureKind) -> Result<FocusCurve> {
    select_optimal_plane(stack, kind.measure().as_ref())
}
