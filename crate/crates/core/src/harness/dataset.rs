//! Corpora on disk, category subsets and train/test splits.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_all, FeatureCatalog, FeatureMatrix};
use crate::focus::{select_optimal_plane_by_kind, FocusMeasureKind};
use crate::image::{load_gray, FocalStack};
use crate::segmentation::{segment_grains, CoarseParams, SnakeParams};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub category: String,
    /// Stack directory (holding `plane_<k>` images) or a single image file,
    /// relative to the manifest's directory.
    pub path: PathBuf,
    /// Held out from training; used as unseen categories.
    #[serde(default)]
    pub outlier: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    /// Entries sorted by category, then path.
    pub fn new(mut entries: Vec<ManifestEntry>) -> Self {
        entries.sort_by(|a, b| (&a.category, &a.path).cmp(&(&b.category, &b.path)));
        Self {
            format_version: MANIFEST_FORMAT_VERSION,
            entries,
            root: PathBuf::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Loads `manifest.json`; every listed path must exist.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let mut m: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "manifest format {} (expected {MANIFEST_FORMAT_VERSION})",
                m.format_version
            )));
        }
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check()?;
        Ok(m)
    }

    /// `<root>/manifest.json` when present, otherwise the directory layout
    /// `<root>/<category>/<stack>/plane_<k>.png`.
    pub fn from_dir(root: &Path) -> Result<Self> {
        let file = root.join("manifest.json");
        if file.exists() {
            return Self::load(&file);
        }
        if !root.is_dir() {
            return Err(Error::FileNotFound(root.to_path_buf()));
        }
        let mut entries = Vec::new();
        for cat in sorted_dir(root)? {
            if !cat.is_dir() {
                continue;
            }
            let category = cat.file_name().unwrap_or_default().to_string_lossy().into_owned();
            for stack in sorted_dir(&cat)? {
                if stack.is_dir() && !plane_files(&stack)?.is_empty() {
                    entries.push(ManifestEntry {
                        category: category.clone(),
                        path: stack.strip_prefix(root).unwrap_or(&stack).to_path_buf(),
                        outlier: false,
                    });
                }
            }
        }
        let mut m = Self::new(entries);
        m.root = root.to_path_buf();
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidParameter("manifest lists no stacks".into()));
        }
        for e in &self.entries {
            let p = self.resolve(e);
            if !p.exists() {
                return Err(Error::FileNotFound(p));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.path)
    }

    fn categories_where(&self, outlier: bool) -> Vec<String> {
        let mut c: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.outlier == outlier)
            .map(|e| e.category.clone())
            .collect();
        c.dedup();
        c
    }

    /// Sorted training categories.
    pub fn categories(&self) -> Vec<String> {
        self.categories_where(false)
    }

    pub fn outlier_categories(&self) -> Vec<String> {
        self.categories_where(true)
    }
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    v.sort();
    Ok(v)
}

/// `plane_<k>.{png,tif,tiff}` files ordered by `k`.
fn plane_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut planes: Vec<(u64, PathBuf)> = sorted_dir(dir)?
        .into_iter()
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?;
            let ext = p.extension()?.to_str()?.to_ascii_lowercase();
            let k = stem.strip_prefix("plane_")?.parse().ok()?;
            matches!(ext.as_str(), "png" | "tif" | "tiff").then_some((k, p))
        })
        .collect();
    planes.sort();
    Ok(planes.into_iter().map(|(_, p)| p).collect())
}

/// A stack directory, or a single image read as a one-plane stack.
pub fn load_stack(path: &Path) -> Result<FocalStack> {
    if path.is_file() {
        return FocalStack::new(vec![load_gray(path)?], 1.0);
    }
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let planes = plane_files(path)?
        .iter()
        .map(load_gray)
        .collect::<Result<Vec<_>>>()?;
    FocalStack::new(planes, 1.0)
}

/// Settings of the image-to-features pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub focus_measure: FocusMeasureKind,
    pub coarse: CoarseParams,
    pub snake: SnakeParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            focus_measure: FocusMeasureKind::AbsoluteGradient,
            coarse: CoarseParams::default(),
            snake: SnakeParams::default(),
        }
    }
}

/// Focus, segmentation and extraction for one stack; one labelled row per
/// grain, ids `<source>#<k>`.
pub fn stack_features(
    stack: &FocalStack,
    source: &str,
    label: &str,
    catalog: &FeatureCatalog,
    cfg: &PipelineConfig,
) -> Result<FeatureMatrix> {
    let curve = select_optimal_plane_by_kind(stack, cfg.focus_measure)?;
    let plane = &stack.planes()[curve.best_index];
    let grains = segment_grains(plane, source, &cfg.coarse, &cfg.snake)?;
    let mut m = FeatureMatrix::new(catalog.names());
    for (k, g) in grains.iter().enumerate() {
        m.push(format!("{source}#{k}"), label, extract_all(g, catalog)?.values)?;
    }
    Ok(m)
}

/// Features of every manifest entry, in manifest order. Outlier entries are
/// included; stacks where nothing is segmented contribute no rows.
pub fn manifest_features(manifest: &Manifest, catalog: &FeatureCatalog, cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let parts: Vec<FeatureMatrix> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let stack = load_stack(&manifest.resolve(e))?;
            let source = e.path.to_string_lossy().replace('\\', "/");
            let m = stack_features(&stack, &source, &e.category, catalog, cfg)?;
            if m.is_empty() {
                log::warn!("{source}: no grain segmented");
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut all = FeatureMatrix::new(catalog.names());
    for p in &parts {
        all.append(p)?;
    }
    Ok(all)
}

/// A uniformly random set of `p` categories, sorted; all of them when `p`
/// equals the number available.
pub fn build_subdataset(categories: &[String], p: usize, seed: u64) -> Result<Vec<String>> {
    if p == 0 || p > categories.len() {
        return Err(Error::CountOutOfRange {
            count: p,
            max: categories.len(),
        });
    }
    let mut chosen: Vec<String> = if p == categories.len() {
        categories.to_vec()
    } else {
        let mut pool = categories.to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.partial_shuffle(&mut rng, p).0.to_vec()
    };
    chosen.sort();
    Ok(chosen)
}

/// Rows of `m` whose label is in `categories`.
pub fn restrict(m: &FeatureMatrix, categories: &[String]) -> FeatureMatrix {
    let rows: Vec<usize> = (0..m.len()).filter(|&r| categories.contains(&m.labels[r])).collect();
    m.select_rows(&rows)
}

/// Stratified random holdout. Each category keeps `floor(n (1 - f))` rows
/// for testing, at least one, and at least one for training. Unlabelled rows
/// are dropped. Both halves keep the original row order.
pub fn split_dataset(m: &FeatureMatrix, train_fraction: f64, seed: u64) -> Result<(FeatureMatrix, FeatureMatrix)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in m.categories() {
        let mut rows: Vec<usize> = (0..m.len()).filter(|&r| m.labels[r] == c).collect();
        if rows.len() < 2 {
            return Err(Error::TooFewSamples(format!("category {c} has {} row(s), need 2", rows.len())));
        }
        rows.shuffle(&mut rng);
        let n = rows.len();
        let n_test = ((n as f64 * (1.0 - train_fraction) + 1e-9).floor() as usize).clamp(1, n - 1);
        test.extend_from_slice(&rows[..n_test]);
        train.extend_from_slice(&rows[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((m.select_rows(&train), m.select_rows(&test)))
}
