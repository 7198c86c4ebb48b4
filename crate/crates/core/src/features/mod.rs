//! Generic feature extraction: intensity feature families evaluated on a
//! set of transform planes, plus shape features of the grain mask, laid
//! out in a fixed, versioned catalog.

pub mod chebyshev;
pub mod edges;
pub mod haralick;
pub mod matrix;
pub mod shape;
pub mod stats;
pub mod tamura;
pub mod transforms;
pub mod zernike;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::Deref;
use std::sync::OnceLock;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Image};
use crate::segmentation::GrainRecord;

pub use chebyshev::chebyshev_coeff_histogram;
pub use edges::edge_statistics;
pub use haralick::haralick_glcm;
pub use matrix::FeatureMatrix;
pub use shape::shape_features;
pub use stats::{multiscale_histograms, pixel_statistics};
pub use tamura::tamura_features;
pub use transforms::{transform_image, TransformPlane};
pub use zernike::zernike_magnitudes;

pub const CATALOG_VERSION: &str = "1";

/// What a family sees when evaluated on one plane of one grain.
pub struct FamilyInput<'a> {
    pub plane: Option<TransformPlane>,
    pub image: &'a Image,
    pub mask: &'a BinaryMask,
}

pub trait FeatureFamily: Send + Sync {
    fn name(&self) -> &'static str;
    /// Names of the produced values, in output order.
    fn value_names(&self) -> Vec<String>;
    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>>;
}

pub struct PixelStats;
pub struct MultiscaleHistogram;
pub struct Haralick;
pub struct Tamura;
pub struct Zernike;
pub struct EdgeStats;
pub struct ChebyshevHistogram;
pub struct Shape;

impl FeatureFamily for PixelStats {
    fn name(&self) -> &'static str {
        "stats"
    }

    fn value_names(&self) -> Vec<String> {
        ["mean", "std", "skewness", "kurtosis", "median"].map(String::from).to_vec()
    }

    /// Raw-plane statistics only look at pixels under the mask.
    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        if input.plane == Some(TransformPlane::Raw) {
            let values: Vec<f64> = input
                .image
                .data()
                .iter()
                .zip(input.mask.data())
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v)
                .collect();
            Ok(stats::pixel_statistics_of(&values)?.to_vec())
        } else {
            Ok(pixel_statistics(input.image)?.to_vec())
        }
    }
}

impl FeatureFamily for MultiscaleHistogram {
    fn name(&self) -> &'static str {
        "histogram"
    }

    fn value_names(&self) -> Vec<String> {
        stats::HISTOGRAM_BINS
            .iter()
            .flat_map(|&b| (0..b).map(move |i| format!("b{b}_{i}")))
            .collect()
    }

    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        Ok(multiscale_histograms(input.image))
    }
}

impl FeatureFamily for Haralick {
    fn name(&self) -> &'static str {
        "haralick"
    }

    fn value_names(&self) -> Vec<String> {
        let means = haralick::HARALICK_NAMES.iter().map(|n| format!("{n}_mean"));
        let ranges = haralick::HARALICK_NAMES.iter().map(|n| format!("{n}_range"));
        means.chain(ranges).collect()
    }

    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        Ok(haralick_glcm(input.image))
    }
}

impl FeatureFamily for Tamura {
    fn name(&self) -> &'static str {
        "tamura"
    }

    fn value_names(&self) -> Vec<String> {
        ["coarseness", "contrast", "directionality"].map(String::from).to_vec()
    }

    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        Ok(tamura_features(input.image)?.to_vec())
    }
}

impl FeatureFamily for Zernike {
    fn name(&self) -> &'static str {
        "zernike"
    }

    fn value_names(&self) -> Vec<String> {
        zernike::zernike_indices()
            .into_iter()
            .map(|(n, m)| format!("z{n}_{m}"))
            .collect()
    }

    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        Ok(zernike_magnitudes(input.image))
    }
}

impl FeatureFamily for EdgeStats {
    fn name(&self) -> &'static str {
        "edge"
    }

    fn value_names(&self) -> Vec<String> {
        [
            "fraction",
            "mean_magnitude",
            "std_magnitude",
            "orientation_0",
            "orientation_45",
            "orientation_90",
            "orientation_135",
            "homogeneity",
        ]
        .map(String::from)
        .to_vec()
    }

    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        Ok(edge_statistics(input.image)?.to_vec())
    }
}

impl FeatureFamily for ChebyshevHistogram {
    fn name(&self) -> &'static str {
        "chebyshev_histogram"
    }

    fn value_names(&self) -> Vec<String> {
        (0..chebyshev::CHEBYSHEV_HIST_BINS).map(|i| format!("b{i}")).collect()
    }

    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        Ok(chebyshev_coeff_histogram(input.image))
    }
}

impl FeatureFamily for Shape {
    fn name(&self) -> &'static str {
        "shape"
    }

    fn value_names(&self) -> Vec<String> {
        shape::SHAPE_NAMES.map(String::from).to_vec()
    }

    fn compute(&self, input: &FamilyInput<'_>) -> Result<Vec<f64>> {
        Ok(shape_features(input.mask)?.to_vec())
    }
}

/// Feature families by name.
pub struct FamilyRegistry {
    families: BTreeMap<&'static str, Box<dyn FeatureFamily>>,
}

impl FamilyRegistry {
    pub fn empty() -> Self {
        Self {
            families: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, family: Box<dyn FeatureFamily>) {
        self.families.insert(family.name(), family);
    }

    pub fn get(&self, name: &str) -> Result<&dyn FeatureFamily> {
        self.families
            .get(name)
            .map(|f| f.as_ref())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: "feature family",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.families.keys().copied().collect()
    }

    /// Shared instance holding the built-in families.
    pub fn standard() -> &'static FamilyRegistry {
        static REGISTRY: OnceLock<FamilyRegistry> = OnceLock::new();
        REGISTRY.get_or_init(FamilyRegistry::default)
    }
}

impl Default for FamilyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(PixelStats));
        r.register(Box::new(MultiscaleHistogram));
        r.register(Box::new(Haralick));
        r.register(Box::new(Tamura));
        r.register(Box::new(Zernike));
        r.register(Box::new(EdgeStats));
        r.register(Box::new(ChebyshevHistogram));
        r.register(Box::new(Shape));
        r
    }
}

/// One family evaluated on one plane (`None` for mask-only families).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogBlock {
    pub family: String,
    pub plane: Option<TransformPlane>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub plane: Option<TransformPlane>,
    pub family: String,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureCatalog {
    pub version: String,
    pub blocks: Vec<CatalogBlock>,
    pub entries: Vec<CatalogEntry>,
}

impl FeatureCatalog {
    /// Expands blocks into named entries `<plane>.<family>.<value>`
    /// (`shape.<value>` for mask-only families).
    pub fn from_blocks(registry: &FamilyRegistry, blocks: Vec<CatalogBlock>) -> Result<Self> {
        let mut entries = Vec::new();
        for b in &blocks {
            let family = registry.get(&b.family)?;
            for (index, value) in family.value_names().into_iter().enumerate() {
                let name = match b.plane {
                    Some(p) => format!("{}.{}.{}", p.name(), b.family, value),
                    None => format!("{}.{}", b.family, value),
                };
                entries.push(CatalogEntry {
                    name,
                    plane: b.plane,
                    family: b.family.clone(),
                    index,
                });
            }
        }
        let mut seen = HashSet::new();
        if let Some(dup) = entries.iter().find(|e| !seen.insert(e.name.as_str())) {
            return Err(Error::SchemaMismatch(format!("duplicate feature name {}", dup.name)));
        }
        Ok(Self {
            version: CATALOG_VERSION.to_string(),
            blocks,
            entries,
        })
    }

    /// The built-in 470-entry layout: on every plane pixel statistics,
    /// multiscale histograms, Haralick and Tamura; Zernike and edge
    /// statistics on the raw plane; Chebyshev-coefficient histograms on the
    /// raw and Fourier planes; shape last.
    pub fn standard() -> Self {
        let block = |family: &str, plane: Option<TransformPlane>| CatalogBlock {
            family: family.to_string(),
            plane,
        };
        let mut blocks = Vec::new();
        for p in TransformPlane::ALL {
            for f in ["stats", "histogram", "haralick", "tamura"] {
                blocks.push(block(f, Some(p)));
            }
        }
        blocks.push(block("zernike", Some(TransformPlane::Raw)));
        blocks.push(block("edge", Some(TransformPlane::Raw)));
        blocks.push(block("chebyshev_histogram", Some(TransformPlane::Raw)));
        blocks.push(block("chebyshev_histogram", Some(TransformPlane::FourierMagnitude)));
        blocks.push(block("shape", None));
        Self::from_blocks(FamilyRegistry::standard(), blocks).expect("built-in catalog is consistent")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }
}

/// Feature values aligned with a catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Evaluates every catalog block on `rec`. Failed families and non-finite
/// values become 0 with a log message, so the length always matches the
/// catalog.
pub fn extract_all(rec: &GrainRecord, catalog: &FeatureCatalog) -> Result<FeatureVector> {
    extract_with(FamilyRegistry::standard(), rec, catalog)
}

pub fn extract_with(
    registry: &FamilyRegistry,
    rec: &GrainRecord,
    catalog: &FeatureCatalog,
) -> Result<FeatureVector> {
    let mut planes: HashMap<TransformPlane, Result<Image>> = HashMap::new();
    for b in &catalog.blocks {
        if let Some(p) = b.plane {
            planes
                .entry(p)
                .or_insert_with(|| transform_image(&rec.masked_image, p));
        }
    }
    let mut values = Vec::with_capacity(catalog.len());
    for b in &catalog.blocks {
        let family = registry.get(&b.family)?;
        let expected = family.value_names().len();
        let image = match b.plane {
            Some(p) => planes[&p].as_ref(),
            None => Ok(&rec.masked_image),
        };
        let result = match image {
            Ok(image) => family.compute(&FamilyInput {
                plane: b.plane,
                image,
                mask: &rec.mask,
            }),
            Err(e) => Err(Error::DegenerateImage(format!("transform failed: {e}"))),
        };
        let label = b.plane.map_or("-", TransformPlane::name);
        match result {
            Ok(v) if v.len() == expected => {
                for (k, x) in v.into_iter().enumerate() {
                    if x.is_finite() {
                        values.push(x);
                    } else {
                        warn!("{}: {label}.{} value {k} is {x}, using 0", rec.source_id, b.family);
                        values.push(0.0);
                    }
                }
            }
            Ok(v) => {
                return Err(Error::SchemaMismatch(format!(
                    "family {} produced {} values, expected {expected}",
                    b.family,
                    v.len()
                )))
            }
            Err(e) => {
                debug!("{}: {label}.{} set to 0: {e}", rec.source_id, b.family);
                values.extend(std::iter::repeat_n(0.0, expected));
            }
        }
    }
    Ok(FeatureVector::new(values))
}

/// [`extract_all`] over many grains in parallel; output order follows input.
pub fn extract_batch(records: &[GrainRecord], catalog: &FeatureCatalog) -> Result<Vec<FeatureVector>> {
    records.par_iter().map(|r| extract_all(r, catalog)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::BoundingBox;

    fn grain(size: usize, f: impl Fn(usize, usize) -> f64) -> GrainRecord {
        let c = (size as f64 - 1.0) / 2.0;
        let r = size as f64 * 0.4;
        let mask = BinaryMask::from_fn(size, size, |x, y| (x as f64 - c).hypot(y as f64 - c) <= r);
        GrainRecord::new("g", BoundingBox { x: 0, y: 0, w: size, h: size }, Image::from_fn(size, size, f), mask)
    }

    #[test]
    fn standard_catalog_layout() {
        let cat = FeatureCatalog::standard();
        assert_eq!(cat.len(), 470);
        assert_eq!(cat.entries.iter().filter(|e| e.family == "shape").count(), 25);
        assert_eq!(cat.entries[0].name, "raw.stats.mean");
        assert_eq!(cat.entries[469].name, "shape.fourier_descriptor_6");
        assert_eq!(cat, FeatureCatalog::standard());
    }

    #[test]
    fn vectors_match_catalog_and_are_deterministic() {
        let cat = FeatureCatalog::standard();
        let g = grain(48, |x, y| 0.3 + 0.2 * ((x as f64 * 0.4).sin() * (y as f64 * 0.3).cos()));
        let a = extract_all(&g, &cat).unwrap();
        let b = extract_all(&g, &cat).unwrap();
        assert_eq!(a.len(), 470);
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn tiny_grain_still_full_length() {
        let cat = FeatureCatalog::standard();
        let g = grain(6, |_, _| 0.5);
        let v = extract_all(&g, &cat).unwrap();
        assert_eq!(v.len(), 470);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn raw_stats_are_mask_restricted() {
        let cat = FeatureCatalog::standard();
        let g = grain(40, |_, _| 0.6);
        let v = extract_all(&g, &cat).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn unknown_family() {
        let blocks = vec![CatalogBlock {
            family: "nope".into(),
            plane: None,
        }];
        assert!(FeatureCatalog::from_blocks(FamilyRegistry::standard(), blocks).is_err());
    }
}
