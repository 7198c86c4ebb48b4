//! Coarse-to-fine grain extraction: clustering and morphology find each
//! grain, a GVF snake refines its outline, and every grain is emitted as a
//! cropped sub-image with its mask.

pub mod coarse;
pub mod gvf;
pub mod snake;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{crop, BinaryMask, BoundingBox, Image};

pub use coarse::{extract_components, fill_holes, kmeans_binary, morph_open_close, preprocess};
pub use gvf::{gvf_field, VectorField};
pub use snake::{rasterize, snake_refine, subsample_contour, trace_boundary, Contour};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseParams {
    pub clahe_tiles: usize,
    pub clahe_clip: f64,
    pub median_radius: usize,
    /// Disk radius for the opening/closing pass.
    pub struct_radius: usize,
    pub min_area: usize,
    /// `None` means 40% of the image area.
    pub max_area: Option<usize>,
}

impl Default for CoarseParams {
    fn default() -> Self {
        Self {
            clahe_tiles: 8,
            clahe_clip: 0.01,
            median_radius: 2,
            struct_radius: 5,
            min_area: 500,
            max_area: None,
        }
    }
}

impl CoarseParams {
    pub fn resolved_max_area(&self, width: usize, height: usize) -> usize {
        self.max_area
            .unwrap_or_else(|| (0.4 * (width * height) as f64) as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clahe_tiles == 0 || self.clahe_clip <= 0.0 || self.struct_radius == 0 || self.min_area == 0 {
            return Err(Error::InvalidParameter("coarse parameters must be positive".into()));
        }
        if let Some(max) = self.max_area {
            if max <= self.min_area {
                return Err(Error::InvalidParameter("min_area must be below max_area".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnakeParams {
    /// Keep one initial contour point out of this many.
    pub subsample_stride: usize,
    pub iterations: usize,
    pub gvf_mu: f64,
    pub gvf_iterations: usize,
    /// Tension weight.
    pub alpha: f64,
    /// Thin-plate (rigidity) weight.
    pub beta: f64,
    /// Outward inflation weight.
    pub balloon: f64,
    pub time_step: f64,
    /// Gaussian sigma applied before the edge map.
    pub edge_sigma: f64,
    /// Target distance between snake points, in pixels.
    pub point_spacing: f64,
    pub resample_every: usize,
}

impl Default for SnakeParams {
    fn default() -> Self {
        Self {
            subsample_stride: 20,
            iterations: 100,
            gvf_mu: 0.2,
            gvf_iterations: 80,
            alpha: 0.1,
            beta: 0.5,
            balloon: 0.05,
            time_step: 0.5,
            edge_sigma: 1.0,
            point_spacing: 1.0,
            resample_every: 10,
        }
    }
}

impl SnakeParams {
    pub fn validate(&self) -> Result<()> {
        if self.subsample_stride == 0 || self.iterations == 0 {
            return Err(Error::InvalidParameter("stride and iterations must be >= 1".into()));
        }
        if self.gvf_mu <= 0.0 || self.time_step <= 0.0 || self.point_spacing <= 0.0 {
            return Err(Error::InvalidParameter(
                "gvf_mu, time_step and point_spacing must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One extracted grain.
#[derive(Clone, Debug, PartialEq)]
pub struct GrainRecord {
    pub source_id: String,
    pub bbox: BoundingBox,
    pub image: Image,
    pub mask: BinaryMask,
    /// `image` with background pixels set to 0.
    pub masked_image: Image,
}

impl GrainRecord {
    pub fn new(source_id: impl Into<String>, bbox: BoundingBox, image: Image, mask: BinaryMask) -> Self {
        let masked_image = image.masked(&mask);
        Self {
            source_id: source_id.into(),
            bbox,
            image,
            mask,
            masked_image,
        }
    }
}

/// A refined grain together with the coarse-stage mask it started from
/// (both in box coordinates).
#[derive(Clone, Debug)]
pub struct SegmentedGrain {
    pub record: GrainRecord,
    pub coarse_mask: BinaryMask,
    pub contour: Contour,
}

/// Coarse stage only: the cleaned binary mask of the whole field.
pub fn coarse_mask(pre: &Image, cp: &CoarseParams) -> Result<BinaryMask> {
    let km = kmeans_binary(pre)?;
    Ok(morph_open_close(&fill_holes(&km), cp.struct_radius))
}

/// Full pipeline; see [`segment_grains_detailed`].
pub fn segment_grains(
    img: &Image,
    source_id: &str,
    cp: &CoarseParams,
    sp: &SnakeParams,
) -> Result<Vec<GrainRecord>> {
    Ok(segment_grains_detailed(img, source_id, cp, sp)?
        .into_iter()
        .map(|g| g.record)
        .collect())
}

/// Preprocess, cluster, clean up, split into components, then refine each
/// component with a snake initialized on its subsampled perimeter. The snake
/// runs on the preprocessed image. Grains whose refinement fails are skipped
/// with a warning. A field with a single intensity yields no grains.
pub fn segment_grains_detailed(
    img: &Image,
    source_id: &str,
    cp: &CoarseParams,
    sp: &SnakeParams,
) -> Result<Vec<SegmentedGrain>> {
    cp.validate()?;
    sp.validate()?;
    let pre = preprocess(img, cp)?;
    let mask = match coarse_mask(&pre, cp) {
        Ok(m) => m,
        Err(Error::DegenerateClustering) => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    let components = extract_components(&mask, cp);
    if components.is_empty() {
        return Ok(Vec::new());
    }
    let field = gvf_field(&pre, sp);

    let results: Vec<Option<SegmentedGrain>> = components
        .into_par_iter()
        .enumerate()
        .map(|(k, (bbox, cmask))| {
            match refine_component(img, &field, &bbox, &cmask, source_id, sp) {
                Ok(g) => Some(g),
                Err(e) => {
                    warn!("{source_id}: grain {k} at {bbox:?} skipped: {e}");
                    None
                }
            }
        })
        .collect();
    Ok(results.into_iter().flatten().collect())
}

fn refine_component(
    img: &Image,
    field: &VectorField,
    bbox: &BoundingBox,
    cmask: &BinaryMask,
    source_id: &str,
    sp: &SnakeParams,
) -> Result<SegmentedGrain> {
    let init = trace_boundary(cmask).translated(bbox.x as f64, bbox.y as f64);
    let init = subsample_contour(&init, sp.subsample_stride);
    let refined = snake::refine_in_field(field, &init, sp)?;
    let local = refined.translated(-(bbox.x as f64), -(bbox.y as f64));
    let raster = rasterize(&local, bbox.w, bbox.h);
    let mask = fill_holes(&coarse::largest_component(&raster));
    if mask.area() == 0 {
        return Err(Error::EmptyMask);
    }
    let sub = crop(img, bbox)?;
    Ok(SegmentedGrain {
        record: GrainRecord::new(source_id, *bbox, sub, mask),
        coarse_mask: cmask.clone(),
        contour: refined,
    })
}
