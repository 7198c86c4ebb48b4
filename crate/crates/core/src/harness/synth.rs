//! Synthetic multi-focal fields with exact ground truth.
//!
//! A field is rendered once in focus (dark textured grains and small debris on
//! a bright background); plane `i` of the stack is that render blurred with
//! `sigma = blur_per_plane * |i - sharp_plane|` plus Gaussian sensor noise.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{save_mask_png, save_png, BinaryMask, FocalStack, Image};

use super::dataset::{Manifest, ManifestEntry};

/// Appearance of one grain type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeProfile {
    pub name: String,
    /// Semi-major axis range, pixels.
    pub radius: (f64, f64),
    /// Minor/major axis ratio range.
    pub elongation: (f64, f64),
    pub lobes: usize,
    /// Relative radial modulation of the outline.
    pub lobe_amplitude: f64,
    pub base_intensity: f64,
    /// Expected spots per 100 pixels of grain area.
    pub spot_density: f64,
    pub spot_radius: f64,
    /// Added to the base intensity inside a spot (may be negative).
    pub spot_contrast: f64,
    /// Stripe frequency in cycles per pixel; 0 disables stripes.
    pub stripe_frequency: f64,
    pub stripe_amplitude: f64,
    /// Darkening of the outer rim (the exine).
    pub rim_darkening: f64,
}

impl TypeProfile {
    /// The built-in type table. The first five are distinct shapes and
    /// textures; type 5 mixes traits of several of them and serves as an
    /// outlier type. Further types are drawn from a seeded stream.
    pub fn builtin(k: usize) -> TypeProfile {
        let base = |name: &str| TypeProfile {
            name: name.to_string(),
            radius: (20.0, 24.0),
            elongation: (0.9, 1.0),
            lobes: 0,
            lobe_amplitude: 0.0,
            base_intensity: 0.35,
            spot_density: 0.0,
            spot_radius: 1.5,
            spot_contrast: 0.0,
            stripe_frequency: 0.0,
            stripe_amplitude: 0.0,
            rim_darkening: 0.1,
        };
        match k {
            0 => TypeProfile {
                radius: (17.0, 21.0),
                elongation: (0.88, 1.0),
                base_intensity: 0.42,
                spot_density: 1.2,
                spot_radius: 1.2,
                spot_contrast: 0.18,
                ..base("type_a")
            },
            1 => TypeProfile {
                radius: (27.0, 32.0),
                elongation: (0.55, 0.68),
                base_intensity: 0.3,
                stripe_frequency: 0.18,
                stripe_amplitude: 0.1,
                ..base("type_b")
            },
            2 => TypeProfile {
                radius: (22.0, 26.0),
                elongation: (0.85, 0.97),
                lobes: 3,
                lobe_amplitude: 0.12,
                base_intensity: 0.25,
                spot_density: 0.5,
                spot_radius: 2.2,
                spot_contrast: -0.12,
                ..base("type_c")
            },
            3 => TypeProfile {
                radius: (31.0, 36.0),
                elongation: (0.82, 0.95),
                base_intensity: 0.5,
                stripe_frequency: 0.08,
                stripe_amplitude: 0.06,
                rim_darkening: 0.25,
                ..base("type_d")
            },
            4 => TypeProfile {
                radius: (19.0, 23.0),
                elongation: (0.62, 0.75),
                lobes: 5,
                lobe_amplitude: 0.06,
                base_intensity: 0.2,
                spot_density: 2.0,
                spot_radius: 1.0,
                spot_contrast: 0.22,
                ..base("type_e")
            },
            5 => TypeProfile {
                radius: (24.0, 28.0),
                elongation: (0.72, 0.82),
                lobes: 4,
                lobe_amplitude: 0.08,
                base_intensity: 0.38,
                spot_density: 0.8,
                spot_radius: 1.6,
                spot_contrast: -0.08,
                stripe_frequency: 0.12,
                stripe_amplitude: 0.08,
                rim_darkening: 0.18,
                ..base("type_f")
            },
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + k as u64);
                let r0 = rng.random_range(17.0..33.0);
                let e0 = rng.random_range(0.55..0.9);
                let striped = rng.random_bool(0.5);
                TypeProfile {
                    radius: (r0, r0 + 4.0),
                    elongation: (e0, e0 + 0.1),
                    lobes: if rng.random_bool(0.4) { rng.random_range(3..7) } else { 0 },
                    lobe_amplitude: rng.random_range(0.04..0.12),
                    base_intensity: rng.random_range(0.2..0.5),
                    spot_density: if striped { 0.0 } else { rng.random_range(0.4..2.0) },
                    spot_radius: rng.random_range(1.0..2.2),
                    spot_contrast: rng.random_range(-0.12..0.22),
                    stripe_frequency: if striped { rng.random_range(0.07..0.2) } else { 0.0 },
                    stripe_amplitude: rng.random_range(0.05..0.1),
                    rim_darkening: rng.random_range(0.05..0.25),
                    ..base(&format!("type_{k:02}"))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_types: usize,
    /// Extra types, not used for training, written as outlier categories.
    pub n_outlier_types: usize,
    pub grains_per_type: usize,
    pub planes: usize,
    /// `None` draws the sharp plane uniformly per stack.
    pub sharp_plane: Option<usize>,
    /// Blur sigma added per plane of distance from the sharp plane.
    pub blur_per_plane: f64,
    pub width: usize,
    pub height: usize,
    pub background: f64,
    /// Expected debris particles per field.
    pub debris_density: f64,
    /// Probability that a stack holds a second grain touching the first.
    pub cluster_probability: f64,
    pub noise_sigma: f64,
    /// Grain contrast falls off toward the outline as `(1 - (r/R)^2)^k`, the
    /// optical thickness of a translucent ellipsoid for `k = 0.5`; 0 gives
    /// uniform contrast up to a hard edge.
    pub thickness_exponent: f64,
    pub plane_step: f64,
    pub seed: u64,
    /// Overrides the built-in type table when non-empty.
    pub types: Vec<TypeProfile>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_types: 5,
            n_outlier_types: 1,
            grains_per_type: 40,
            planes: 31,
            sharp_plane: None,
            blur_per_plane: 0.4,
            width: 128,
            height: 128,
            background: 0.85,
            debris_density: 3.0,
            cluster_probability: 0.0,
            noise_sigma: 0.01,
            thickness_exponent: 0.0,
            plane_step: 1.0,
            seed: 0,
            types: Vec::new(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_types == 0 || self.grains_per_type == 0 || self.planes == 0 || self.width < 16 || self.height < 16 {
            return Err(Error::InvalidParameter("type, grain and plane counts must be positive".into()));
        }
        if let Some(s) = self.sharp_plane {
            if s >= self.planes {
                return Err(Error::InvalidParameter(format!("sharp plane {s} >= plane count {}", self.planes)));
            }
        }
        if !(self.blur_per_plane > 0.0) || self.noise_sigma < 0.0 || self.debris_density < 0.0 {
            return Err(Error::InvalidParameter("blur must be positive, noise and debris non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.cluster_probability) {
            return Err(Error::InvalidParameter("cluster probability must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn profile(&self, type_id: usize) -> TypeProfile {
        self.types.get(type_id).cloned().unwrap_or_else(|| TypeProfile::builtin(type_id))
    }
}

/// One grain as placed in a field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrainTruth {
    pub type_id: usize,
    pub cx: f64,
    pub cy: f64,
    /// Largest outline radius, pixels.
    pub extent: f64,
    #[serde(skip)]
    pub mask: Option<BinaryMask>,
}

/// A rendered field: the in-focus image and what is in it.
#[derive(Clone, Debug)]
pub struct SynthField {
    pub clean: Image,
    pub grains: Vec<GrainTruth>,
    /// Union of the grain masks.
    pub grain_mask: BinaryMask,
}

#[derive(Clone, Debug)]
pub struct SynthStack {
    pub stack: FocalStack,
    pub field: SynthField,
    pub sharp_plane: usize,
    pub label: String,
}

#[derive(Clone, Copy)]
struct Outline {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    rot: f64,
    lobes: usize,
    lobe_amp: f64,
    lobe_phase: f64,
}

impl Outline {
    fn draw(p: &TypeProfile, cx: f64, cy: f64, rng: &mut ChaCha8Rng) -> Self {
        let a = rng.random_range(p.radius.0..=p.radius.1);
        let e = rng.random_range(p.elongation.0..=p.elongation.1.min(1.0));
        Self {
            cx,
            cy,
            a,
            b: a * e,
            rot: rng.random_range(0.0..PI),
            lobes: p.lobes,
            lobe_amp: p.lobe_amplitude,
            lobe_phase: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn extent(&self) -> f64 {
        self.a * (1.0 + self.lobe_amp)
    }

    /// Local frame coordinates, and the outline radius along that direction.
    fn local(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.rot.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        let phi = v.atan2(u);
        let r_ell = self.a * self.b / ((self.b * phi.cos()).powi(2) + (self.a * phi.sin()).powi(2)).sqrt();
        let r = r_ell * (1.0 + self.lobe_amp * (self.lobes as f64 * phi + self.lobe_phase).cos());
        (u, v, r)
    }
}

fn render_grain(
    cfg: &SynthConfig,
    img: &mut [f64],
    mask: &mut BinaryMask,
    o: &Outline,
    p: &TypeProfile,
    rng: &mut ChaCha8Rng,
) {
    let (w, h) = (mask.width(), mask.height());
    let ext = o.extent().ceil() as isize + 1;
    let x0 = (o.cx as isize - ext).max(0) as usize;
    let x1 = ((o.cx as isize + ext) as usize).min(w - 1);
    let y0 = (o.cy as isize - ext).max(0) as usize;
    let y1 = ((o.cy as isize + ext) as usize).min(h - 1);

    let area = PI * o.a * o.b;
    let n_spots = if p.spot_density > 0.0 {
        Poisson::new(p.spot_density * area / 100.0).map_or(0.0, |d| d.sample(rng)) as usize
    } else {
        0
    };
    let spots: Vec<(f64, f64)> = (0..n_spots)
        .map(|_| {
            let t = rng.random_range(0.0..2.0 * PI);
            let rr = o.b * 0.85 * rng.random::<f64>().sqrt();
            (o.cx + rr * t.cos(), o.cy + rr * t.sin())
        })
        .collect();
    let stripe_dir = rng.random_range(0.0..PI);
    let stripe_phase = rng.random_range(0.0..2.0 * PI);
    let (sd, cd) = stripe_dir.sin_cos();

    for y in y0..=y1 {
        for x in x0..=x1 {
            let (fx, fy) = (x as f64, y as f64);
            let (u, v, r) = o.local(fx, fy);
            let rho = u.hypot(v);
            if rho > r {
                continue;
            }
            let mut val = p.base_intensity;
            if p.stripe_frequency > 0.0 {
                val += p.stripe_amplitude * (2.0 * PI * p.stripe_frequency * (cd * fx + sd * fy) + stripe_phase).sin();
            }
            for &(sx, sy) in &spots {
                if (fx - sx).hypot(fy - sy) <= p.spot_radius {
                    val += p.spot_contrast;
                }
            }
            let depth = r - rho;
            if depth < 3.0 {
                val -= p.rim_darkening * (1.0 - depth / 3.0);
            }
            let t = (rho / r).min(1.0);
            let thickness = if cfg.thickness_exponent > 0.0 {
                (1.0 - t * t).powf(cfg.thickness_exponent)
            } else {
                1.0
            };
            val = cfg.background - (cfg.background - val) * thickness;
            img[y * w + x] = val.clamp(0.02, 0.98);
            mask.set(x, y, true);
        }
    }
}

fn overlaps(o: &Outline, placed: &[(usize, Outline)], gap: f64) -> bool {
    placed
        .iter()
        .map(|(_, q)| q)
        .any(|q| (o.cx - q.cx).hypot(o.cy - q.cy) < o.extent() + q.extent() + gap)
}

/// Renders the in-focus field holding one grain per entry of `types`.
/// Grains are placed without overlap (a cluster partner is placed touching
/// its grain); debris particles stay clear of all grains.
pub fn render_field(cfg: &SynthConfig, types: &[usize], rng: &mut ChaCha8Rng) -> Result<SynthField> {
    let (w, h) = (cfg.width, cfg.height);
    let mut img = vec![cfg.background; w * h];
    let mut outlines: Vec<(usize, Outline)> = Vec::new();
    let place = |p: &TypeProfile, placed: &[(usize, Outline)], rng: &mut ChaCha8Rng| -> Result<Outline> {
        for _ in 0..500 {
            let probe = Outline::draw(p, 0.0, 0.0, rng);
            let margin = probe.extent() + 4.0;
            if 2.0 * margin >= w.min(h) as f64 {
                break;
            }
            let cx = rng.random_range(margin..w as f64 - margin);
            let cy = rng.random_range(margin..h as f64 - margin);
            let o = Outline { cx, cy, ..probe };
            if !overlaps(&o, placed, 6.0) {
                return Ok(o);
            }
        }
        Err(Error::InvalidParameter(format!(
            "cannot place a {} grain in a {w}x{h} field",
            p.name
        )))
    };

    for &t in types {
        let p = cfg.profile(t);
        let o = place(&p, &outlines, rng)?;
        outlines.push((t, o));
        if cfg.cluster_probability > 0.0 && rng.random_bool(cfg.cluster_probability) {
            let first = &outlines.last().expect("just pushed").1;
            let probe = Outline::draw(&p, 0.0, 0.0, rng);
            let ang = rng.random_range(0.0..2.0 * PI);
            let d = first.extent() * 0.9 + probe.extent() * 0.9;
            let (cx, cy) = (first.cx + d * ang.cos(), first.cy + d * ang.sin());
            let e = probe.extent() + 2.0;
            if cx > e && cy > e && cx < w as f64 - e && cy < h as f64 - e {
                outlines.push((t, Outline { cx, cy, ..probe }));
            }
        }
    }

    let mut grain_mask = BinaryMask::empty(w, h);
    let mut grains = Vec::with_capacity(outlines.len());
    for (t, o) in &outlines {
        let p = cfg.profile(*t);
        let mut m = BinaryMask::empty(w, h);
        render_grain(cfg, &mut img, &mut m, o, &p, rng);
        for (i, &b) in m.data().iter().enumerate() {
            if b {
                grain_mask.set(i % w, i / w, true);
            }
        }
        grains.push(GrainTruth {
            type_id: *t,
            cx: o.cx,
            cy: o.cy,
            extent: o.extent(),
            mask: Some(m),
        });
    }

    let n_debris = if cfg.debris_density > 0.0 {
        Poisson::new(cfg.debris_density).map_or(0.0, |d| d.sample(rng)) as usize
    } else {
        0
    };
    for _ in 0..n_debris {
        let r = rng.random_range(1.5..4.0);
        let (cx, cy) = (rng.random_range(r..w as f64 - r), rng.random_range(r..h as f64 - r));
        let clear = outlines
            .iter()
            .all(|(_, o)| (cx - o.cx).hypot(cy - o.cy) > o.extent() + r + 4.0);
        if !clear {
            continue;
        }
        let val = rng.random_range(0.2..0.5);
        let ri = r.ceil() as usize;
        for y in (cy as usize).saturating_sub(ri)..=((cy as usize + ri).min(h - 1)) {
            for x in (cx as usize).saturating_sub(ri)..=((cx as usize + ri).min(w - 1)) {
                if (x as f64 - cx).hypot(y as f64 - cy) <= r {
                    img[y * w + x] = val;
                }
            }
        }
    }
    Ok(SynthField {
        clean: Image::new(w, h, img)?,
        grains,
        grain_mask,
    })
}

/// Blurs the clean field into a stack around `sharp`.
pub fn stack_from_field(cfg: &SynthConfig, clean: &Image, sharp: usize, seed: u64) -> Result<FocalStack> {
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let planes: Vec<Image> = (0..cfg.planes)
        .map(|i| {
            let sigma = cfg.blur_per_plane * (i as f64 - sharp as f64).abs();
            let blurred = clean.gaussian_blur(sigma);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
            let data = blurred
                .data()
                .iter()
                .map(|&v| if cfg.noise_sigma > 0.0 { v + noise.sample(&mut rng) } else { v })
                .collect();
            Image::from_clamped(clean.width(), clean.height(), data)
        })
        .collect();
    FocalStack::new(planes, cfg.plane_step)
}

/// One stack of a field holding grains of the given types; the label is the
/// first type's name.
pub fn synth_field_stack(cfg: &SynthConfig, types: &[usize], seed: u64) -> Result<SynthStack> {
    cfg.validate()?;
    let first = *types
        .first()
        .ok_or_else(|| Error::InvalidParameter("a field needs at least one grain".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sharp = cfg.sharp_plane.unwrap_or_else(|| rng.random_range(0..cfg.planes));
    let field = render_field(cfg, types, &mut rng)?;
    let stack = stack_from_field(cfg, &field.clean, sharp, rng.random())?;
    Ok(SynthStack {
        stack,
        field,
        sharp_plane: sharp,
        label: cfg.profile(first).name,
    })
}

/// A stack centred on one grain of `type_id`.
pub fn synth_stack(cfg: &SynthConfig, type_id: usize, seed: u64) -> Result<SynthStack> {
    synth_field_stack(cfg, &[type_id], seed)
}

/// Seed of stack `index` of type `type_id` under the master seed.
pub fn stack_seed(master: u64, type_id: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(((type_id as u64) << 32) | index as u64);
    rng.random()
}

/// Ground truth written next to each stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackTruth {
    pub label: String,
    pub type_id: usize,
    pub sharp_plane: usize,
    pub grains: Vec<GrainTruth>,
}

/// Writes `<out>/<type>/<stack>/plane_<k>.png`, the grain masks, a
/// `truth.json` per stack and `manifest.json` at the root. Outlier types are
/// flagged in the manifest.
pub fn write_corpus(cfg: &SynthConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let total = cfg.n_types + cfg.n_outlier_types;
    let jobs: Vec<(usize, usize)> = (0..total)
        .flat_map(|t| (0..cfg.grains_per_type).map(move |i| (t, i)))
        .collect();
    use rayon::prelude::*;
    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .map(|&(t, i)| {
            let s = synth_stack(cfg, t, stack_seed(cfg.seed, t, i))?;
            let rel = format!("{}/stack_{i:03}", s.label);
            let dir = out.join(&rel);
            std::fs::create_dir_all(&dir)?;
            let digits = cfg.planes.to_string().len();
            for (k, p) in s.stack.planes().iter().enumerate() {
                save_png(p, dir.join(format!("plane_{k:0digits$}.png")))?;
            }
            for (g, gt) in s.field.grains.iter().enumerate() {
                if let Some(m) = &gt.mask {
                    save_mask_png(m, dir.join(format!("mask_{g}.png")))?;
                }
            }
            let truth = StackTruth {
                label: s.label.clone(),
                type_id: t,
                sharp_plane: s.sharp_plane,
                grains: s.field.grains.clone(),
            };
            std::fs::write(dir.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
            Ok(ManifestEntry {
                category: s.label,
                path: rel.into(),
                outlier: t >= cfg.n_types,
            })
        })
        .collect::<Result<_>>()?;
    let mut manifest = Manifest::new(entries);
    manifest.root = out.to_path_buf();
    manifest.save(&out.join("manifest.json"))?;
    std::fs::write(out.join("synth_config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(manifest)
}
