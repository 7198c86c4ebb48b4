//! Coarse grain extraction: contrast enhancement, denoising, two-class
//! intensity clustering and binary morphology.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, BoundingBox, Image};

use super::CoarseParams;

const CLAHE_BINS: usize = 256;

/// CLAHE followed by a square median filter.
pub fn preprocess(img: &Image, p: &CoarseParams) -> Result<Image> {
    let eq = clahe(img, p.clahe_tiles, p.clahe_clip)?;
    Ok(median_filter(&eq, p.median_radius))
}

/// Contrast-limited adaptive histogram equalization with bilinear blending of
/// the per-tile mappings. The clip limit follows the usual normalized form:
/// `clip` in `[0, 1]` interpolates between a flat histogram and no clipping.
pub fn clahe(img: &Image, tiles: usize, clip: f64) -> Result<Image> {
    let (w, h) = (img.width(), img.height());
    if tiles == 0 {
        return Err(Error::InvalidParameter("clahe_tiles must be positive".into()));
    }
    if w < 2 * tiles || h < 2 * tiles {
        return Err(Error::ImageTooSmall(format!(
            "{w}x{h} image cannot hold a {tiles}x{tiles} CLAHE grid"
        )));
    }
    let xs: Vec<usize> = (0..=tiles).map(|k| k * w / tiles).collect();
    let ys: Vec<usize> = (0..=tiles).map(|k| k * h / tiles).collect();
    let bin_of = |v: f64| ((v * CLAHE_BINS as f64) as usize).min(CLAHE_BINS - 1);

    // maps[ty][tx][bin] -> equalized intensity
    let mut maps = vec![vec![[0.0f64; CLAHE_BINS]; tiles]; tiles];
    for ty in 0..tiles {
        for tx in 0..tiles {
            let mut hist = [0.0f64; CLAHE_BINS];
            for y in ys[ty]..ys[ty + 1] {
                for x in xs[tx]..xs[tx + 1] {
                    hist[bin_of(img.get(x, y))] += 1.0;
                }
            }
            let n = ((xs[tx + 1] - xs[tx]) * (ys[ty + 1] - ys[ty])) as f64;
            let min_clip = (n / CLAHE_BINS as f64).ceil();
            let limit = min_clip + (clip.clamp(0.0, 1.0) * (n - min_clip)).round();
            let mut excess = 0.0;
            for c in hist.iter_mut() {
                if *c > limit {
                    excess += *c - limit;
                    *c = limit;
                }
            }
            let share = excess / CLAHE_BINS as f64;
            let mut cdf = 0.0;
            for (b, c) in hist.iter().enumerate() {
                cdf += c + share;
                maps[ty][tx][b] = (cdf / n).min(1.0);
            }
        }
    }

    let centers = |bounds: &[usize]| -> Vec<f64> {
        bounds
            .windows(2)
            .map(|s| (s[0] + s[1] - 1) as f64 / 2.0)
            .collect()
    };
    let cx = centers(&xs);
    let cy = centers(&ys);
    // Index of the tile center at or left of `pos`, plus the blend weight toward the next one.
    let locate = |c: &[f64], pos: f64| -> (usize, usize, f64) {
        if pos <= c[0] {
            return (0, 0, 0.0);
        }
        if pos >= c[c.len() - 1] {
            return (c.len() - 1, c.len() - 1, 0.0);
        }
        let i = c.iter().rposition(|&v| v <= pos).unwrap_or(0);
        let t = (pos - c[i]) / (c[i + 1] - c[i]);
        (i, i + 1, t)
    };

    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1, ty) = locate(&cy, y as f64);
        for x in 0..w {
            let (x0, x1, tx) = locate(&cx, x as f64);
            let b = bin_of(img.get(x, y));
            let top = maps[y0][x0][b] * (1.0 - tx) + maps[y0][x1][b] * tx;
            let bottom = maps[y1][x0][b] * (1.0 - tx) + maps[y1][x1][b] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    Ok(Image::from_clamped(w, h, out))
}

/// Median over a `(2r+1)^2` window with replicated borders.
pub fn median_filter(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let r = radius as isize;
    let (w, h) = (img.width(), img.height());
    let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            window.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    window.push(img.get_clamped(x + dx, y + dy));
                }
            }
            let mid = window.len() / 2;
            let (_, m, _) = window.select_nth_unstable_by(mid, f64::total_cmp);
            out.push(*m);
        }
    }
    Image::from_clamped(w, h, out)
}

/// Two-cluster Lloyd iteration on intensities, initialized at the min and max.
/// The foreground is the cluster holding fewer image-border pixels.
pub fn kmeans_binary(img: &Image) -> Result<BinaryMask> {
    let (lo, hi) = img.min_max();
    if img.is_empty() || lo == hi {
        return Err(Error::DegenerateClustering);
    }
    let (mut c0, mut c1) = (lo, hi);
    for _ in 0..100 {
        let split = 0.5 * (c0 + c1);
        let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0usize, 0.0, 0usize);
        for &v in img.data() {
            if v <= split {
                s0 += v;
                n0 += 1;
            } else {
                s1 += v;
                n1 += 1;
            }
        }
        let nc0 = if n0 > 0 { s0 / n0 as f64 } else { c0 };
        let nc1 = if n1 > 0 { s1 / n1 as f64 } else { c1 };
        let shift = (nc0 - c0).abs().max((nc1 - c1).abs());
        c0 = nc0;
        c1 = nc1;
        if shift < 1e-6 {
            break;
        }
    }
    let split = 0.5 * (c0 + c1);
    let (w, h) = (img.width(), img.height());
    let mut border_low = 0usize;
    let mut border_total = 0usize;
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x + 1 == w || y + 1 == h {
                border_total += 1;
                border_low += (img.get(x, y) <= split) as usize;
            }
        }
    }
    // Ties go to the darker cluster.
    let foreground_low = 2 * border_low <= border_total;
    BinaryMask::new(
        w,
        h,
        img.data()
            .iter()
            .map(|&v| (v <= split) == foreground_low)
            .collect(),
    )
}

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// Background regions not 4-connected to the image border become foreground.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x + 1 == w || y + 1 == h) && !mask.get(x, y) {
                outside[y * w + x] = true;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in N4 {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let i = ny as usize * w + nx as usize;
            if !outside[i] && !mask.data()[i] {
                outside[i] = true;
                queue.push_back((nx as usize, ny as usize));
            }
        }
    }
    BinaryMask::from_fn(w, h, |x, y| !outside[y * w + x])
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Erosion treats pixels beyond the border as foreground so objects touching
/// the edge are not eaten from outside.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let se = disk_offsets(radius);
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        se.iter().all(|&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            nx < 0 || ny < 0 || nx >= w || ny >= h || mask.get(nx as usize, ny as usize)
        })
    })
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let se = disk_offsets(radius);
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        se.iter()
            .any(|&(dx, dy)| mask.get_or_false(x as isize + dx, y as isize + dy))
    })
}

pub fn open(mask: &BinaryMask, radius: usize) -> BinaryMask {
    dilate(&erode(mask, radius), radius)
}

pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

/// Opening then closing with a disk of the given radius.
pub fn morph_open_close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    close(&open(mask, radius), radius)
}

/// One labelled 4-connected component.
#[derive(Clone, Debug)]
pub struct Component {
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BoundingBox,
}

/// 4-connected components in raster order of their first pixel.
pub fn label_components(mask: &BinaryMask) -> Vec<Component> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut comps = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !mask.get(sx, sy) || seen[sy * w + sx] {
                continue;
            }
            seen[sy * w + sx] = true;
            let mut queue = VecDeque::from([(sx, sy)]);
            let mut pixels = Vec::new();
            let (mut x0, mut y0, mut x1, mut y1) = (sx, sy, sx, sy);
            while let Some((x, y)) = queue.pop_front() {
                pixels.push((x, y));
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
                for (dx, dy) in N4 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask.get(nx, ny) && !seen[ny * w + nx] {
                        seen[ny * w + nx] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            comps.push(Component {
                pixels,
                bbox: BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1),
            });
        }
    }
    comps
}

/// Keeps only the largest 4-connected component (earliest wins ties).
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let comps = label_components(mask);
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    if let Some(best) = comps
        .iter()
        .enumerate()
        .max_by_key(|(i, c)| (c.pixels.len(), std::cmp::Reverse(*i)))
        .map(|(_, c)| c)
    {
        for &(x, y) in &best.pixels {
            out.set(x, y, true);
        }
    }
    out
}

/// Share of a component's perimeter pixels that lie on the image border.
fn border_perimeter_share(c: &Component, mask: &BinaryMask) -> f64 {
    let (w, h) = (mask.width(), mask.height());
    let (mut perimeter, mut on_border) = (0usize, 0usize);
    for &(x, y) in &c.pixels {
        let at_edge = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
        let touches_bg = N4
            .iter()
            .any(|&(dx, dy)| !mask.get_or_false(x as isize + dx, y as isize + dy));
        if at_edge || touches_bg {
            perimeter += 1;
            on_border += at_edge as usize;
        }
    }
    if perimeter == 0 {
        0.0
    } else {
        on_border as f64 / perimeter as f64
    }
}

/// One entry per 4-connected component whose area lies in `[min_area, max_area]`
/// and whose perimeter is at least 80% interior. Each box is the component's
/// bounding box grown by a 10% margin; each mask is cropped to that box and
/// holds only its own component.
pub fn extract_components(mask: &BinaryMask, p: &CoarseParams) -> Vec<(BoundingBox, BinaryMask)> {
    let (w, h) = (mask.width(), mask.height());
    let max_area = p.resolved_max_area(w, h);
    label_components(mask)
        .into_iter()
        .filter(|c| (p.min_area..=max_area).contains(&c.pixels.len()))
        .filter(|c| border_perimeter_share(c, mask) <= 0.2)
        .map(|c| {
            let b = c.bbox.dilated(0.1, w, h);
            let mut m = BinaryMask::empty(b.w, b.h);
            for &(x, y) in &c.pixels {
                m.set(x - b.x, y - b.y, true);
            }
            (b, m)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_mask(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| {
            (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r
        })
    }

    fn otsu_threshold(img: &Image) -> f64 {
        let mut hist = [0usize; 256];
        for &v in img.data() {
            hist[((v * 256.0) as usize).min(255)] += 1;
        }
        let n = img.len() as f64;
        let total: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
        let (mut w0, mut s0, mut best, mut best_t) = (0.0, 0.0, -1.0, 0);
        for (t, &c) in hist.iter().enumerate() {
            w0 += c as f64;
            s0 += t as f64 * c as f64;
            let w1 = n - w0;
            if w0 == 0.0 || w1 == 0.0 {
                continue;
            }
            let between = w0 * w1 * (s0 / w0 - (total - s0) / w1).powi(2);
            if between > best {
                best = between;
                best_t = t;
            }
        }
        (best_t as f64 + 1.0) / 256.0
    }

    #[test]
    fn uniform_preprocess_stays_uniform() {
        let img = Image::filled(64, 64, 0.6);
        let out = preprocess(&img, &CoarseParams::default()).unwrap();
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v| (v - first).abs() < 1e-12));
    }

    #[test]
    fn preprocess_rejects_tiny_images() {
        assert!(matches!(
            preprocess(&Image::filled(10, 10, 0.5), &CoarseParams::default()),
            Err(Error::ImageTooSmall(_))
        ));
    }

    #[test]
    fn median_removes_salt_and_pepper() {
        let clean = Image::filled(64, 64, 0.5);
        let noisy = Image::from_fn(64, 64, |x, y| {
            let h = (x * 7919 + y * 104729) % 97;
            match h {
                0..=2 => 0.0,
                3..=5 => 1.0,
                _ => 0.5,
            }
        });
        let p = CoarseParams::default();
        let reference = preprocess(&clean, &p).unwrap();
        let out = preprocess(&noisy, &p).unwrap();
        let restored = out
            .data()
            .iter()
            .zip(reference.data())
            .filter(|(a, b)| (*a - *b).abs() < 0.03)
            .count();
        assert!(restored as f64 >= 0.99 * out.len() as f64, "{restored}");
    }

    #[test]
    fn clahe_widens_low_contrast_ramp() {
        let img = Image::from_fn(64, 64, |x, _| 0.45 + 0.1 * x as f64 / 63.0);
        let out = preprocess(&img, &CoarseParams::default()).unwrap();
        let (lo, hi) = img.min_max();
        let (olo, ohi) = out.min_max();
        assert!(ohi - olo > hi - lo, "{} vs {}", ohi - olo, hi - lo);
    }

    #[test]
    fn kmeans_exact_on_two_values() {
        let disk = disk_mask(40, 40, 20.0, 20.0, 8.0);
        let img = Image::from_fn(40, 40, |x, y| if disk.get(x, y) { 0.2 } else { 0.8 });
        assert_eq!(kmeans_binary(&img).unwrap(), disk);
        // polarity does not matter
        let bright = Image::from_fn(40, 40, |x, y| if disk.get(x, y) { 0.9 } else { 0.1 });
        assert_eq!(kmeans_binary(&bright).unwrap(), disk);
    }

    #[test]
    fn kmeans_degenerate() {
        assert!(matches!(
            kmeans_binary(&Image::filled(5, 5, 0.3)),
            Err(Error::DegenerateClustering)
        ));
    }

    #[test]
    fn kmeans_agrees_with_otsu_under_noise() {
        use rand::{Rng, SeedableRng};
        use rand_distr::Normal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let disk = disk_mask(80, 80, 40.0, 40.0, 18.0);
        let img = Image::from_fn(80, 80, |_, _| 0.0);
        let data: Vec<f64> = (0..80 * 80)
            .map(|i| {
                let base = if disk.data()[i] { 0.3 } else { 0.9 };
                base + rng.sample(noise)
            })
            .collect();
        let img = Image::from_clamped(img.width(), img.height(), data);
        let km = kmeans_binary(&img).unwrap();
        let t = otsu_threshold(&img);
        let agree = img
            .data()
            .iter()
            .zip(km.data())
            .filter(|(&v, &m)| (v < t) == m)
            .count();
        assert!(agree as f64 >= 0.99 * img.len() as f64);
    }

    #[test]
    fn fill_holes_cases() {
        let annulus = BinaryMask::from_fn(30, 30, |x, y| {
            let d2 = (x as f64 - 15.0).powi(2) + (y as f64 - 15.0).powi(2);
            (25.0..=100.0).contains(&d2)
        });
        let solid = disk_mask(30, 30, 15.0, 15.0, 10.0);
        assert_eq!(fill_holes(&annulus), solid);
        assert_eq!(fill_holes(&solid), solid);

        // a square ring whose hole leaks to the border through a 1-pixel channel
        let mut ring = BinaryMask::from_fn(20, 20, |x, y| {
            (4..=14).contains(&x) && (4..=14).contains(&y) && !((6..=12).contains(&x) && (6..=12).contains(&y))
        });
        for y in 0..=5 {
            ring.set(9, y, false);
        }
        let filled = fill_holes(&ring);
        assert!(!filled.get(9, 9));
        assert_eq!(filled, ring);
    }

    #[test]
    fn opening_removes_speck_and_bridge() {
        let mut speck = BinaryMask::empty(15, 15);
        speck.set(7, 7, true);
        assert_eq!(morph_open_close(&speck, 1).area(), 0);

        let mut blobs = BinaryMask::from_fn(60, 30, |x, y| {
            let a = (x as f64 - 15.0).powi(2) + (y as f64 - 15.0).powi(2) <= 64.0;
            let b = (x as f64 - 45.0).powi(2) + (y as f64 - 15.0).powi(2) <= 64.0;
            a || b
        });
        for x in 15..=45 {
            blobs.set(x, 15, true);
        }
        assert_eq!(label_components(&blobs).len(), 1);
        let opened = morph_open_close(&blobs, 2);
        assert_eq!(label_components(&opened).len(), 2);
    }

    #[test]
    fn open_close_preserves_disk_area() {
        let disk = disk_mask(70, 70, 35.0, 35.0, 20.0);
        let out = morph_open_close(&disk, 3);
        let ratio = out.area() as f64 / disk.area() as f64;
        assert!((ratio - 1.0).abs() <= 0.05, "{ratio}");
    }

    #[test]
    fn morphology_monotonicity() {
        let m = BinaryMask::from_fn(40, 40, |x, y| ((x * 31 + y * 17) % 11) < 6 || (10..30).contains(&x));
        assert!(open(&m, 2).is_subset_of(&m));
        assert!(m.is_subset_of(&close(&m, 2)));
        assert!(m.is_subset_of(&fill_holes(&m)));
    }

    #[test]
    fn components_filtering() {
        let p = CoarseParams {
            min_area: 50,
            ..CoarseParams::default()
        };
        let a = disk_mask(120, 60, 30.0, 30.0, 12.0);
        let b = disk_mask(120, 60, 85.0, 30.0, 10.0);
        let mut m = BinaryMask::from_fn(120, 60, |x, y| a.get(x, y) || b.get(x, y));
        m.set(60, 5, true); // speck
        let comps = extract_components(&m, &p);
        assert_eq!(comps.len(), 2);
        let (box_a, mask_a) = &comps[0];
        assert!(box_a.x <= 18 && box_a.x + box_a.w >= 43);
        assert_eq!(mask_a.area(), a.area());
        assert!(extract_components(&BinaryMask::empty(50, 50), &p).is_empty());
    }

    #[test]
    fn border_grains_need_interior_perimeter() {
        let p = CoarseParams {
            min_area: 20,
            ..CoarseParams::default()
        };
        // half disk cut by the left border: a large share of its perimeter is on the edge
        let cut = disk_mask(60, 60, 0.0, 30.0, 15.0);
        assert!(extract_components(&cut, &p).is_empty());
        // barely touching the border is fine
        let touch = disk_mask(60, 60, 14.0, 30.0, 14.0);
        assert_eq!(extract_components(&touch, &p).len(), 1);
    }
}
