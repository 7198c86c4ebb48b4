use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::segmentation::coarse::label_components;
use crate::segmentation::trace_boundary;

pub const SHAPE_NAMES: [&str; 25] = [
    "area",
    "perimeter",
    "equivalent_diameter",
    "major_axis",
    "minor_axis",
    "eccentricity",
    "orientation",
    "solidity",
    "extent",
    "convex_area",
    "circularity",
    "aspect_ratio",
    "hu_1",
    "hu_2",
    "hu_3",
    "hu_4",
    "hu_5",
    "hu_6",
    "hu_7",
    "fourier_descriptor_1",
    "fourier_descriptor_2",
    "fourier_descriptor_3",
    "fourier_descriptor_4",
    "fourier_descriptor_5",
    "fourier_descriptor_6",
];

const DESCRIPTOR_SAMPLES: usize = 64;

/// The 25 shape features of a single-component mask, in [`SHAPE_NAMES`] order.
/// Pixels are treated as unit squares for moments and the convex hull; the
/// perimeter is the length of the 8-connected boundary chain through pixel
/// centers. Orientation is 0 when the second moments are isotropic.
pub fn shape_features(mask: &BinaryMask) -> Result<[f64; 25]> {
    let comps = label_components(mask);
    match comps.len() {
        0 => return Err(Error::EmptyMask),
        1 => {}
        n => return Err(Error::MultipleComponents(n)),
    }
    let pixels: Vec<(f64, f64)> = comps[0].pixels.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let area = pixels.len() as f64;
    let (cx, cy) = centroid(&pixels);

    let m = |p: u32, q: u32| -> f64 {
        pixels
            .iter()
            .map(|&(x, y)| square_moment(x - cx, p) * square_moment(y - cy, q))
            .sum()
    };
    let (mu20, mu02, mu11) = (m(2, 0) / area, m(0, 2) / area, m(1, 1) / area);
    let common = ((mu20 - mu02).powi(2) + 4.0 * mu11 * mu11).sqrt();
    let l1 = 0.5 * (mu20 + mu02 + common);
    let l2 = 0.5 * (mu20 + mu02 - common).max(0.0);
    let major = 4.0 * l1.sqrt();
    let minor = 4.0 * l2.sqrt();
    let eccentricity = if l1 > 0.0 { (1.0 - l2 / l1).max(0.0).sqrt() } else { 0.0 };
    let orientation = if common > 1e-9 * l1 {
        0.5 * (2.0 * mu11).atan2(mu20 - mu02)
    } else {
        0.0
    };
    let aspect = if minor > 0.0 { major / minor } else { 0.0 };

    let contour = trace_boundary(mask);
    let perimeter = contour.perimeter();
    let circularity = if perimeter > 0.0 {
        4.0 * PI * area / (perimeter * perimeter)
    } else {
        0.0
    };
    let equivalent_diameter = (4.0 * area / PI).sqrt();

    let convex_area = hull_area(&pixels);
    let solidity = area / convex_area;
    let bbox = mask.bounding_box().expect("non-empty mask");
    let extent = area / (bbox.w * bbox.h) as f64;

    let hu = hu_moments(&m, area);
    let fd = fourier_descriptors(&contour.points, (cx, cy));

    let mut out = [0.0; 25];
    out[..12].copy_from_slice(&[
        area,
        perimeter,
        equivalent_diameter,
        major,
        minor,
        eccentricity,
        orientation,
        solidity,
        extent,
        convex_area,
        circularity,
        aspect,
    ]);
    out[12..19].copy_from_slice(&hu);
    out[19..].copy_from_slice(&fd);
    Ok(out)
}

fn centroid(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    (sx / n, sy / n)
}

/// `integral of t^p` over `[c - 1/2, c + 1/2]`.
fn square_moment(c: f64, p: u32) -> f64 {
    let e = p as i32 + 1;
    ((c + 0.5).powi(e) - (c - 0.5).powi(e)) / e as f64
}

fn hu_moments(m: &dyn Fn(u32, u32) -> f64, area: f64) -> [f64; 7] {
    let eta = |p: u32, q: u32| m(p, q) / area.powf(1.0 + (p + q) as f64 / 2.0);
    let (n20, n02, n11) = (eta(2, 0), eta(0, 2), eta(1, 1));
    let (n30, n03, n21, n12) = (eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2));
    let a = n30 + n12;
    let b = n21 + n03;
    [
        n20 + n02,
        (n20 - n02).powi(2) + 4.0 * n11 * n11,
        (n30 - 3.0 * n12).powi(2) + (3.0 * n21 - n03).powi(2),
        a * a + b * b,
        (n30 - 3.0 * n12) * a * (a * a - 3.0 * b * b) + (3.0 * n21 - n03) * b * (3.0 * a * a - b * b),
        (n20 - n02) * (a * a - b * b) + 4.0 * n11 * a * b,
        (3.0 * n21 - n03) * a * (a * a - 3.0 * b * b) - (n30 - 3.0 * n12) * b * (3.0 * a * a - b * b),
    ]
}

/// Area of the convex hull of all pixel corners.
fn hull_area(pixels: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = pixels
        .iter()
        .flat_map(|&(x, y)| [(x - 0.5, y - 0.5), (x + 0.5, y - 0.5), (x - 0.5, y + 0.5), (x + 0.5, y + 0.5)])
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        .abs()
}

/// `|F_k| / |F_0|`, `k = 1..=6`, of the centroid distance along the boundary
/// resampled to 64 points by arc length. Zeros for degenerate boundaries.
fn fourier_descriptors(boundary: &[(f64, f64)], center: (f64, f64)) -> [f64; 6] {
    let mut out = [0.0; 6];
    if boundary.len() < 3 {
        return out;
    }
    let resampled = crate::segmentation::Contour::new(boundary.to_vec()).resampled(DESCRIPTOR_SAMPLES);
    let mut buf: Vec<Complex<f64>> = resampled
        .points
        .iter()
        .map(|&(x, y)| Complex::new((x - center.0).hypot(y - center.1), 0.0))
        .collect();
    let n = buf.len();
    FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
    let dc = buf[0].norm();
    if dc <= 0.0 {
        return out;
    }
    for k in 1..=6.min(n - 1) {
        out[k - 1] = buf[k].norm() / dc;
    }
    out
}
