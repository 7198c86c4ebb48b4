use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::Image;

/// Edge fraction, mean and std of the Sobel magnitude, 4-bin orientation
/// histogram (gradient directions 0, 45, 90, 135 degrees, modulo 180) over
/// edge pixels, and the largest bin share. Edge pixels have a magnitude
/// above 10% of the maximum; a flat image gives all zeros.
pub fn edge_statistics(img: &Image) -> Result<[f64; 8]> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall(format!("edge statistics need 3x3, got {w}x{h}")));
    }
    let mut mags = Vec::with_capacity(w * h);
    let mut angles = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            mags.push(gx.hypot(gy));
            angles.push(gy.atan2(gx).rem_euclid(PI));
        }
    }
    let n = mags.len() as f64;
    let mean = mags.iter().sum::<f64>() / n;
    let std = (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n).sqrt();
    let max = mags.iter().cloned().fold(0.0, f64::max);
    let mut bins = [0.0; 4];
    let mut edges = 0.0;
    if max > 0.0 {
        for (&m, &a) in mags.iter().zip(&angles) {
            if m > 0.1 * max {
                bins[((a / (PI / 4.0)).round() as usize) % 4] += 1.0;
                edges += 1.0;
            }
        }
    }
    if edges > 0.0 {
        bins.iter_mut().for_each(|b| *b /= edges);
    }
    let homogeneity = bins.iter().cloned().fold(0.0, f64::max);
    Ok([edges / n, mean, std, bins[0], bins[1], bins[2], bins[3], homogeneity])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_all_zero() {
        assert_eq!(edge_statistics(&Image::filled(6, 6, 0.3)).unwrap(), [0.0; 8]);
    }

    #[test]
    fn vertical_step_has_horizontal_gradients() {
        let img = Image::from_fn(20, 20, |x, _| if x < 10 { 0.2 } else { 0.8 });
        let e = edge_statistics(&img).unwrap();
        assert!(e[3] >= 0.95);
        assert_eq!(e[7], e[3]);
    }

    #[test]
    fn noise_is_finite() {
        let img = Image::from_fn(30, 30, |x, y| {
            let h = ((x * 31 + y) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            (h >> 11) as f64 / (1u64 << 53) as f64
        });
        assert!(edge_statistics(&img).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn too_small() {
        assert!(edge_statistics(&Image::filled(2, 9, 0.0)).is_err());
    }
}
