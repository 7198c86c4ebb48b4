use crate::image::Image;

pub const GRAY_LEVELS: usize = 32;

pub const HARALICK_NAMES: [&str; 13] = [
    "asm",
    "contrast",
    "correlation",
    "variance",
    "idm",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_correlation_1",
    "info_correlation_2",
];

/// Pixel offsets for 0, 45, 90 and 135 degrees (y grows downward).
pub const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (1, -1), (0, -1), (-1, -1)];

pub fn quantize(img: &Image, levels: usize) -> Vec<usize> {
    img.data()
        .iter()
        .map(|&v| ((v * levels as f64) as usize).min(levels - 1))
        .collect()
}

/// Symmetric, normalized co-occurrence matrix at distance 1 along `dir`,
/// `levels x levels` row-major. All zeros if the image has no pixel pairs.
pub fn glcm(img: &Image, dir: (isize, isize), levels: usize) -> Vec<f64> {
    let q = quantize(img, levels);
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut p = vec![0.0; levels * levels];
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = (x + dir.0, y + dir.1);
            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                continue;
            }
            let a = q[(y * w + x) as usize];
            let b = q[(ny * w + nx) as usize];
            p[a * levels + b] += 1.0;
            p[b * levels + a] += 1.0;
            total += 2.0;
        }
    }
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    p
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// The 13 statistics of one symmetric normalized GLCM, in [`HARALICK_NAMES`] order.
/// Correlation and the information correlations are 0 when undefined.
pub fn haralick_statistics(p: &[f64], levels: usize) -> [f64; 13] {
    let l = levels;
    let mut px = vec![0.0; l];
    let mut p_sum = vec![0.0; 2 * l - 1];
    let mut p_diff = vec![0.0; l];
    let (mut asm, mut contrast, mut idm, mut hxy, mut ij) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let v = p[i * l + j];
            if v == 0.0 {
                continue;
            }
            px[i] += v;
            p_sum[i + j] += v;
            p_diff[i.abs_diff(j)] += v;
            let d = i as f64 - j as f64;
            asm += v * v;
            contrast += d * d * v;
            idm += v / (1.0 + d * d);
            hxy -= plogp(v);
            ij += (i * j) as f64 * v;
        }
    }
    let mu: f64 = px.iter().enumerate().map(|(i, v)| i as f64 * v).sum();
    let var: f64 = px.iter().enumerate().map(|(i, v)| (i as f64 - mu).powi(2) * v).sum();
    let correlation = if var > 1e-15 { (ij - mu * mu) / var } else { 0.0 };

    let sum_avg: f64 = p_sum.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let sum_var: f64 = p_sum.iter().enumerate().map(|(k, v)| (k as f64 - sum_avg).powi(2) * v).sum();
    let sum_ent: f64 = -p_sum.iter().map(|&v| plogp(v)).sum::<f64>();
    let diff_mean: f64 = p_diff.iter().enumerate().map(|(k, v)| k as f64 * v).sum();
    let diff_var: f64 = p_diff.iter().enumerate().map(|(k, v)| (k as f64 - diff_mean).powi(2) * v).sum();
    let diff_ent: f64 = -p_diff.iter().map(|&v| plogp(v)).sum::<f64>();

    // marginals are equal for a symmetric matrix
    let hx: f64 = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let (mut hxy1, mut hxy2) = (0.0, 0.0);
    for i in 0..l {
        for j in 0..l {
            let m = px[i] * px[j];
            if m > 0.0 {
                hxy1 -= p[i * l + j] * m.ln();
                hxy2 -= m * m.ln();
            }
        }
    }
    let imc1 = if hx > 1e-15 { (hxy - hxy1) / hx } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - hxy)).exp()).max(0.0).sqrt();

    [
        asm, contrast, correlation, var, idm, sum_avg, sum_var, sum_ent, hxy, diff_var, diff_ent, imc1, imc2,
    ]
}

/// Mean (first 13) and range (last 13) of the statistics over the four
/// directions, on 32 gray levels.
pub fn haralick_glcm(img: &Image) -> Vec<f64> {
    let per_dir: Vec<[f64; 13]> = DIRECTIONS
        .iter()
        .map(|&d| haralick_statistics(&glcm(img, d, GRAY_LEVELS), GRAY_LEVELS))
        .collect();
    let mut out = vec![0.0; 26];
    for k in 0..13 {
        let vals = per_dir.iter().map(|s| s[k]);
        let (lo, hi) = vals
            .clone()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        out[k] = vals.sum::<f64>() / 4.0;
        out[13 + k] = hi - lo;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image() {
        let h = haralick_glcm(&Image::filled(10, 10, 0.4));
        assert!((h[0] - 1.0).abs() < 1e-12);
        assert_eq!(h[8], 0.0);
        assert_eq!(h[2], 0.0);
        assert!(h.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn checkerboard_contrast() {
        let img = Image::from_fn(12, 12, |x, y| ((x + y) % 2) as f64);
        let p = glcm(&img, DIRECTIONS[0], GRAY_LEVELS);
        assert_eq!(p[31], 0.5);
        assert_eq!(p[31 * 32], 0.5);
        let s = haralick_statistics(&p, GRAY_LEVELS);
        assert!((s[1] - 961.0).abs() < 1e-9);
        // diagonal neighbours share a level
        let diag = haralick_statistics(&glcm(&img, DIRECTIONS[1], GRAY_LEVELS), GRAY_LEVELS);
        assert_eq!(diag[1], 0.0);
    }

    #[test]
    fn glcm_is_symmetric_and_normalized() {
        let img = Image::from_fn(9, 7, |x, y| ((x * 5 + y * 3) % 8) as f64 / 7.0);
        for d in DIRECTIONS {
            let p = glcm(&img, d, GRAY_LEVELS);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..32 {
                for j in 0..32 {
                    assert_eq!(p[i * 32 + j], p[j * 32 + i]);
                }
            }
        }
    }

    #[test]
    fn rotation_keeps_means() {
        let img = Image::from_fn(15, 11, |x, y| ((x * x + 3 * y + x * y) % 13) as f64 / 12.0);
        let a = haralick_glcm(&img);
        let b = haralick_glcm(&img.rotate90());
        for k in 0..13 {
            assert!((a[k] - b[k]).abs() < 1e-9, "{}: {} vs {}", HARALICK_NAMES[k], a[k], b[k]);
        }
    }
}
