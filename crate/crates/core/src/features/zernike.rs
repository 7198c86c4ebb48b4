use std::f64::consts::PI;

use crate::image::Image;

pub const ZERNIKE_MAX_ORDER: usize = 8;

/// `(n, m)` with `n <= 8`, `0 <= m <= n`, `n - m` even, in order of `n` then `m`.
pub fn zernike_indices() -> Vec<(usize, usize)> {
    (0..=ZERNIKE_MAX_ORDER)
        .flat_map(|n| (0..=n).filter(move |m| (n - m) % 2 == 0).map(move |m| (n, m)))
        .collect()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

/// Coefficients of `R_nm(rho)` by ascending power of `rho`.
fn radial_coefficients(n: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n + 1];
    for s in 0..=(n - m) / 2 {
        let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
        c[n - 2 * s] = sign * factorial(n - s)
            / (factorial(s) * factorial((n + m) / 2 - s) * factorial((n - m) / 2 - s));
    }
    c
}

/// `|Z_nm|` over the disk inscribed in the image (centered, radius half the
/// smaller dimension). Each pixel contributes its value times the Zernike
/// polynomial integrated over the part of the pixel inside the disk, by
/// sub-sampling (finer on pixels crossing the rim).
pub fn zernike_magnitudes(img: &Image) -> Vec<f64> {
    let idx = zernike_indices();
    let coeffs: Vec<Vec<f64>> = idx.iter().map(|&(n, m)| radial_coefficients(n, m)).collect();
    let (w, h) = (img.width(), img.height());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let radius = w.min(h) as f64 / 2.0;
    let mut re = vec![0.0; idx.len()];
    let mut im = vec![0.0; idx.len()];
    let mut powers = [0.0; ZERNIKE_MAX_ORDER + 1];
    let mut harmonics = [(0.0, 0.0); ZERNIKE_MAX_ORDER + 1];

    for y in 0..h {
        for x in 0..w {
            let v = img.get(x, y);
            if v == 0.0 {
                continue;
            }
            let (px, py) = ((x as f64 - cx) / radius, (y as f64 - cy) / radius);
            let half = 0.5 / radius;
            let far = (px.abs() + half).hypot(py.abs() + half);
            let near = (px.abs() - half).max(0.0).hypot((py.abs() - half).max(0.0));
            if near >= 1.0 {
                continue;
            }
            let sub = if far <= 1.0 { 8 } else { 48 };
            let weight = v / (sub * sub) as f64;
            for sy in 0..sub {
                for sx in 0..sub {
                    let ox = ((sx as f64 + 0.5) / sub as f64 - 0.5) / radius;
                    let oy = ((sy as f64 + 0.5) / sub as f64 - 0.5) / radius;
                    let (qx, qy) = (px + ox, py + oy);
                    let rho = qx.hypot(qy);
                    if rho > 1.0 {
                        continue;
                    }
                    let (c1, s1) = if rho > 0.0 { (qx / rho, qy / rho) } else { (1.0, 0.0) };
                    powers[0] = 1.0;
                    harmonics[0] = (1.0, 0.0);
                    for k in 1..=ZERNIKE_MAX_ORDER {
                        powers[k] = powers[k - 1] * rho;
                        let (c, s) = harmonics[k - 1];
                        harmonics[k] = (c * c1 - s * s1, c * s1 + s * c1);
                    }
                    for (j, &(n, m)) in idx.iter().enumerate() {
                        let r: f64 = coeffs[j].iter().zip(&powers[..=n]).map(|(c, p)| c * p).sum();
                        // conjugate basis: exp(-i m theta)
                        re[j] += weight * r * harmonics[m].0;
                        im[j] -= weight * r * harmonics[m].1;
                    }
                }
            }
        }
    }
    let area = 1.0 / (radius * radius);
    idx.iter()
        .enumerate()
        .map(|(j, &(n, _))| (n as f64 + 1.0) / PI * area * re[j].hypot(im[j]))
        .collect()
}
