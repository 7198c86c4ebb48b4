use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::Image;

pub const TAMURA_MIN_SIZE: usize = 32;
pub const ORIENTATION_BINS: usize = 16;
const MAX_SCALE: u32 = 5;

/// Coarseness, contrast and directionality.
pub fn tamura_features(img: &Image) -> Result<[f64; 3]> {
    if img.width() < TAMURA_MIN_SIZE || img.height() < TAMURA_MIN_SIZE {
        return Err(Error::ImageTooSmall(format!(
            "tamura needs {TAMURA_MIN_SIZE}x{TAMURA_MIN_SIZE}, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok([coarseness(img), contrast(img), directionality(img)])
}

struct Integral {
    w: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(img: &Image) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut s = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += img.get(x, y);
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        Self { w: w + 1, s }
    }

    /// Mean over `[x0, x1) x [y0, y1)`.
    fn mean(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        let at = |x: usize, y: usize| self.s[y * self.w + x];
        (at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0)) / ((x1 - x0) * (y1 - y0)) as f64
    }
}

/// Mean over pixels of the best window size `2^k`, `k = 1..=5`, where the
/// best size maximizes the difference between opposite neighbouring
/// windows. Only window sizes that fit around a pixel are considered.
pub fn coarseness(img: &Image) -> f64 {
    let (w, h) = (img.width(), img.height());
    let ii = Integral::new(img);
    let (mut total, mut count) = (0.0, 0usize);
    for y in 0..h {
        for x in 0..w {
            let mut best = (0.0, 0u32);
            for k in 1..=MAX_SCALE {
                let size = 1usize << k;
                if x < size || y < size || x + size > w || y + size > h {
                    break;
                }
                let d = size / 2;
                let win = |cx: usize, cy: usize| ii.mean(cx - d, cy - d, cx + d, cy + d);
                let eh = (win(x + d, y) - win(x - d, y)).abs();
                let ev = (win(x, y + d) - win(x, y - d)).abs();
                let e = eh.max(ev);
                if best.1 == 0 || e > best.0 {
                    best = (e, k);
                }
            }
            if best.1 > 0 {
                total += (1u64 << best.1) as f64;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `sigma / kurtosis^(1/4)`, 0 for a flat image.
pub fn contrast(img: &Image) -> f64 {
    let n = img.len() as f64;
    let mean = img.data().iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &v in img.data() {
        let d2 = (v - mean).powi(2);
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if m2 <= 1e-24 {
        return 0.0;
    }
    let alpha4 = m4 / (m2 * m2);
    m2.sqrt() / alpha4.powf(0.25)
}

/// Histogram of edge orientations in `[0, pi)` over pixels whose Prewitt
/// magnitude reaches 10% of the maximum, normalized to sum 1 (all zeros for
/// a flat image).
pub fn orientation_histogram(img: &Image) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut grads = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let gh = ((p(1, -1) + p(1, 0) + p(1, 1)) - (p(-1, -1) + p(-1, 0) + p(-1, 1))) / 3.0;
            let gv = ((p(-1, 1) + p(0, 1) + p(1, 1)) - (p(-1, -1) + p(0, -1) + p(1, -1))) / 3.0;
            grads.push((0.5 * (gh.abs() + gv.abs()), gv.atan2(gh).rem_euclid(PI)));
        }
    }
    let max = grads.iter().map(|g| g.0).fold(0.0, f64::max);
    let mut hist = vec![0.0; ORIENTATION_BINS];
    if max <= 0.0 {
        return hist;
    }
    let mut n = 0.0;
    for &(mag, theta) in &grads {
        if mag >= 0.1 * max {
            let b = ((theta / PI * ORIENTATION_BINS as f64).round() as usize) % ORIENTATION_BINS;
            hist[b] += 1.0;
            n += 1.0;
        }
    }
    hist.iter_mut().for_each(|v| *v /= n);
    hist
}

/// `1 - r * sum (phi - phi_peak)^2 H(phi)` around the dominant orientation,
/// with circular distances on `[0, pi)` and `r` chosen so the result lies in
/// `[0, 1]`. 0 for a flat image.
pub fn directionality(img: &Image) -> f64 {
    let hist = orientation_histogram(img);
    if hist.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let peak = hist
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > hist[best] { i } else { best });
    let step = PI / ORIENTATION_BINS as f64;
    let spread: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let d = i.abs_diff(peak);
            let d = d.min(ORIENTATION_BINS - d) as f64 * step;
            d * d * v
        })
        .sum();
    1.0 - spread / (PI / 2.0).powi(2)
}
