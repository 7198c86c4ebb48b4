use crate::error::{Error, Result};
use crate::image::Image;

pub const HISTOGRAM_BINS: [usize; 4] = [3, 5, 7, 9];

/// Mean, standard deviation, skewness, excess kurtosis and median of the
/// image's pixels.
pub fn pixel_statistics(img: &Image) -> Result<[f64; 5]> {
    pixel_statistics_of(img.data())
}

/// Same as [`pixel_statistics`] over an arbitrary sample. Skewness and
/// kurtosis are 0 when the variance is 0.
pub fn pixel_statistics_of(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(Error::EmptyMask);
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok([values[0], 0.0, 0.0, 0.0, values[0]]);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = m2.sqrt();
    let (skew, kurt) = if m2 > 1e-24 {
        (m3 / (m2 * std), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    Ok([mean, std, skew, kurt, median(values)])
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Normalized histogram over `[0, 1]`; the value 1.0 falls in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    if values.is_empty() {
        return h;
    }
    for &v in values {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    let n = values.len() as f64;
    h.iter_mut().for_each(|c| *c /= n);
    h
}

/// 3, 5, 7 and 9 bin histograms, concatenated.
pub fn multiscale_histograms(img: &Image) -> Vec<f64> {
    HISTOGRAM_BINS
        .iter()
        .flat_map(|&b| histogram(img.data(), b))
        .collect()
}
