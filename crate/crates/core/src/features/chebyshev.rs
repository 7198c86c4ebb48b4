use crate::image::Image;

pub const CHEBYSHEV_ORDER: usize = 20;
pub const CHEBYSHEV_HIST_BINS: usize = 32;

/// `T_0..T_{order-1}` sampled at `n` grid points spread over `[-1, 1]`,
/// then orthonormalized on that grid (Gram-Schmidt, applied twice). Degrees
/// the grid cannot resolve (`k >= n`) become zero vectors.
fn basis(n: usize, order: usize) -> Vec<Vec<f64>> {
    let xs: Vec<f64> = (0..n)
        .map(|i| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 })
        .collect();
    let mut t: Vec<Vec<f64>> = vec![vec![1.0; n]];
    if order > 1 {
        t.push(xs.clone());
    }
    for k in 2..order {
        let row = (0..n).map(|i| 2.0 * xs[i] * t[k - 1][i] - t[k - 2][i]).collect();
        t.push(row);
    }
    t.truncate(order);

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(order);
    for (k, mut v) in t.into_iter().enumerate() {
        let original = dot(&v, &v).sqrt();
        if k >= n {
            q.push(vec![0.0; n]);
            continue;
        }
        for _ in 0..2 {
            for u in &q {
                let c = dot(&v, u);
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= 1e-10 * original {
            q.push(vec![0.0; n]);
        } else {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

/// Coefficients of the image in the separable orthonormal basis
/// `q_m(y) q_n(x)`; returns `order x order` values, row `m`, column `n`.
pub fn chebyshev_coefficients(img: &Image, order: usize) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let qx = basis(w, order);
    let qy = basis(h, order);
    // rows first: rp[y][n] = sum_x I(x, y) q_n(x)
    let rp: Vec<Vec<f64>> = (0..h)
        .map(|y| {
            (0..order)
                .map(|n| (0..w).map(|x| img.get(x, y) * qx[n][x]).sum())
                .collect()
        })
        .collect();
    let mut out = vec![0.0; order * order];
    for m in 0..order {
        for n in 0..order {
            out[m * order + n] = (0..h).map(|y| rp[y][n] * qy[m][y]).sum();
        }
    }
    out
}

/// Normalized 32-bin histogram of the order-20 coefficients over their own
/// range. All coefficients land in bin 0 when the range is empty.
pub fn chebyshev_coeff_histogram(img: &Image) -> Vec<f64> {
    let c = chebyshev_coefficients(img, CHEBYSHEV_ORDER);
    let (lo, hi) = c
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut h = vec![0.0; CHEBYSHEV_HIST_BINS];
    let span = hi - lo;
    for &v in &c {
        let b = if span > 0.0 {
            (((v - lo) / span * CHEBYSHEV_HIST_BINS as f64) as usize).min(CHEBYSHEV_HIST_BINS - 1)
        } else {
            0
        };
        h[b] += 1.0;
    }
    let n = c.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}
